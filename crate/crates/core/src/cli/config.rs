//! Flat JSON configuration with dotted keys, e.g.
//!
//! ```json
//! { "seed": 3, "env.variant": "random_velocity", "plan.rho": 2.0 }
//! ```
//!
//! Missing keys take their defaults, unknown keys are rejected, and
//! `key=value` overrides are applied on top of the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::agent::Experiment;
use crate::env::Variant;
use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::genmodel::{ModelDims, TrainConfig};
use crate::planner::{PlanConfig, SelectionMode};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    #[serde(rename = "env.variant")]
    pub variant: Variant,
    #[serde(rename = "env.obs_noise_std")]
    pub obs_noise_std: f64,
    #[serde(rename = "env.force")]
    pub force: f64,
    #[serde(rename = "env.start_position")]
    pub start_position: f64,
    #[serde(rename = "env.max_steps")]
    pub max_steps: usize,
    #[serde(rename = "bootstrap.episodes")]
    pub bootstrap_episodes: usize,
    #[serde(rename = "bootstrap.steps")]
    pub bootstrap_steps: usize,
    #[serde(rename = "model.state_dim")]
    pub state_dim: usize,
    #[serde(rename = "model.hidden")]
    pub hidden: usize,
    #[serde(rename = "train.learning_rate")]
    pub learning_rate: f64,
    #[serde(rename = "train.epochs")]
    pub epochs: usize,
    #[serde(rename = "train.minibatch_episodes")]
    pub minibatch_episodes: usize,
    #[serde(rename = "train.shuffle")]
    pub shuffle: bool,
    #[serde(rename = "preferred.std")]
    pub preferred_std: f64,
    #[serde(rename = "preferred.sample_final")]
    pub sample_preferred: bool,
    #[serde(rename = "plan.k")]
    pub k: usize,
    #[serde(rename = "plan.d")]
    pub d: usize,
    #[serde(rename = "plan.n")]
    pub n: usize,
    #[serde(rename = "plan.gamma")]
    pub gamma: f64,
    #[serde(rename = "plan.rho")]
    pub rho: f64,
    #[serde(rename = "plan.selection")]
    pub selection: SelectionMode,
}

impl Default for Config {
    fn default() -> Self {
        Config::from_experiment(&Experiment::new(Variant::ZeroVelocity, 0))
    }
}

impl Config {
    fn from_experiment(exp: &Experiment) -> Self {
        let plan = PlanConfig::new(DiagGaussian::isotropic(vec![0.0], 1.0).expect("valid placeholder"));
        Config {
            seed: exp.master_seed,
            variant: exp.variant,
            obs_noise_std: exp.obs_noise_std,
            force: exp.force,
            start_position: exp.start_position,
            max_steps: exp.run_max_steps,
            bootstrap_episodes: exp.bootstrap_episodes,
            bootstrap_steps: exp.bootstrap_steps,
            state_dim: exp.dims.state_dim,
            hidden: exp.dims.hidden,
            learning_rate: exp.train.learning_rate,
            epochs: exp.train.epochs,
            minibatch_episodes: exp.train.minibatch_episodes,
            shuffle: exp.train.shuffle,
            preferred_std: exp.preferred_std,
            sample_preferred: exp.sample_preferred,
            k: plan.k,
            d: plan.d,
            n: plan.n,
            gamma: plan.gamma,
            rho: plan.rho,
            selection: plan.selection,
        }
    }

    /// Defaults, then the optional file, then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let mut map = match serde_json::to_value(Config::default()).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        };
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: Map<String, Value> = serde_json::from_str(&text).map_err(|e| Error::Format {
                path: path.into(),
                message: e.to_string(),
            })?;
            merge(&mut map, file)?;
        }
        let mut extra = Map::new();
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            extra.insert(key.trim().to_string(), value);
        }
        merge(&mut map, extra)?;
        let cfg: Config = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let exp = self.experiment();
        exp.eval_env().validate()?;
        exp.bootstrap_env().validate()?;
        exp.train.validate()?;
        if self.bootstrap_episodes == 0 {
            return Err(Error::Config("bootstrap.episodes must be >= 1".into()));
        }
        if !(self.preferred_std > 0.0) {
            return Err(Error::Config("preferred.std must be > 0".into()));
        }
        let pref = DiagGaussian::isotropic(vec![0.0; self.state_dim], self.preferred_std)?;
        self.plan_config(pref).validate(self.state_dim)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn experiment(&self) -> Experiment {
        let mut exp = Experiment::new(self.variant, self.seed);
        exp.obs_noise_std = self.obs_noise_std;
        exp.force = self.force;
        exp.start_position = self.start_position;
        exp.run_max_steps = self.max_steps;
        exp.bootstrap_episodes = self.bootstrap_episodes;
        exp.bootstrap_steps = self.bootstrap_steps;
        exp.dims = ModelDims {
            state_dim: self.state_dim,
            hidden: self.hidden,
            ..ModelDims::default()
        };
        exp.train = TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            minibatch_episodes: self.minibatch_episodes,
            shuffle: self.shuffle,
            ..exp.train
        };
        exp.preferred_std = self.preferred_std;
        exp.sample_preferred = self.sample_preferred;
        exp
    }

    pub fn plan_config(&self, preferred: DiagGaussian) -> PlanConfig {
        PlanConfig {
            k: self.k,
            d: self.d,
            n: self.n,
            gamma: self.gamma,
            rho: self.rho,
            preferred,
            selection: self.selection,
        }
    }

    /// Seed of the single plan evaluated by the `plan` command.
    pub fn plan_seed(&self) -> u64 {
        derive_seed(self.seed, &[9])
    }
}

fn merge(base: &mut Map<String, Value>, extra: Map<String, Value>) -> Result<()> {
    for (k, v) in extra {
        if !base.contains_key(&k) {
            return Err(Error::Config(format!("unknown config key {k:?}")));
        }
        base.insert(k, v);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_match_experiment() {
        let cfg = Config::load(None, &[]).unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.experiment(), Experiment::new(Variant::ZeroVelocity, 0));
        assert_eq!((cfg.k, cfg.d, cfg.n), (30, 3, 100));
    }

    #[test]
    fn overrides_take_precedence_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"plan.rho": 2.0, "seed": 4}"#).unwrap();
        let cfg = Config::load(Some(&path), &["plan.rho=0.5".into(), "env.variant=random_velocity".into()]).unwrap();
        assert_eq!(cfg.rho, 0.5);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.variant, Variant::RandomVelocity);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let unknown = Config::load(None, &["plan.bogus=1".into()]).unwrap_err();
        assert_eq!(unknown.exit_code(), 2);
        assert!(Config::load(None, &["plan.rho=0".into()]).is_err());
        assert!(Config::load(None, &["train.epochs=oops".into()]).is_err());
        assert!(Config::load(None, &["no_equals".into()]).is_err());
        let missing = Config::load(Some(Path::new("/nonexistent/cfg.json")), &[]).unwrap_err();
        assert_eq!(missing.exit_code(), 4);
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.rho = 2.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}

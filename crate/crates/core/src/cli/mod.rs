//! Command-line front end. Every command works inside one output directory:
//!
//! | command     | reads                         | writes                                        |
//! |-------------|-------------------------------|-----------------------------------------------|
//! | `bootstrap` |                               | `episodes/episode_NNNN.csv`                   |
//! | `train`     | `episodes/`                   | `checkpoint.json`, `loss.csv`                 |
//! | `demo`      | `checkpoint.json`             | `demo.csv`, `preferred.json`                  |
//! | `plan`      | `checkpoint.json`             | `branches.csv`, `trajectories.csv`, `plan.svg`|
//! | `run`       | `checkpoint.json`             | `runs/run_SEED.csv`, `runs/run_SEED.json`     |
//! | `report`    | all of the above, if present  | nothing (prints a summary)                    |
//!
//! `plan` and `run` use `preferred.json` when present and otherwise rebuild
//! the preferred state from the scripted demonstration.

pub mod artifacts;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::run_active_inference;
use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::genmodel::{Checkpoint, GenerativeModel};

use artifacts::{
    branches_csv, branches_svg, create_dir, episode_csv, episode_files, loss_csv, read_episode, read_file, run_csv,
    to_json, trajectories_csv, write_file, Manifest, RunSummary, Stamp,
};
pub use config::Config;

#[derive(Debug, Parser)]
#[command(name = "aif", about = "Deep active inference agent for Mountain Car")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file with flat dotted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory shared by all commands.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Collect random-agent episodes.
    Bootstrap,
    /// Train the generative model on the collected episodes.
    Train,
    /// Record the scripted demonstration and the preferred state.
    Demo,
    /// Evaluate the full policy tree from the start position.
    Plan {
        /// Skip the SVG panel plot.
        #[arg(long)]
        no_svg: bool,
    },
    /// Closed-loop active inference episodes.
    Run {
        /// Comma-separated run seeds; defaults to the master seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Print a summary of the artifacts in the output directory.
    Report,
}

impl Cli {
    pub fn config(&self) -> Result<Config> {
        let mut overrides = self.common.overrides.clone();
        if let Some(seed) = self.common.seed {
            overrides.push(format!("seed={seed}"));
        }
        Config::load(self.common.config.as_deref(), &overrides)
    }
}

/// Runs a parsed invocation.
pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.config()?;
    let out = &cli.common.out;
    match &cli.command {
        Command::Bootstrap => cmd_bootstrap(&cfg, out),
        Command::Train => cmd_train(&cfg, out).map(|_| ()),
        Command::Demo => cmd_demo(&cfg, out).map(|_| ()),
        Command::Plan { no_svg } => cmd_plan(&cfg, out, !no_svg),
        Command::Run { seeds } => {
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds.clone() };
            cmd_run(&cfg, out, &seeds).map(|_| ())
        }
        Command::Report => {
            print!("{}", cmd_report(out)?);
            Ok(())
        }
    }
}

fn stamp(cfg: &Config) -> Stamp {
    Stamp {
        seed: cfg.seed,
        config_hash: cfg.hash(),
    }
}

pub fn cmd_bootstrap(cfg: &Config, out: &Path) -> Result<()> {
    let st = stamp(cfg);
    let episodes = cfg.experiment().bootstrap()?;
    let dir = out.join("episodes");
    create_dir(&dir)?;
    let mut files = Vec::with_capacity(episodes.len());
    for (i, ep) in episodes.iter().enumerate() {
        let name = format!("episode_{i:04}.csv");
        write_file(&dir.join(&name), &episode_csv(&st, ep)?)?;
        files.push(format!("episodes/{name}"));
    }
    Manifest::record(out, "bootstrap", &st, files)
}

pub fn cmd_train(cfg: &Config, out: &Path) -> Result<GenerativeModel> {
    let st = stamp(cfg);
    let dir = out.join("episodes");
    let data = episode_files(&dir)?
        .iter()
        .map(|p| read_episode(p))
        .collect::<Result<Vec<_>>>()?;
    if data.is_empty() {
        return Err(Error::Config(format!("no episodes in {}", dir.display())));
    }
    let (model, report) = cfg.experiment().train_model(&data)?;
    let mut ckpt = Checkpoint::from_model(&model, cfg.seed, Some(cfg.variant));
    ckpt.meta.config_hash = Some(st.config_hash.clone());
    ckpt.save(&out.join("checkpoint.json"))?;
    write_file(&out.join("loss.csv"), &loss_csv(&st, &report.epoch_losses)?)?;
    Manifest::record(out, "train", &st, vec!["checkpoint.json".into(), "loss.csv".into()])?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferredRecord {
    pub seed: u64,
    pub config_hash: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn load_model(out: &Path) -> Result<GenerativeModel> {
    let path = out.join("checkpoint.json");
    if !path.exists() {
        return Err(Error::Config(format!(
            "missing checkpoint {}; run `train` first",
            path.display()
        )));
    }
    Checkpoint::load(&path)?.to_model()
}

pub fn cmd_demo(cfg: &Config, out: &Path) -> Result<DiagGaussian> {
    let st = stamp(cfg);
    let model = load_model(out)?;
    let exp = cfg.experiment();
    let demo = exp.demonstration()?;
    let pref = exp.preferred(&model, &demo)?;
    write_file(&out.join("demo.csv"), &episode_csv(&st, &demo)?)?;
    let record = PreferredRecord {
        seed: st.seed,
        config_hash: st.config_hash.clone(),
        mean: pref.mean().to_vec(),
        std: pref.std().to_vec(),
    };
    write_file(&out.join("preferred.json"), to_json(&record).as_bytes())?;
    Manifest::record(out, "demo", &st, vec!["demo.csv".into(), "preferred.json".into()])?;
    Ok(pref)
}

fn preferred_for(cfg: &Config, out: &Path, model: &GenerativeModel) -> Result<DiagGaussian> {
    let path = out.join("preferred.json");
    if path.exists() {
        let rec: PreferredRecord = serde_json::from_str(&read_file(&path)?).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        return DiagGaussian::new(rec.mean, rec.std);
    }
    let exp = cfg.experiment();
    exp.preferred(model, &exp.demonstration()?)
}

pub fn cmd_plan(cfg: &Config, out: &Path, svg: bool) -> Result<()> {
    let st = stamp(cfg);
    let model = load_model(out)?;
    let plan = cfg.plan_config(preferred_for(cfg, out, &model)?);
    let (_, tree) = cfg.experiment().plan_from_start(&model, &plan, cfg.plan_seed())?;
    let branches = tree.branches();
    write_file(&out.join("branches.csv"), &branches_csv(&st, &branches)?)?;
    write_file(&out.join("trajectories.csv"), &trajectories_csv(&st, &branches)?)?;
    let mut files = vec!["branches.csv".to_string(), "trajectories.csv".to_string()];
    if svg {
        let goal = cfg.experiment().eval_env().goal_position;
        write_file(&out.join("plan.svg"), branches_svg(&st, &branches, goal).as_bytes())?;
        files.push("plan.svg".into());
    }
    Manifest::record(out, "plan", &st, files)
}

/// Runs every seed concurrently and writes one CSV and one summary per seed.
pub fn cmd_run(cfg: &Config, out: &Path, seeds: &[u64]) -> Result<Vec<RunSummary>> {
    let st = stamp(cfg);
    let model = load_model(out)?;
    let plan = cfg.plan_config(preferred_for(cfg, out, &model)?);
    let env = cfg.experiment().eval_env();
    let dir = out.join("runs");
    create_dir(&dir)?;
    let summaries = seeds
        .par_iter()
        .map(|&seed| {
            let rec = run_active_inference(&model, &env, &plan, seed)?;
            write_file(&dir.join(format!("run_{seed}.csv")), &run_csv(&st, &rec)?)?;
            let summary = RunSummary {
                goal_reached: rec.goal_reached,
                steps: rec.steps_taken,
                seed,
                first_action: rec.first_action().map(|a| a.symbol().to_string()),
                config_hash: st.config_hash.clone(),
            };
            write_file(&dir.join(format!("run_{seed}.json")), to_json(&summary).as_bytes())?;
            Ok(summary)
        })
        .collect::<Result<Vec<_>>>()?;
    let files = seeds
        .iter()
        .flat_map(|s| [format!("runs/run_{s}.csv"), format!("runs/run_{s}.json")])
        .collect();
    Manifest::record(out, "run", &st, files)?;
    Ok(summaries)
}

/// Text summary of whatever artifacts exist in `out`.
pub fn cmd_report(out: &Path) -> Result<String> {
    let mut lines = Vec::new();
    let loss = out.join("loss.csv");
    if loss.exists() {
        let values = read_column(&loss, "loss")?;
        if let (Some(first), Some(last)) = (values.first(), values.last()) {
            lines.push(format!(
                "training: {} epochs, loss {first:.4} -> {last:.4} (ratio {:.3})",
                values.len(),
                last / first
            ));
        }
    }
    let branches = out.join("branches.csv");
    if branches.exists() {
        let mut rd = csv_reader(&branches)?;
        lines.push("branches: policy kl_total entropy_total g_value selected".into());
        for rec in rd.records() {
            let rec = rec.map_err(|e| format_error(&branches, e))?;
            lines.push(format!(
                "  {} {} {} {} {}",
                &rec[1],
                short(&rec[2]),
                short(&rec[3]),
                short(&rec[4]),
                &rec[5]
            ));
        }
    }
    let runs = out.join("runs");
    if runs.exists() {
        let mut summaries = Vec::new();
        for entry in std::fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))? {
            let path = entry.map_err(|e| Error::io(&runs, e))?.path();
            if path.extension().is_some_and(|x| x == "json") {
                let s: RunSummary = serde_json::from_str(&read_file(&path)?).map_err(|e| Error::Format {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                summaries.push(s);
            }
        }
        summaries.sort_by_key(|s| s.seed);
        let goals = summaries.iter().filter(|s| s.goal_reached).count();
        lines.push(format!("runs: {goals}/{} reached the goal", summaries.len()));
        for s in &summaries {
            lines.push(format!(
                "  seed {} goal={} steps={} first={}",
                s.seed,
                s.goal_reached,
                s.steps,
                s.first_action.as_deref().unwrap_or("-")
            ));
        }
    }
    if lines.is_empty() {
        lines.push(format!("no artifacts in {}", out.display()));
    }
    Ok(lines.join("\n") + "\n")
}

fn short(field: &str) -> String {
    field.parse::<f64>().map_or_else(|_| field.to_string(), |v| format!("{v:.2}"))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| format_error(path, e))
}

fn format_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.into(),
        message: e.to_string(),
    }
}

fn read_column(path: &Path, name: &str) -> Result<Vec<f64>> {
    let mut rd = csv_reader(path)?;
    let idx = rd
        .headers()
        .map_err(|e| format_error(path, e))?
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Format {
            path: path.into(),
            message: format!("missing column {name}"),
        })?;
    rd.records()
        .map(|r| {
            let r = r.map_err(|e| format_error(path, e))?;
            r[idx].parse().map_err(|_| Error::Format {
                path: path.into(),
                message: format!("bad number {:?}", &r[idx]),
            })
        })
        .collect()
}

//! JSON checkpoint: `{meta, params: {transition, posterior, likelihood}}`,
//! each network a list of layers with flat row-major weights.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GaussianHeadNet, GenerativeModel, ModelDims};
use crate::env::Variant;
use crate::error::{Error, Result};
use crate::math::{Layer, Matrix, NetParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub action_count: usize,
    pub hidden: usize,
    pub seed: u64,
    pub variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamsRecord {
    transition: Vec<LayerRecord>,
    posterior: Vec<LayerRecord>,
    likelihood: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    params: ParamsRecord,
}

fn to_records(net: &NetParams) -> Vec<LayerRecord> {
    net.layers()
        .iter()
        .map(|l| LayerRecord {
            rows: l.weights.rows(),
            cols: l.weights.cols(),
            weights: l.weights.as_slice().to_vec(),
            bias: l.bias.clone(),
        })
        .collect()
}

fn from_records(records: &[LayerRecord]) -> Result<NetParams> {
    let layers = records
        .iter()
        .map(|r| Layer::new(Matrix::from_vec(r.rows, r.cols, r.weights.clone())?, r.bias.clone()))
        .collect::<Result<Vec<_>>>()?;
    NetParams::from_layers(layers)
}

impl Checkpoint {
    pub fn from_model(model: &GenerativeModel, seed: u64, variant: Option<Variant>) -> Self {
        let d = model.dims();
        Checkpoint {
            meta: CheckpointMeta {
                state_dim: d.state_dim,
                obs_dim: d.obs_dim,
                action_count: d.action_count,
                hidden: d.hidden,
                seed,
                variant,
                config_hash: None,
            },
            params: ParamsRecord {
                transition: to_records(model.transition_net().params()),
                posterior: to_records(model.posterior_net().params()),
                likelihood: to_records(model.likelihood_net().params()),
            },
        }
    }

    pub fn to_model(&self) -> Result<GenerativeModel> {
        let m = &self.meta;
        let dims = ModelDims {
            state_dim: m.state_dim,
            obs_dim: m.obs_dim,
            action_count: m.action_count,
            hidden: m.hidden,
        };
        GenerativeModel::from_parts(
            dims,
            GaussianHeadNet::new(from_records(&self.params.transition)?, dims.state_dim)?,
            GaussianHeadNet::new(from_records(&self.params.posterior)?, dims.state_dim)?,
            GaussianHeadNet::new(from_records(&self.params.likelihood)?, dims.obs_dim)?,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            path: "<checkpoint>".into(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::Format {
                path: path.into(),
                message,
            },
            other => other,
        })
    }
}

//! The three-network generative model: transition `p(s_t | s_{t-1}, a)`,
//! approximate posterior `q(s_t | s_{t-1}, a, o_t)` and likelihood
//! `p(o_t | s_t)`, each a one-hidden-layer tanh network with a diagonal
//! Gaussian head.
//!
//! The first step of every sequence conditions on a zero state and an
//! all-zero ("null") action encoding.

mod checkpoint;
mod episode;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use episode::Episode;
pub use train::{BoundModel, TrainConfig, TrainReport};

use crate::env::Action;
use crate::error::{ensure_dim, Result};
use crate::gaussian::{DiagGaussian, GaussianNode, STD_FLOOR};
use crate::math::{BoundParams, Graph, NetParams, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub action_count: usize,
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            state_dim: 4,
            obs_dim: 1,
            action_count: 2,
            hidden: 20,
        }
    }
}

/// A network whose output `[μ, r]` parameterizes `N(μ, softplus(r) + floor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHeadNet {
    net: NetParams,
    out_dim: usize,
}

impl GaussianHeadNet {
    pub fn new(net: NetParams, out_dim: usize) -> Result<Self> {
        ensure_dim("gaussian head output", 2 * out_dim, net.output_width())?;
        Ok(GaussianHeadNet { net, out_dim })
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        GaussianHeadNet::new(NetParams::init(&[input, hidden, 2 * out_dim], rng)?, out_dim)
    }

    pub fn params(&self) -> &NetParams {
        &self.net
    }

    pub fn params_mut(&mut self) -> &mut NetParams {
        &mut self.net
    }

    pub fn input_width(&self) -> usize {
        self.net.input_width()
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn predict(&self, input: &[f64]) -> Result<DiagGaussian> {
        let out = self.net.forward(input)?;
        let (mean, raw) = out.split_at(self.out_dim);
        let std = raw
            .iter()
            .map(|&r| crate::math::softplus(r) + STD_FLOOR)
            .collect();
        DiagGaussian::new(mean.to_vec(), std)
    }

    pub fn predict_graph(&self, g: &mut Graph, bound: &BoundParams, input: NodeId) -> Result<GaussianNode> {
        let acts = self.net.forward_graph(g, bound, input)?;
        GaussianNode::from_head(g, *acts.last().expect("network has layers"), self.out_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    dims: ModelDims,
    transition: GaussianHeadNet,
    posterior: GaussianHeadNet,
    likelihood: GaussianHeadNet,
}

impl GenerativeModel {
    /// Fresh model with seeded uniform initialisation.
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = dims.state_dim;
        let a = dims.action_count;
        let o = dims.obs_dim;
        let transition = GaussianHeadNet::init(s + a, dims.hidden, s, &mut rng)?;
        let posterior = GaussianHeadNet::init(s + a + o, dims.hidden, s, &mut rng)?;
        let likelihood = GaussianHeadNet::init(s, dims.hidden, o, &mut rng)?;
        GenerativeModel::from_parts(dims, transition, posterior, likelihood)
    }

    pub fn from_parts(
        dims: ModelDims,
        transition: GaussianHeadNet,
        posterior: GaussianHeadNet,
        likelihood: GaussianHeadNet,
    ) -> Result<Self> {
        let (s, a, o) = (dims.state_dim, dims.action_count, dims.obs_dim);
        ensure_dim("transition input", s + a, transition.input_width())?;
        ensure_dim("transition output", s, transition.out_dim())?;
        ensure_dim("posterior input", s + a + o, posterior.input_width())?;
        ensure_dim("posterior output", s, posterior.out_dim())?;
        ensure_dim("likelihood input", s, likelihood.input_width())?;
        ensure_dim("likelihood output", o, likelihood.out_dim())?;
        Ok(GenerativeModel {
            dims,
            transition,
            posterior,
            likelihood,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn state_dim(&self) -> usize {
        self.dims.state_dim
    }

    pub fn transition_net(&self) -> &GaussianHeadNet {
        &self.transition
    }

    pub fn posterior_net(&self) -> &GaussianHeadNet {
        &self.posterior
    }

    pub fn likelihood_net(&self) -> &GaussianHeadNet {
        &self.likelihood
    }

    pub fn nets_mut(&mut self) -> [&mut GaussianHeadNet; 3] {
        [&mut self.transition, &mut self.posterior, &mut self.likelihood]
    }

    pub fn zero_state(&self) -> Vec<f64> {
        vec![0.0; self.dims.state_dim]
    }

    /// One-hot action code; `None` is the all-zero null action used at t = 0.
    pub fn action_code(&self, action: Option<Action>) -> Vec<f64> {
        let mut v = vec![0.0; self.dims.action_count];
        if let Some(a) = action {
            v[a.index()] = 1.0;
        }
        v
    }

    fn transition_input(&self, s_prev: &[f64], action: Option<Action>) -> Result<Vec<f64>> {
        ensure_dim("state", self.dims.state_dim, s_prev.len())?;
        let mut x = s_prev.to_vec();
        x.extend(self.action_code(action));
        Ok(x)
    }

    /// `p(s_t | s_{t-1}, a_{t-1})`.
    pub fn transition_predict(&self, s_prev: &[f64], action: Option<Action>) -> Result<DiagGaussian> {
        self.transition.predict(&self.transition_input(s_prev, action)?)
    }

    /// `q(s_t | s_{t-1}, a_{t-1}, o_t)`.
    pub fn posterior_infer(&self, s_prev: &[f64], action: Option<Action>, obs: &[f64]) -> Result<DiagGaussian> {
        ensure_dim("observation", self.dims.obs_dim, obs.len())?;
        let mut x = self.transition_input(s_prev, action)?;
        x.extend_from_slice(obs);
        self.posterior.predict(&x)
    }

    /// `p(o_t | s_t)`.
    pub fn likelihood(&self, s: &[f64]) -> Result<DiagGaussian> {
        ensure_dim("state", self.dims.state_dim, s.len())?;
        self.likelihood.predict(s)
    }

    /// Runs the posterior chain over an episode and returns the encoding of
    /// the final step: the posterior mean, or a posterior sample when
    /// `sample_final` is set.
    pub fn encode_sequence<R: Rng + ?Sized>(&self, ep: &Episode, rng: &mut R, sample_final: bool) -> Result<Vec<f64>> {
        let mut s = self.zero_state();
        let mut q = None;
        for (t, &o) in ep.observations().iter().enumerate() {
            let post = self.posterior_infer(&s, ep.action_before(t), &[o])?;
            s = post.sample(rng);
            q = Some(post);
        }
        let q = q.expect("episodes hold at least one observation");
        Ok(if sample_final { s } else { q.mean().to_vec() })
    }
}

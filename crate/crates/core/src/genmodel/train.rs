use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Episode, GenerativeModel};
use crate::error::{Error, Result};
use crate::math::{BoundParams, Graph, NetParams, NodeId};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Episodes whose gradients are averaged into one SGD step.
    pub minibatch_episodes: usize,
    /// Reshuffle episode order every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 300,
            seed: 0,
            minibatch_episodes: 1,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.minibatch_episodes == 0 {
            return Err(Error::Config("minibatch_episodes must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-episode free energy for every epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn first(&self) -> Option<f64> {
        self.epoch_losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Parameter leaves of all three networks on one graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    transition: BoundParams,
    posterior: BoundParams,
    likelihood: BoundParams,
}

/// Gradients for the three networks, in transition/posterior/likelihood order.
pub type ModelGradients = [NetParams; 3];

impl GenerativeModel {
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        BoundModel {
            transition: self.transition.params().bind(g),
            posterior: self.posterior.params().bind(g),
            likelihood: self.likelihood.params().bind(g),
        }
    }

    /// Builds the per-episode free energy on `g`:
    ///
    /// `(1/T) Σ_t [ KL(q_t ‖ p_t) − log p(o_t | s_t) ]`, `s_t ~ q_t`
    ///
    /// with one reparameterized state sample per step. Noise is drawn from
    /// `rng` in step order, `state_dim` normals per step.
    pub fn free_energy_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        ep: &Episode,
        rng: &mut R,
    ) -> Result<NodeId> {
        let mut s_prev = g.leaf(self.zero_state());
        let mut terms = Vec::with_capacity(ep.len());
        for (t, &o) in ep.observations().iter().enumerate() {
            let a = g.leaf(self.action_code(ep.action_before(t)));
            let obs = g.leaf(vec![o]);
            let trans_in = g.concat(&[s_prev, a]);
            let post_in = g.concat(&[s_prev, a, obs]);
            let p = self.transition.predict_graph(g, &bound.transition, trans_in)?;
            let q = self.posterior.predict_graph(g, &bound.posterior, post_in)?;
            let s = q.rsample(g, rng)?;
            let lik = self.likelihood.predict_graph(g, &bound.likelihood, s)?;
            let kl = q.kl(g, &p)?;
            let lp = lik.log_prob(g, obs)?;
            terms.push(g.sub(kl, lp)?);
            s_prev = s;
        }
        let all = g.concat(&terms);
        let total = g.sum(all);
        Ok(g.scale(total, 1.0 / ep.len() as f64))
    }

    /// Free energy of one episode with its parameter gradients.
    pub fn loss_and_gradients<R: Rng + ?Sized>(&self, ep: &Episode, rng: &mut R) -> Result<(f64, ModelGradients)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let loss = self.free_energy_graph(&mut g, &bound, ep, rng)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Divergence(format!("free energy is {value}")));
        }
        let grads = g.backward(loss)?;
        Ok((
            value,
            [
                self.transition.params().gradients(&grads, &bound.transition),
                self.posterior.params().gradients(&grads, &bound.posterior),
                self.likelihood.params().gradients(&grads, &bound.likelihood),
            ],
        ))
    }

    /// Free energy value only.
    pub fn free_energy<R: Rng + ?Sized>(&self, ep: &Episode, rng: &mut R) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let loss = self.free_energy_graph(&mut g, &bound, ep, rng)?;
        Ok(g.scalar(loss))
    }

    /// SGD on the per-episode free energy. Returns the mean loss of every
    /// epoch, measured on the fly before each update.
    ///
    /// Each episode's sampling noise comes from a stream keyed on
    /// `(seed, epoch, dataset index)`, so the epoch mean does not depend on
    /// visiting order when the learning rate is zero.
    pub fn train(&mut self, dataset: &[Episode], cfg: &TrainConfig) -> Result<TrainReport> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::Contract("training needs a non-empty dataset".into()));
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            if cfg.shuffle {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x5eed, epoch as u64]));
                order.shuffle(&mut rng);
            }
            let mut total = 0.0;
            for batch in order.chunks(cfg.minibatch_episodes) {
                let mut acc: Option<ModelGradients> = None;
                for &idx in batch {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, idx as u64]));
                    let (loss, grads) = self.loss_and_gradients(&dataset[idx], &mut rng).map_err(|e| match e {
                        Error::Divergence(msg) => Error::Divergence(format!("epoch {epoch}, episode {idx}: {msg}")),
                        other => other,
                    })?;
                    total += loss;
                    match acc.as_mut() {
                        None => acc = Some(grads),
                        Some(sum) => {
                            for (s, g) in sum.iter_mut().zip(&grads) {
                                s.add_scaled(g, 1.0)?;
                            }
                        }
                    }
                }
                let grads = acc.expect("batches are non-empty");
                let lr = cfg.learning_rate / batch.len() as f64;
                for (net, g) in self.nets_mut().into_iter().zip(&grads) {
                    net.params_mut().sgd_step(g, lr).map_err(|e| match e {
                        Error::Divergence(msg) => Error::Divergence(format!("epoch {epoch}: {msg}")),
                        other => other,
                    })?;
                }
            }
            let mean = total / dataset.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Divergence(format!("epoch {epoch}: mean free energy {mean}")));
            }
            epoch_losses.push(mean);
        }
        Ok(TrainReport { epoch_losses })
    }
}

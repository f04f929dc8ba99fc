//! Diagonal multivariate Gaussians.
//!
//! [`DiagGaussian`] is the plain-value form used by the planner and for
//! analysis. [`GaussianNode`] is the same distribution living on a
//! computation graph, so that KL, log-density and reparameterized samples can
//! be differentiated with respect to the network parameters that produced it.

use std::f64::consts::{E, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::math::{Graph, NodeId};

/// Lower bound added to every standard deviation.
pub const STD_FLOOR: f64 = 1e-4;

/// `½ ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        ensure_dim("gaussian std", mean.len(), std.len())?;
        if let Some(s) = std.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Contract(format!("standard deviation must be positive and finite, got {s}")));
        }
        Ok(DiagGaussian { mean, std })
    }

    /// Isotropic Gaussian with the same std in every coordinate.
    pub fn isotropic(mean: Vec<f64>, std: f64) -> Result<Self> {
        let n = mean.len();
        DiagGaussian::new(mean, vec![std; n])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// `μ + ε⊙σ` with fresh standard-normal `ε`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + eps * s
            })
            .collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        ensure_dim("log_prob point", self.dim(), x.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(x)
            .map(|((m, s), xi)| {
                let z = (xi - m) / s;
                -HALF_LN_2PI - s.ln() - 0.5 * z * z
            })
            .sum())
    }

    /// Differential entropy, `Σ ½ ln(2πe) + ln σᵢ`.
    pub fn entropy(&self) -> f64 {
        let c = 0.5 * (2.0 * PI * E).ln();
        self.std.iter().map(|s| c + s.ln()).sum()
    }

    /// Closed-form `KL(self ‖ other)`.
    pub fn kl_divergence(&self, other: &DiagGaussian) -> Result<f64> {
        ensure_dim("kl operand", self.dim(), other.dim())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(other.mean.iter().zip(&other.std))
            .map(|((mq, sq), (mp, sp))| {
                let d = mq - mp;
                (sp / sq).ln() + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5
            })
            .sum())
    }

    /// Moment-matched fit: per-coordinate mean and population std (divide by
    /// N), with [`STD_FLOOR`] added to the std.
    pub fn fit_from_samples<S: AsRef<[f64]>>(samples: &[S]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Contract(format!(
                "fitting needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let d = samples[0].as_ref().len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            let s = s.as_ref();
            ensure_dim("sample dimension", d, s.len())?;
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for s in samples {
            for ((v, x), m) in var.iter_mut().zip(s.as_ref()).zip(&mean) {
                let dx = x - m;
                *v += dx * dx;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt() + STD_FLOOR).collect();
        DiagGaussian::new(mean, std)
    }
}

/// A Gaussian whose mean and std are graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct GaussianNode {
    pub mean: NodeId,
    pub std: NodeId,
}

impl GaussianNode {
    /// Splits a head output `[μ, r]` into mean `μ` and std `softplus(r) + floor`.
    pub fn from_head(g: &mut Graph, head: NodeId, dim: usize) -> Result<Self> {
        ensure_dim("gaussian head width", 2 * dim, g.value(head).len())?;
        let mean = g.slice(head, 0, dim)?;
        let raw = g.slice(head, dim, dim)?;
        let sp = g.softplus(raw);
        let std = g.offset(sp, STD_FLOOR);
        Ok(GaussianNode { mean, std })
    }

    pub fn value(&self, g: &Graph) -> DiagGaussian {
        DiagGaussian {
            mean: g.value(self.mean).to_vec(),
            std: g.value(self.std).to_vec(),
        }
    }

    /// Reparameterized sample `μ + ε⊙σ`; gradients flow through `μ` and `σ`.
    pub fn rsample<R: Rng + ?Sized>(&self, g: &mut Graph, rng: &mut R) -> Result<NodeId> {
        let eps: Vec<f64> = (0..g.value(self.mean).len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.rsample_with(g, eps)
    }

    pub fn rsample_with(&self, g: &mut Graph, eps: Vec<f64>) -> Result<NodeId> {
        let e = g.leaf(eps);
        let scaled = g.mul(self.std, e)?;
        g.add(self.mean, scaled)
    }

    /// Scalar node `KL(self ‖ p)`.
    pub fn kl(&self, g: &mut Graph, p: &GaussianNode) -> Result<NodeId> {
        let log_sp = g.log(p.std);
        let log_sq = g.log(self.std);
        let log_ratio = g.sub(log_sp, log_sq)?;
        let var_q = g.square(self.std);
        let diff = g.sub(self.mean, p.mean)?;
        let diff2 = g.square(diff);
        let num = g.add(var_q, diff2)?;
        let var_p = g.square(p.std);
        let den = g.scale(var_p, 2.0);
        let quad = g.div(num, den)?;
        let terms = g.add(log_ratio, quad)?;
        let terms = g.offset(terms, -0.5);
        Ok(g.sum(terms))
    }

    /// Scalar node `log N(x; μ, σ)`.
    pub fn log_prob(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let diff = g.sub(x, self.mean)?;
        let z = g.div(diff, self.std)?;
        let z2 = g.square(z);
        let half = g.scale(z2, -0.5);
        let log_s = g.log(self.std);
        let terms = g.sub(half, log_s)?;
        let terms = g.offset(terms, -HALF_LN_2PI);
        Ok(g.sum(terms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g(mean: &[f64], std: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), std.to_vec()).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(DiagGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![-1.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn sample_at_std_floor_is_close_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = g(&[0.3, -2.0], &[STD_FLOOR, STD_FLOOR]);
        let x = d.sample(&mut rng);
        assert!((x[0] - 0.3).abs() < 1e-3 && (x[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn seeded_sample_is_the_standalone_normal_draw() {
        let mut a = ChaCha8Rng::seed_from_u64(2024);
        let mut b = ChaCha8Rng::seed_from_u64(2024);
        let eps: f64 = b.sample(StandardNormal);
        assert_eq!(g(&[0.0], &[1.0]).sample(&mut a), vec![eps]);
    }

    #[test]
    fn sample_mean_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = g(&[2.0], &[0.5]);
        let n = 100_000;
        let m: f64 = (0..n).map(|_| d.sample(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!((m - 2.0).abs() < 0.01, "sample mean {m}");
    }

    #[test]
    fn kl_closed_form_cases() {
        let p = g(&[0.0], &[1.0]);
        assert_eq!(p.kl_divergence(&p).unwrap(), 0.0);
        assert!((g(&[1.0], &[1.0]).kl_divergence(&p).unwrap() - 0.5).abs() < 1e-15);
        assert!(g(&[1.0, 2.0], &[1.0, 1.0]).kl_divergence(&p).is_err());
    }

    #[test]
    fn entropy_cases() {
        assert!((g(&[0.0], &[1.0]).entropy() - 1.418_938_533_204_672_7).abs() < 1e-12);
        let s = [0.3, 1.7, 0.05, 2.2];
        let base = g(&[0.0; 4], &s);
        let doubled = g(&[0.0; 4], &s.map(|x| 2.0 * x));
        assert!((doubled.entropy() - base.entropy() - 4.0 * 2f64.ln()).abs() < 1e-12);
        let sum: f64 = s.iter().map(|&si| g(&[0.0], &[si]).entropy()).sum();
        assert!((base.entropy() - sum).abs() < 1e-12);
    }

    #[test]
    fn log_prob_cases() {
        let d = g(&[1.5], &[1.0]);
        assert!((d.log_prob(&[1.5]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let at_mean = d.log_prob(&[1.5]).unwrap();
        for x in [-1.0, 0.0, 1.4, 1.6, 3.0] {
            assert!(d.log_prob(&[x]).unwrap() < at_mean);
        }
        assert!(d.log_prob(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        // Trapezoid rule over ±12σ.
        let d = g(&[0.4], &[0.7]);
        let (lo, hi, n) = (0.4 - 8.4, 0.4 + 8.4, 200_000);
        let h = (hi - lo) / n as f64;
        let f = |x: f64| d.log_prob(&[x]).unwrap().exp();
        let mut acc = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            acc += f(lo + i as f64 * h);
        }
        assert!((acc * h - 1.0).abs() < 1e-3);
    }

    #[test]
    fn fit_cases() {
        let same = vec![vec![1.0, -2.0]; 5];
        let fit = DiagGaussian::fit_from_samples(&same).unwrap();
        assert_eq!(fit.mean(), &[1.0, -2.0]);
        assert_eq!(fit.std(), &[STD_FLOOR, STD_FLOOR]);

        let sym = DiagGaussian::fit_from_samples(&[vec![-1.0], vec![1.0]]).unwrap();
        assert_eq!(sym.mean(), &[0.0]);
        // Population convention: std of {-1, 1} is 1.
        assert!((sym.std()[0] - 1.0 - STD_FLOOR).abs() < 1e-15);

        assert!(DiagGaussian::fit_from_samples(&[vec![1.0]]).is_err());
        assert!(DiagGaussian::fit_from_samples(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn fit_recovers_source_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let src = g(&[3.0], &[2.0]);
        let xs: Vec<Vec<f64>> = (0..100_000).map(|_| src.sample(&mut rng)).collect();
        let fit = DiagGaussian::fit_from_samples(&xs).unwrap();
        assert!((fit.mean()[0] - 3.0).abs() < 0.05);
        assert!((fit.std()[0] - 2.0).abs() < 0.05);
    }

    #[test]
    fn fit_error_shrinks_with_sample_count() {
        let src = g(&[-1.0, 0.5], &[0.3, 1.2]);
        let err = |n: usize| {
            let mut total = 0.0;
            for seed in 0..20 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let xs: Vec<Vec<f64>> = (0..n).map(|_| src.sample(&mut rng)).collect();
                let f = DiagGaussian::fit_from_samples(&xs).unwrap();
                for i in 0..2 {
                    total += (f.mean()[i] - src.mean()[i]).abs() + (f.std()[i] - src.std()[i]).abs();
                }
            }
            total
        };
        assert!(err(10_000) < err(100));
    }

    #[test]
    fn kl_matches_monte_carlo_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = g(&[0.3, -0.8, 1.1, 0.0], &[0.9, 1.3, 0.6, 1.1]);
        let p = g(&[0.0, -0.2, 0.4, 0.5], &[1.2, 1.0, 0.8, 1.4]);
        let n = 1_000_000;
        let mc: f64 = (0..n)
            .map(|_| {
                let x = q.sample(&mut rng);
                q.log_prob(&x).unwrap() - p.log_prob(&x).unwrap()
            })
            .sum::<f64>()
            / n as f64;
        let exact = q.kl_divergence(&p).unwrap();
        assert!((mc - exact).abs() / exact < 0.01, "mc {mc} exact {exact}");
    }

    #[test]
    fn graph_forms_agree_with_plain_forms() {
        let mut graph = Graph::new();
        let q = GaussianNode {
            mean: graph.leaf(vec![0.2, -0.4]),
            std: graph.leaf(vec![0.5, 1.3]),
        };
        let p = GaussianNode {
            mean: graph.leaf(vec![-0.1, 0.7]),
            std: graph.leaf(vec![0.9, 0.4]),
        };
        let kl = q.kl(&mut graph, &p).unwrap();
        let x = graph.leaf(vec![0.0, 1.0]);
        let lp = q.log_prob(&mut graph, x).unwrap();
        let (qv, pv) = (q.value(&graph), p.value(&graph));
        assert!((graph.scalar(kl) - qv.kl_divergence(&pv).unwrap()).abs() < 1e-14);
        assert!((graph.scalar(lp) - qv.log_prob(&[0.0, 1.0]).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn reparameterized_mean_gradient_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut graph = Graph::new();
        let mean = graph.leaf(vec![0.5, -1.0, 2.0]);
        let std = graph.leaf(vec![0.3, 0.3, 0.3]);
        let node = GaussianNode { mean, std };
        let s = node.rsample(&mut graph, &mut rng).unwrap();
        let total = graph.sum(s);
        let grads = graph.backward(total).unwrap();
        assert_eq!(grads.wrt(mean), &[1.0, 1.0, 1.0]);

        // Finite differences through the same noise draw.
        let f = |m0: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut gg = Graph::new();
            let n = GaussianNode {
                mean: gg.leaf(vec![m0, -1.0, 2.0]),
                std: gg.leaf(vec![0.3, 0.3, 0.3]),
            };
            let s = n.rsample(&mut gg, &mut rng).unwrap();
            let t = gg.sum(s);
            gg.scalar(t)
        };
        let h = 1e-5;
        assert!(((f(0.5 + h) - f(0.5 - h)) / (2.0 * h) - 1.0).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(
            mq in prop::collection::vec(-5.0f64..5.0, 4),
            sq in prop::collection::vec(0.01f64..5.0, 4),
            mp in prop::collection::vec(-5.0f64..5.0, 4),
            sp in prop::collection::vec(0.01f64..5.0, 4),
        ) {
            let q = DiagGaussian::new(mq, sq).unwrap();
            let p = DiagGaussian::new(mp, sp).unwrap();
            prop_assert!(q.kl_divergence(&p).unwrap() >= -1e-12);
            prop_assert!(q.kl_divergence(&q).unwrap().abs() < 1e-12);
        }

        #[test]
        fn entropy_is_monotone_in_each_std(
            s in prop::collection::vec(0.01f64..5.0, 3),
            i in 0usize..3,
            bump in 1e-6f64..2.0,
        ) {
            let base = DiagGaussian::new(vec![0.0; 3], s.clone()).unwrap();
            let mut s2 = s;
            s2[i] += bump;
            let wider = DiagGaussian::new(vec![0.0; 3], s2).unwrap();
            prop_assert!(wider.entropy() > base.entropy());
        }
    }
}

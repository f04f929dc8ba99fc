//! Expected free energy by Monte-Carlo rollouts over a policy tree.
//!
//! Every tree node commits one action for `k` steps. Its score is
//!
//! ```text
//! Ĝ(node) = Σ_τ [ KL(N(μ_ŝτ, σ_ŝτ) ‖ P(s)) + H(N(μ_ôτ, σ_ôτ)) / ρ ]
//!         + Σ_child softmax(−γ Ĝ(child)) · Ĝ(child)
//! ```
//!
//! where the per-step Gaussians are moment-matched over `n` particles pushed
//! through the transition network (states) and the likelihood network
//! (observations). Children start from the parent's final particles.
//!
//! Every node draws its noise from its own stream, keyed on the node's heap
//! index, so the tree is identical whether branches run serially or in
//! parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Action;
use crate::error::{ensure_dim, Error, Result};
use crate::gaussian::DiagGaussian;
use crate::genmodel::GenerativeModel;
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Most probable root action; ties go to `Left`.
    #[default]
    Argmax,
    /// Sample the root action from the policy prior.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// Steps per tree segment.
    pub k: usize,
    /// Tree depth.
    pub d: usize,
    /// Rollout particles per branch.
    pub n: usize,
    /// Precision of the policy softmax.
    pub gamma: f64,
    /// Risk/ambiguity trade-off; the entropy term is weighted by `1/rho`.
    pub rho: f64,
    pub preferred: DiagGaussian,
    pub selection: SelectionMode,
}

impl PlanConfig {
    pub fn new(preferred: DiagGaussian) -> Self {
        PlanConfig {
            k: 30,
            d: 3,
            n: 100,
            gamma: 1.0,
            rho: 0.1,
            preferred,
            selection: SelectionMode::Argmax,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.k == 0 || self.d == 0 {
            return Err(Error::Config("k and d must be >= 1".into()));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("n must be >= 2 to fit Gaussians, got {}", self.n)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Config(format!("rho must be > 0, got {}", self.rho)));
        }
        ensure_dim("preferred state", state_dim, self.preferred.dim())
    }

    /// Planning horizon `k · d`.
    pub fn horizon(&self) -> usize {
        self.k * self.d
    }

    fn entropy_weight(&self) -> f64 {
        1.0 / self.rho
    }
}

/// Particles pushed through one segment.
#[derive(Debug, Clone)]
pub struct SegmentRollout {
    /// `[particle][step]` state samples.
    pub states: Vec<Vec<Vec<f64>>>,
    /// `[particle][step]` likelihood means (predicted positions).
    pub obs_means: Vec<Vec<f64>>,
    /// `[particle][step]` sampled observations.
    pub obs_samples: Vec<Vec<f64>>,
    /// Per-step Gaussian fitted to the state samples.
    pub state_fits: Vec<DiagGaussian>,
    /// Per-step Gaussian fitted to the sampled observations.
    pub obs_fits: Vec<DiagGaussian>,
}

impl SegmentRollout {
    pub fn final_states(&self) -> Vec<Vec<f64>> {
        self.states
            .iter()
            .map(|p| p.last().expect("segments have k >= 1 steps").clone())
            .collect()
    }
}

/// Runs `k` steps of `action` from every particle. Per step, every particle
/// draws `s ~ p(s | s_prev, a)` and then `ô ~ p(o | s)`, in particle order.
pub fn segment_rollout<R: Rng + ?Sized>(
    model: &GenerativeModel,
    states: &[Vec<f64>],
    action: Action,
    k: usize,
    rng: &mut R,
) -> Result<SegmentRollout> {
    let n = states.len();
    if n < 2 {
        return Err(Error::Contract(format!("segment rollout needs >= 2 particles, got {n}")));
    }
    let mut current: Vec<Vec<f64>> = states.to_vec();
    let mut out = SegmentRollout {
        states: vec![Vec::with_capacity(k); n],
        obs_means: vec![Vec::with_capacity(k); n],
        obs_samples: vec![Vec::with_capacity(k); n],
        state_fits: Vec::with_capacity(k),
        obs_fits: Vec::with_capacity(k),
    };
    let mut obs_step = vec![vec![0.0; model.dims().obs_dim]; n];
    for _ in 0..k {
        for (i, s) in current.iter_mut().enumerate() {
            *s = model.transition_predict(s, Some(action))?.sample(rng);
            let lik = model.likelihood(s)?;
            let o = lik.sample(rng);
            out.states[i].push(s.clone());
            out.obs_means[i].push(lik.mean()[0]);
            out.obs_samples[i].push(o[0]);
            obs_step[i] = o;
        }
        out.state_fits.push(DiagGaussian::fit_from_samples(&current)?);
        out.obs_fits.push(DiagGaussian::fit_from_samples(&obs_step)?);
    }
    Ok(out)
}

/// One segment of the policy tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanNode {
    pub action: Action,
    /// Actions from the root down to and including this node.
    pub path: Vec<Action>,
    /// Heap index: root children are 1 and 2, children of `i` are `2i+1`, `2i+2`.
    pub node_id: u64,
    pub step_kl: Vec<f64>,
    pub step_entropy: Vec<f64>,
    /// `Σ kl + Σ entropy / ρ` over this segment.
    pub segment_cost: f64,
    /// Softmax-weighted child score; zero at the leaves.
    pub continuation: f64,
    pub g_value: f64,
    /// `[particle][step]` predicted positions, for plotting.
    pub obs_means: Vec<Vec<f64>>,
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    pub fn kl_sum(&self) -> f64 {
        self.step_kl.iter().sum()
    }

    pub fn entropy_sum(&self) -> f64 {
        self.step_entropy.iter().sum()
    }

    pub fn child_g_values(&self) -> Vec<f64> {
        self.children.iter().map(|c| c.g_value).collect()
    }
}

/// One root-to-leaf path through the tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchEvaluation {
    pub branch_id: usize,
    pub policy_sequence: Vec<Action>,
    pub per_step_kl: Vec<f64>,
    pub per_step_entropy: Vec<f64>,
    pub kl_total: f64,
    pub entropy_total: f64,
    /// `kl_total + entropy_total / ρ`: the summed score of this action sequence.
    pub g_value: f64,
    /// Recursive `Ĝ` of each node along the path, root segment first.
    pub node_g: Vec<f64>,
    /// `[particle][step]` predicted positions over the full horizon.
    pub sampled_positions: Vec<Vec<f64>>,
    pub selected: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanTree {
    pub roots: Vec<PlanNode>,
    pub rho: f64,
    pub gamma: f64,
}

impl PlanTree {
    pub fn root_g_values(&self) -> Vec<f64> {
        self.roots.iter().map(|r| r.g_value).collect()
    }

    pub fn root(&self, action: Action) -> &PlanNode {
        &self.roots[action.index()]
    }

    /// Path obtained by taking the most probable child at every level.
    pub fn selected_path(&self) -> Vec<Action> {
        let mut path = Vec::new();
        let mut level = &self.roots;
        while !level.is_empty() {
            let g: Vec<f64> = level.iter().map(|n| n.g_value).collect();
            let best = argmax(&policy_prior(&g, self.gamma));
            path.push(level[best].action);
            level = &level[best].children;
        }
        path
    }

    /// All `2^d` root-to-leaf branches, ordered by policy sequence with
    /// `Left < Right` at each level.
    pub fn branches(&self) -> Vec<BranchEvaluation> {
        let selected = self.selected_path();
        let mut out = Vec::new();
        let mut stack: Vec<&PlanNode> = Vec::new();
        for r in &self.roots {
            collect(r, &mut stack, &mut out, self.rho, &selected);
        }
        for (i, b) in out.iter_mut().enumerate() {
            b.branch_id = i;
        }
        out
    }
}

fn collect<'a>(
    node: &'a PlanNode,
    stack: &mut Vec<&'a PlanNode>,
    out: &mut Vec<BranchEvaluation>,
    rho: f64,
    selected: &[Action],
) {
    stack.push(node);
    if node.children.is_empty() {
        let per_step_kl: Vec<f64> = stack.iter().flat_map(|n| n.step_kl.iter().copied()).collect();
        let per_step_entropy: Vec<f64> = stack.iter().flat_map(|n| n.step_entropy.iter().copied()).collect();
        let kl_total: f64 = per_step_kl.iter().sum();
        let entropy_total: f64 = per_step_entropy.iter().sum();
        let particles = node.obs_means.len();
        let sampled_positions = (0..particles)
            .map(|p| stack.iter().flat_map(|n| n.obs_means[p].iter().copied()).collect())
            .collect();
        out.push(BranchEvaluation {
            branch_id: 0,
            policy_sequence: node.path.clone(),
            per_step_kl,
            per_step_entropy,
            kl_total,
            entropy_total,
            g_value: kl_total + entropy_total / rho,
            node_g: stack.iter().map(|n| n.g_value).collect(),
            sampled_positions,
            selected: node.path == selected,
        });
    } else {
        for c in &node.children {
            collect(c, stack, out, rho, selected);
        }
    }
    stack.pop();
}

/// `softmax(−γ·G)`, shift-invariant.
pub fn policy_prior(g_values: &[f64], gamma: f64) -> Vec<f64> {
    let logits: Vec<f64> = g_values.iter().map(|g| -gamma * g).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Index of the largest value; the earliest wins ties.
fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn evaluate_node(
    model: &GenerativeModel,
    states: &[Vec<f64>],
    cfg: &PlanConfig,
    action: Action,
    path: Vec<Action>,
    node_id: u64,
    depth_remaining: usize,
    base_seed: u64,
) -> Result<PlanNode> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, &[node_id]));
    let roll = segment_rollout(model, states, action, cfg.k, &mut rng)?;
    let step_kl = roll
        .state_fits
        .iter()
        .map(|f| f.kl_divergence(&cfg.preferred))
        .collect::<Result<Vec<_>>>()?;
    let step_entropy: Vec<f64> = roll.obs_fits.iter().map(DiagGaussian::entropy).collect();
    let w = cfg.entropy_weight();
    let segment_cost: f64 = step_kl.iter().sum::<f64>() + w * step_entropy.iter().sum::<f64>();
    let children = if depth_remaining > 1 {
        expand(model, &roll.final_states(), cfg, &path, node_id, depth_remaining - 1, base_seed)?
    } else {
        Vec::new()
    };
    let continuation = if children.is_empty() {
        0.0
    } else {
        let g: Vec<f64> = children.iter().map(|c| c.g_value).collect();
        policy_prior(&g, cfg.gamma).iter().zip(&g).map(|(p, g)| p * g).sum()
    };
    Ok(PlanNode {
        action,
        path,
        node_id,
        step_kl,
        step_entropy,
        segment_cost,
        continuation,
        g_value: segment_cost + continuation,
        obs_means: roll.obs_means,
        children,
    })
}

fn expand(
    model: &GenerativeModel,
    states: &[Vec<f64>],
    cfg: &PlanConfig,
    prefix: &[Action],
    parent_id: u64,
    depth_remaining: usize,
    base_seed: u64,
) -> Result<Vec<PlanNode>> {
    Action::ALL
        .par_iter()
        .map(|&a| {
            let mut path = prefix.to_vec();
            path.push(a);
            let id = 2 * parent_id + 1 + a.index() as u64;
            evaluate_node(model, states, cfg, a, path, id, depth_remaining, base_seed)
        })
        .collect()
}

/// Evaluates the policy tree of the given depth from `root_states`.
/// Draws one seed from `rng`; every node derives its own stream from it.
pub fn expected_free_energy<R: Rng + ?Sized>(
    model: &GenerativeModel,
    root_states: &[Vec<f64>],
    cfg: &PlanConfig,
    depth_remaining: usize,
    rng: &mut R,
) -> Result<PlanTree> {
    cfg.validate(model.state_dim())?;
    if depth_remaining == 0 || depth_remaining > cfg.d {
        return Err(Error::Contract(format!(
            "depth must lie in [1, {}], got {depth_remaining}",
            cfg.d
        )));
    }
    for s in root_states {
        ensure_dim("root particle", model.state_dim(), s.len())?;
    }
    let base_seed = rng.next_u64();
    let roots = expand(model, root_states, cfg, &[], 0, depth_remaining, base_seed)?;
    Ok(PlanTree {
        roots,
        rho: cfg.rho,
        gamma: cfg.gamma,
    })
}

/// Root action choice from already evaluated root scores.
pub fn choose_action<R: Rng + ?Sized>(g_values: &[f64], gamma: f64, mode: SelectionMode, rng: &mut R) -> Action {
    let p = policy_prior(g_values, gamma);
    let idx = match mode {
        SelectionMode::Argmax => argmax(&p),
        SelectionMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            p.iter()
                .position(|pi| {
                    acc += pi;
                    u < acc
                })
                .unwrap_or(p.len() - 1)
        }
    };
    Action::from_index(idx).expect("one score per action")
}

/// Full-depth evaluation followed by the root decision.
pub fn select_policy<R: Rng + ?Sized>(
    model: &GenerativeModel,
    particles: &[Vec<f64>],
    cfg: &PlanConfig,
    rng: &mut R,
) -> Result<(Action, PlanTree)> {
    let tree = expected_free_energy(model, particles, cfg, cfg.d, rng)?;
    let action = choose_action(&tree.root_g_values(), cfg.gamma, cfg.selection, rng);
    Ok((action, tree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::ModelDims;
    use rand::RngCore;

    fn model() -> GenerativeModel {
        GenerativeModel::new(ModelDims::default(), 17).unwrap()
    }

    fn cfg(k: usize, d: usize, n: usize) -> PlanConfig {
        PlanConfig {
            k,
            d,
            n,
            ..PlanConfig::new(DiagGaussian::isotropic(vec![0.5, -0.2, 0.1, 0.3], 1.0).unwrap())
        }
    }

    fn particles(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..4).map(|_| rng.random_range(-0.5..0.5)).collect()).collect()
    }

    #[test]
    fn prior_cases() {
        assert_eq!(policy_prior(&[3.0, 3.0], 1.0), vec![0.5, 0.5]);
        assert_eq!(policy_prior(&[0.0, 100.0], 0.0), vec![0.5, 0.5]);
        let p = policy_prior(&[0.0, 3f64.ln()], 1.0);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let shifted = policy_prior(&[1000.0, 1000.0 + 3f64.ln()], 1.0);
        assert!((shifted[0] - 0.75).abs() < 1e-12);
        let extreme = policy_prior(&[1e6, -1e6], 5.0);
        assert_eq!(extreme, vec![0.0, 1.0]);
    }

    #[test]
    fn argmax_selection_and_tie_break() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(choose_action(&[5.0, 9.0], 1.0, SelectionMode::Argmax, &mut rng), Action::Left);
        assert_eq!(choose_action(&[9.0, 5.0], 1.0, SelectionMode::Argmax, &mut rng), Action::Right);
        assert_eq!(choose_action(&[4.0, 4.0], 1.0, SelectionMode::Argmax, &mut rng), Action::Left);
    }

    #[test]
    fn sampled_selection_follows_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = [0.0, 3f64.ln()];
        let lefts = (0..20_000)
            .filter(|_| choose_action(&g, 1.0, SelectionMode::Sample, &mut rng) == Action::Left)
            .count();
        assert!((lefts as f64 / 20_000.0 - 0.75).abs() < 0.015);
    }

    #[test]
    fn rollout_shapes() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = segment_rollout(&m, &particles(5, 1), Action::Right, 7, &mut rng).unwrap();
        assert_eq!(r.states.len(), 5);
        assert!(r.states.iter().all(|p| p.len() == 7));
        assert!(r.obs_means.iter().all(|p| p.len() == 7));
        assert_eq!(r.state_fits.len(), 7);
        assert_eq!(r.obs_fits.len(), 7);
        assert!(segment_rollout(&m, &particles(1, 1), Action::Right, 3, &mut rng).is_err());
    }

    #[test]
    fn two_particle_single_step_trace() {
        let m = model();
        let start = particles(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = segment_rollout(&m, &start, Action::Left, 1, &mut rng).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = Vec::new();
        let mut o = Vec::new();
        for p in &start {
            let sp = m.transition_predict(p, Some(Action::Left)).unwrap().sample(&mut rng);
            o.push(m.likelihood(&sp).unwrap().sample(&mut rng)[0]);
            s.push(sp);
        }
        assert_eq!(r.states[0][0], s[0]);
        assert_eq!(r.states[1][0], s[1]);
        for d in 0..4 {
            let mean = 0.5 * (s[0][d] + s[1][d]);
            let sd = 0.5 * (s[0][d] - s[1][d]).abs() + crate::gaussian::STD_FLOOR;
            assert!((r.state_fits[0].mean()[d] - mean).abs() < 1e-15);
            assert!((r.state_fits[0].std()[d] - sd).abs() < 1e-15);
        }
        let sd_o = 0.5 * (o[0] - o[1]).abs() + crate::gaussian::STD_FLOOR;
        assert!((r.obs_fits[0].std()[0] - sd_o).abs() < 1e-15);
    }

    #[test]
    fn identical_particles_recover_transition_std() {
        let m = model();
        let start = vec![vec![0.1, 0.2, -0.1, 0.0]; 10_000];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = segment_rollout(&m, &start, Action::Right, 1, &mut rng).unwrap();
        let p = m.transition_predict(&start[0], Some(Action::Right)).unwrap();
        for d in 0..4 {
            // Standard error of a std estimate is about σ/√(2N).
            let tol = 4.0 * p.std()[d] / (2.0f64 * 10_000.0).sqrt() + 1e-4;
            assert!((r.state_fits[0].std()[d] - p.std()[d]).abs() < tol);
            assert!((r.state_fits[0].mean()[d] - p.mean()[d]).abs() < 4.0 * p.std()[d] / 100.0);
        }
    }

    /// Independent recomputation of a depth-1 tree with a single step.
    #[test]
    fn single_step_tree_matches_manual_score() {
        let m = model();
        let c = cfg(1, 1, 2);
        let start = particles(2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tree = expected_free_energy(&m, &start, &c, 1, &mut rng).unwrap();
        let base = ChaCha8Rng::seed_from_u64(7).next_u64();
        for a in Action::ALL {
            let mut r = ChaCha8Rng::seed_from_u64(derive_seed(base, &[1 + a.index() as u64]));
            let mut ss = Vec::new();
            let mut os = Vec::new();
            for p in &start {
                let s = m.transition_predict(p, Some(a)).unwrap().sample(&mut r);
                os.push(m.likelihood(&s).unwrap().sample(&mut r));
                ss.push(s);
            }
            let fs = DiagGaussian::fit_from_samples(&ss).unwrap();
            let fo = DiagGaussian::fit_from_samples(&os).unwrap();
            let want = fs.kl_divergence(&c.preferred).unwrap() + fo.entropy() / c.rho;
            assert!((tree.root(a).g_value - want).abs() < 1e-9);
        }
    }

    #[test]
    fn infinite_rho_leaves_only_kl() {
        let m = model();
        let c = PlanConfig { rho: f64::INFINITY, ..cfg(3, 2, 4) };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tree = expected_free_energy(&m, &particles(4, 2), &c, 2, &mut rng).unwrap();
        for r in &tree.roots {
            assert_eq!(r.segment_cost, r.kl_sum());
        }
    }

    #[test]
    fn tree_decomposition_is_recomputable() {
        let m = model();
        let c = cfg(3, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tree = expected_free_energy(&m, &particles(5, 4), &c, 3, &mut rng).unwrap();
        fn check(n: &PlanNode, c: &PlanConfig) {
            let seg = n.kl_sum() + n.entropy_sum() / c.rho;
            let cont = if n.children.is_empty() {
                0.0
            } else {
                let g = n.child_g_values();
                policy_prior(&g, c.gamma).iter().zip(&g).map(|(p, g)| p * g).sum()
            };
            assert!((n.g_value - seg - cont).abs() < 1e-9);
            n.children.iter().for_each(|ch| check(ch, c));
        }
        tree.roots.iter().for_each(|r| check(r, &c));

        let branches = tree.branches();
        assert_eq!(branches.len(), 8);
        assert_eq!(branches.iter().filter(|b| b.selected).count(), 1);
        for b in &branches {
            assert_eq!(b.per_step_kl.len(), 9);
            assert_eq!(b.sampled_positions.len(), 5);
            assert!(b.sampled_positions.iter().all(|p| p.len() == 9));
            assert!((b.g_value - b.kl_total - b.entropy_total / c.rho).abs() < 1e-9);
        }
        assert_eq!(branches[0].policy_sequence, vec![Action::Left; 3]);
        assert_eq!(branches[7].policy_sequence, vec![Action::Right; 3]);
    }

    #[test]
    fn plan_is_reproducible() {
        let m = model();
        let c = cfg(4, 3, 6);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let t = expected_free_energy(&m, &particles(6, 5), &c, 3, &mut rng).unwrap();
            t.branches()
                .iter()
                .flat_map(|b| b.node_g.iter().chain(&b.per_step_entropy).map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn horizon_and_validation() {
        let c = cfg(30, 3, 100);
        assert_eq!(c.horizon(), 90);
        assert!(PlanConfig { n: 1, ..c.clone() }.validate(4).is_err());
        assert!(PlanConfig { rho: 0.0, ..c.clone() }.validate(4).is_err());
        assert!(c.validate(3).is_err());
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(expected_free_energy(&m, &particles(3, 0), &cfg(1, 2, 3), 3, &mut rng).is_err());
    }
}

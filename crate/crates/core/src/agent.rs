//! Experiment orchestration: random-agent bootstrap data, the scripted
//! expert, preferred-state construction, particle belief tracking and the
//! closed-loop active inference episode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvConfig, MountainCar, StartPosition, Variant, POSITION_MIN};
use crate::error::{ensure_dim, Error, Result};
use crate::gaussian::DiagGaussian;
use crate::genmodel::{Episode, GenerativeModel, ModelDims, TrainConfig, TrainReport};
use crate::planner::{select_policy, PlanConfig, PlanTree};
use crate::seeding::derive_seed;

/// Episodes of uniformly random throttling. Each episode runs until the
/// environment reports done (goal or `max_steps`).
pub fn collect_random<R: Rng + ?Sized>(env_cfg: &EnvConfig, episodes: usize, rng: &mut R) -> Result<Vec<Episode>> {
    if episodes == 0 {
        return Err(Error::Contract("collect_random needs episodes >= 1".into()));
    }
    (0..episodes)
        .map(|_| {
            let mut env = MountainCar::new(EnvConfig {
                seed: rng.next_u64(),
                ..env_cfg.clone()
            })?;
            let mut ep = Episode::start(env.reset());
            while !env.is_done() {
                let a = if rng.random_bool(0.5) { Action::Left } else { Action::Right };
                let (o, _) = env.step(a)?;
                ep.push(a, o);
            }
            Ok(ep)
        })
        .collect()
}

/// Scripted driver that pumps energy: throttle in the direction of motion,
/// left when at rest (right when resting against the left wall).
pub fn expert_demonstration(env_cfg: &EnvConfig) -> Result<Episode> {
    let mut env = MountainCar::new(env_cfg.clone())?;
    let mut ep = Episode::start(env.reset());
    while !env.is_done() {
        let s = env.true_state()?;
        let a = if s.velocity > 0.0 || (s.velocity == 0.0 && s.position <= POSITION_MIN) {
            Action::Right
        } else {
            Action::Left
        };
        let (o, _) = env.step(a)?;
        ep.push(a, o);
    }
    if !env.reached_goal() {
        return Err(Error::Config(format!(
            "scripted expert did not reach the goal within {} steps",
            env_cfg.max_steps
        )));
    }
    Ok(ep)
}

/// Advances every belief particle by one posterior sample given the action
/// taken and the observation received.
pub fn track_posterior<R: Rng + ?Sized>(
    model: &GenerativeModel,
    particles: &[Vec<f64>],
    action: Option<Action>,
    obs: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    particles
        .iter()
        .map(|p| Ok(model.posterior_infer(p, action, &[obs])?.sample(rng)))
        .collect()
}

/// Belief after the first observation of an episode: `n` particles from the
/// posterior conditioned on the zero state and the null action.
pub fn initial_belief<R: Rng + ?Sized>(model: &GenerativeModel, obs: f64, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let zeros = vec![model.zero_state(); n];
    track_posterior(model, &zeros, None, obs, rng)
}

/// `N(ŝ_end, std²·I)` from the encoded end of a demonstration.
pub fn preferred_state<R: Rng + ?Sized>(
    model: &GenerativeModel,
    demo: &Episode,
    std: f64,
    sample_final: bool,
    rng: &mut R,
) -> Result<DiagGaussian> {
    DiagGaussian::isotropic(model.encode_sequence(demo, rng, sample_final)?, std)
}

/// Mean absolute gap between the decoded position of the mean belief particle
/// and the true position, over fresh random-agent episodes.
pub fn perception_error<R: Rng + ?Sized>(
    model: &GenerativeModel,
    env_cfg: &EnvConfig,
    episodes: usize,
    particles: usize,
    rng: &mut R,
) -> Result<f64> {
    if episodes == 0 || particles == 0 {
        return Err(Error::Contract("perception_error needs episodes >= 1 and particles >= 1".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..episodes {
        let mut env = MountainCar::new(EnvConfig {
            seed: rng.next_u64(),
            ..env_cfg.clone()
        })?;
        let obs = env.reset();
        let mut belief = initial_belief(model, obs, particles, rng)?;
        loop {
            let mean = mean_particle(&belief);
            total += (model.likelihood(&mean)?.mean()[0] - env.true_state()?.position).abs();
            count += 1;
            if env.is_done() {
                break;
            }
            let a = if rng.random_bool(0.5) { Action::Left } else { Action::Right };
            let (o, _) = env.step(a)?;
            belief = track_posterior(model, &belief, Some(a), o, rng)?;
        }
    }
    Ok(total / count as f64)
}

pub fn mean_particle(particles: &[Vec<f64>]) -> Vec<f64> {
    let n = particles.len() as f64;
    let mut mean = vec![0.0; particles.first().map_or(0, Vec::len)];
    for p in particles {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x / n;
        }
    }
    mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub true_position: f64,
    pub true_velocity: f64,
    pub obs: f64,
    /// Action applied after this observation; `None` on the final row.
    pub action: Option<Action>,
    pub replan: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplanEvent {
    pub t: usize,
    pub action: Action,
    pub tree: PlanTree,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub replans: Vec<ReplanEvent>,
    pub goal_reached: bool,
    pub steps_taken: usize,
}

impl RunRecord {
    /// Root action of the first plan.
    pub fn first_action(&self) -> Option<Action> {
        self.replans.first().map(|r| r.action)
    }
}

/// Closed loop: plan, commit the chosen action for `k` steps while tracking
/// the posterior belief, replan; stop at goal or `max_steps`.
pub fn run_active_inference(
    model: &GenerativeModel,
    env_cfg: &EnvConfig,
    plan_cfg: &PlanConfig,
    seed: u64,
) -> Result<RunRecord> {
    plan_cfg.validate(model.state_dim())?;
    let mut env = MountainCar::new(EnvConfig {
        seed: derive_seed(seed, &[1]),
        ..env_cfg.clone()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2]));
    let mut obs = env.reset();
    let mut particles = initial_belief(model, obs, plan_cfg.n, &mut rng)?;
    let mut steps = Vec::new();
    let mut replans = Vec::new();
    let mut committed = 0;
    let mut action = Action::Left;
    loop {
        let state = env.true_state()?;
        let t = env.steps();
        if env.is_done() {
            steps.push(StepRecord {
                t,
                true_position: state.position,
                true_velocity: state.velocity,
                obs,
                action: None,
                replan: false,
            });
            break;
        }
        let replan = committed == 0;
        if replan {
            let (a, tree) = select_policy(model, &particles, plan_cfg, &mut rng)?;
            action = a;
            replans.push(ReplanEvent { t, action, tree });
            committed = plan_cfg.k;
        }
        steps.push(StepRecord {
            t,
            true_position: state.position,
            true_velocity: state.velocity,
            obs,
            action: Some(action),
            replan,
        });
        let (o, _) = env.step(action)?;
        obs = o;
        particles = track_posterior(model, &particles, Some(action), obs, &mut rng)?;
        committed -= 1;
    }
    Ok(RunRecord {
        seed,
        goal_reached: env.reached_goal(),
        steps_taken: env.steps(),
        steps,
        replans,
    })
}

/// Throttle force used by experiments. Stronger than the classic constant so
/// that a left swing followed by a right push reaches the goal within one
/// 90-step planning horizon from rest at -0.5.
pub const EXPERIMENT_FORCE: f64 = 0.0015;

/// Step budget of the scripted demonstration.
pub const DEMO_MAX_STEPS: usize = 500;

/// Everything needed to go from a master seed to a trained model, a
/// preferred state and planning runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub variant: Variant,
    pub master_seed: u64,
    pub obs_noise_std: f64,
    pub bootstrap_episodes: usize,
    pub bootstrap_steps: usize,
    pub dims: ModelDims,
    pub train: TrainConfig,
    pub preferred_std: f64,
    pub sample_preferred: bool,
    pub start_position: f64,
    pub run_max_steps: usize,
    pub force: f64,
}

impl Experiment {
    pub fn new(variant: Variant, master_seed: u64) -> Self {
        Experiment {
            variant,
            master_seed,
            obs_noise_std: 0.05,
            bootstrap_episodes: 200,
            bootstrap_steps: 100,
            dims: ModelDims::default(),
            train: TrainConfig {
                seed: derive_seed(master_seed, &[3]),
                ..TrainConfig::default()
            },
            preferred_std: 1.0,
            sample_preferred: false,
            start_position: -0.5,
            run_max_steps: 200,
            force: EXPERIMENT_FORCE,
        }
    }

    /// Random-spawn environment used for the bootstrap data.
    pub fn bootstrap_env(&self) -> EnvConfig {
        EnvConfig {
            variant: self.variant,
            obs_noise_std: self.obs_noise_std,
            start: StartPosition::Random,
            goal_position: 0.5,
            max_steps: self.bootstrap_steps,
            seed: derive_seed(self.master_seed, &[4]),
            force: self.force,
        }
    }

    /// Evaluation environment: fixed start, this experiment's velocity variant.
    pub fn eval_env(&self) -> EnvConfig {
        EnvConfig {
            variant: self.variant,
            obs_noise_std: self.obs_noise_std,
            start: StartPosition::Fixed(self.start_position),
            goal_position: 0.5,
            max_steps: self.run_max_steps,
            seed: derive_seed(self.master_seed, &[5]),
            force: self.force,
        }
    }

    /// Demonstration environment: fixed start at rest, with its own step budget.
    pub fn demo_env(&self) -> EnvConfig {
        EnvConfig {
            variant: Variant::ZeroVelocity,
            max_steps: DEMO_MAX_STEPS,
            ..self.eval_env()
        }
    }

    pub fn bootstrap(&self) -> Result<Vec<Episode>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.master_seed, &[6]));
        collect_random(&self.bootstrap_env(), self.bootstrap_episodes, &mut rng)
    }

    pub fn init_model(&self) -> Result<GenerativeModel> {
        GenerativeModel::new(self.dims, derive_seed(self.master_seed, &[7]))
    }

    pub fn train_model(&self, data: &[Episode]) -> Result<(GenerativeModel, TrainReport)> {
        let mut model = self.init_model()?;
        let report = model.train(data, &self.train)?;
        Ok((model, report))
    }

    pub fn demonstration(&self) -> Result<Episode> {
        expert_demonstration(&self.demo_env())
    }

    pub fn preferred(&self, model: &GenerativeModel, demo: &Episode) -> Result<DiagGaussian> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.master_seed, &[8]));
        let p = preferred_state(model, demo, self.preferred_std, self.sample_preferred, &mut rng)?;
        ensure_dim("preferred state", model.state_dim(), p.dim())?;
        Ok(p)
    }

    /// Root decision and full tree from the evaluation start, without acting.
    pub fn plan_from_start(&self, model: &GenerativeModel, plan: &PlanConfig, seed: u64) -> Result<(Action, PlanTree)> {
        let mut env = MountainCar::new(EnvConfig {
            seed: derive_seed(seed, &[1]),
            ..self.eval_env()
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2]));
        let obs = env.reset();
        let particles = initial_belief(model, obs, plan.n, &mut rng)?;
        select_policy(model, &particles, plan, &mut rng)
    }
}

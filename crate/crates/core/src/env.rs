//! Mountain Car with a noisy position-only sensor.
//!
//! Classic discrete dynamics: throttle force ±0.001, gravity `0.0025·cos(3p)`,
//! position in `[-1.2, 0.6]`, velocity in `[-0.07, 0.07]`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const POSITION_MIN: f64 = -1.2;
pub const POSITION_MAX: f64 = 0.6;
pub const VELOCITY_MAX: f64 = 0.07;
pub const FORCE: f64 = 0.001;
pub const GRAVITY: f64 = 0.0025;

/// Range used when the spawn position is randomized.
pub const SPAWN_RANGE: (f64, f64) = (-1.1, 0.4);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// Throttle direction, `-1` or `+1`.
    pub fn direction(self) -> f64 {
        match self {
            Action::Left => -1.0,
            Action::Right => 1.0,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Action::Left => 'L',
            Action::Right => 'R',
        }
    }

    pub fn from_symbol(c: char) -> Option<Action> {
        match c {
            'L' => Some(Action::Left),
            'R' => Some(Action::Right),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ZeroVelocity,
    RandomVelocity,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::ZeroVelocity => "zero_velocity",
            Variant::RandomVelocity => "random_velocity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPosition {
    Fixed(f64),
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub position: f64,
    pub velocity: f64,
}

impl CarState {
    /// One step of the deterministic dynamics with the classic throttle force.
    pub fn advance(self, action: Action) -> CarState {
        self.advance_with(action, FORCE)
    }

    pub fn advance_with(self, action: Action, force: f64) -> CarState {
        let velocity = (self.velocity + force * action.direction() - GRAVITY * (3.0 * self.position).cos())
            .clamp(-VELOCITY_MAX, VELOCITY_MAX);
        let position = (self.position + velocity).clamp(POSITION_MIN, POSITION_MAX);
        let velocity = if position <= POSITION_MIN && velocity < 0.0 {
            0.0
        } else {
            velocity
        };
        CarState { position, velocity }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub variant: Variant,
    pub obs_noise_std: f64,
    pub start: StartPosition,
    pub goal_position: f64,
    pub max_steps: usize,
    pub seed: u64,
    /// Throttle force magnitude.
    pub force: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            variant: Variant::ZeroVelocity,
            obs_noise_std: 0.05,
            start: StartPosition::Fixed(-0.5),
            goal_position: 0.5,
            max_steps: 200,
            seed: 0,
            force: FORCE,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.obs_noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "obs_noise_std must be >= 0, got {}",
                self.obs_noise_std
            )));
        }
        if !(self.force > 0.0) {
            return Err(Error::Config(format!("force must be > 0, got {}", self.force)));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if let StartPosition::Fixed(p) = self.start {
            if !(POSITION_MIN..=POSITION_MAX).contains(&p) {
                return Err(Error::Config(format!("start position {p} outside track")));
            }
        }
        Ok(())
    }
}

/// A Mountain Car instance with its own RNG stream.
#[derive(Debug, Clone)]
pub struct MountainCar {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    state: Option<CarState>,
    steps: usize,
    done: bool,
}

impl MountainCar {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(MountainCar {
            cfg,
            rng,
            state: None,
            steps: 0,
            done: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Spawns the car and returns the first observation.
    pub fn reset(&mut self) -> f64 {
        let position = match self.cfg.start {
            StartPosition::Fixed(p) => p,
            StartPosition::Random => self.rng.random_range(SPAWN_RANGE.0..=SPAWN_RANGE.1),
        };
        let velocity = match self.cfg.variant {
            Variant::ZeroVelocity => 0.0,
            Variant::RandomVelocity => self.rng.random_range(-VELOCITY_MAX..=VELOCITY_MAX),
        };
        self.state = Some(CarState { position, velocity });
        self.steps = 0;
        self.done = false;
        self.observe(position)
    }

    /// Starts from an explicit state instead of the configured spawn rule.
    pub fn reset_to(&mut self, state: CarState) -> f64 {
        self.state = Some(state);
        self.steps = 0;
        self.done = false;
        self.observe(state.position)
    }

    fn observe(&mut self, position: f64) -> f64 {
        if self.cfg.obs_noise_std == 0.0 {
            return position;
        }
        let eps: f64 = self.rng.sample(StandardNormal);
        position + self.cfg.obs_noise_std * eps
    }

    /// Applies one throttle action. Returns the noisy observation and whether
    /// the episode has ended (goal reached or step budget spent).
    pub fn step(&mut self, action: Action) -> Result<(f64, bool)> {
        let state = self
            .state
            .ok_or_else(|| Error::Contract("step called before reset".into()))?;
        if self.done {
            return Err(Error::Contract("step called after episode ended".into()));
        }
        let next = state.advance_with(action, self.cfg.force);
        self.state = Some(next);
        self.steps += 1;
        self.done = self.reached_goal() || self.steps >= self.cfg.max_steps;
        let obs = self.observe(next.position);
        Ok((obs, self.done))
    }

    pub fn reached_goal(&self) -> bool {
        self.state
            .is_some_and(|s| s.position >= self.cfg.goal_position)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Exact hidden state. Test and logging use only; the agent never sees it.
    pub fn true_state(&self) -> Result<CarState> {
        self.state
            .ok_or_else(|| Error::Contract("true_state called before reset".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(variant: Variant, noise: f64) -> EnvConfig {
        EnvConfig {
            variant,
            obs_noise_std: noise,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn noiseless_zero_velocity_reset() {
        let mut env = MountainCar::new(cfg(Variant::ZeroVelocity, 0.0)).unwrap();
        assert_eq!(env.reset(), -0.5);
        assert_eq!(env.true_state().unwrap().velocity, 0.0);
    }

    #[test]
    fn seeded_random_velocity_resets_match() {
        let c = EnvConfig {
            seed: 77,
            start: StartPosition::Random,
            ..cfg(Variant::RandomVelocity, 0.05)
        };
        let mut a = MountainCar::new(c.clone()).unwrap();
        let mut b = MountainCar::new(c).unwrap();
        assert_eq!(a.reset(), b.reset());
        assert_eq!(a.true_state().unwrap(), b.true_state().unwrap());
    }

    #[test]
    fn random_velocity_reset_statistics() {
        let mut env = MountainCar::new(EnvConfig {
            seed: 5,
            ..cfg(Variant::RandomVelocity, 0.05)
        })
        .unwrap();
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            env.reset();
            let v = env.true_state().unwrap().velocity;
            assert!((-VELOCITY_MAX..=VELOCITY_MAX).contains(&v));
            sum += v;
        }
        // std of U(-0.07, 0.07) is ~0.0404, so the standard error is ~0.0004.
        assert!((sum / n as f64).abs() < 0.002);
    }

    #[test]
    fn random_spawn_stays_in_range() {
        let mut env = MountainCar::new(EnvConfig {
            seed: 6,
            start: StartPosition::Random,
            ..cfg(Variant::ZeroVelocity, 0.0)
        })
        .unwrap();
        for _ in 0..1000 {
            let p = env.reset();
            assert!((SPAWN_RANGE.0..=SPAWN_RANGE.1).contains(&p));
        }
    }

    #[test]
    fn hand_evaluated_dynamics() {
        // cos(-1.5) = 0.0707372...
        let s = CarState { position: -0.5, velocity: 0.0 };
        let r = s.advance(Action::Right);
        let expect_v = 0.001 - 0.0025 * (-1.5f64).cos();
        assert!((r.velocity - expect_v).abs() < 1e-15);
        assert!((r.velocity - 0.000_823).abs() < 1e-6);
        assert!((r.position + 0.499_177).abs() < 1e-6);
        let l = s.advance(Action::Left);
        assert!((l.velocity + 0.001_177).abs() < 1e-6);
    }

    #[test]
    fn left_wall_zeroes_velocity() {
        let s = CarState { position: -1.19, velocity: -0.05 };
        let n = s.advance(Action::Left);
        assert_eq!(n.position, POSITION_MIN);
        assert_eq!(n.velocity, 0.0);
    }

    #[test]
    fn bounds_hold_under_random_driving() {
        let mut env = MountainCar::new(EnvConfig {
            seed: 9,
            max_steps: 100_000,
            goal_position: 10.0,
            ..cfg(Variant::RandomVelocity, 0.0)
        })
        .unwrap();
        env.reset();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5000 {
            let a = if rng.random_bool(0.5) { Action::Left } else { Action::Right };
            env.step(a).unwrap();
            let s = env.true_state().unwrap();
            assert!((POSITION_MIN..=POSITION_MAX).contains(&s.position));
            assert!(s.velocity.abs() <= VELOCITY_MAX);
        }
    }

    #[test]
    fn step_contracts() {
        let mut env = MountainCar::new(EnvConfig {
            max_steps: 1,
            ..cfg(Variant::ZeroVelocity, 0.0)
        })
        .unwrap();
        assert!(env.step(Action::Left).is_err());
        assert!(env.true_state().is_err());
        env.reset();
        let (_, done) = env.step(Action::Left).unwrap();
        assert!(done);
        assert!(matches!(env.step(Action::Left), Err(Error::Contract(_))));
    }

    #[test]
    fn constant_right_cannot_climb_from_rest() {
        let mut env = MountainCar::new(cfg(Variant::ZeroVelocity, 0.0)).unwrap();
        env.reset();
        while !env.is_done() {
            env.step(Action::Right).unwrap();
        }
        assert!(!env.reached_goal());
        assert_eq!(env.steps(), 200);
    }

    #[test]
    fn noiseless_observation_is_true_position() {
        let mut env = MountainCar::new(cfg(Variant::ZeroVelocity, 0.0)).unwrap();
        env.reset();
        for _ in 0..20 {
            let (o, _) = env.step(Action::Left).unwrap();
            assert_eq!(o, env.true_state().unwrap().position);
        }
    }

    #[test]
    fn observation_noise_statistics() {
        let noise = 0.05;
        let mut env = MountainCar::new(EnvConfig {
            seed: 31,
            max_steps: 20_000,
            goal_position: 10.0,
            ..cfg(Variant::ZeroVelocity, noise)
        })
        .unwrap();
        env.reset();
        let n = 10_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let a = if i % 40 < 20 { Action::Left } else { Action::Right };
            let (o, _) = env.step(a).unwrap();
            let e = o - env.true_state().unwrap().position;
            s1 += e;
            s2 += e * e;
        }
        let mean = s1 / n as f64;
        let std = (s2 / n as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 4.0 * noise / (n as f64).sqrt());
        assert!((std - noise).abs() < 0.05 * noise);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(MountainCar::new(cfg(Variant::ZeroVelocity, -1.0)).is_err());
        let c = EnvConfig {
            start: StartPosition::Fixed(3.0),
            ..EnvConfig::default()
        };
        assert!(MountainCar::new(c).is_err());
    }
}

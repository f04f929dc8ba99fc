//! Deep active inference on Mountain Car.
//!
//! A latent state-space generative model (transition, posterior and
//! likelihood networks with diagonal Gaussian heads) is trained by
//! minimizing variational free energy. An agent then plans by Monte-Carlo
//! estimation of expected free energy over a tree of throttle policies.

pub mod agent;
pub mod cli;
pub mod env;
pub mod error;
pub mod gaussian;
pub mod genmodel;
pub mod math;
pub mod planner;
pub mod seeding;

pub use env::{Action, CarState, EnvConfig, MountainCar, StartPosition, Variant};
pub use error::{Error, Result};
pub use gaussian::DiagGaussian;
pub use genmodel::{Episode, GenerativeModel, ModelDims, TrainConfig};

//! Informative path planning laboratory.
//!
//! A UAV terrain-monitoring simulator with probabilistic mapping (GP prior,
//! Kalman fusion), a policy-value-guided tree search planner with self-play
//! training, and benchmark planners (random, coverage, progressive-widening
//! MCTS, CMA-ES), plus mission execution and metric aggregation.

pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod mapping;
pub mod net;
pub mod rng;
pub mod search;
pub mod training;

pub use config::{load_config, MissionConfig, Profile};
pub use error::{CoreError, Result};

//! Deterministic simulator for Byzantine attacks against robust aggregation
//! in decentralized (gossip) and federated learning.

pub mod aggregators;
pub mod attacks;
pub mod config;
pub mod engine;
pub mod error;
pub mod model;
pub mod params;
pub mod presets;
pub mod rng;
pub mod task;
pub mod topology;
pub mod trace;

pub use error::{Error, Result};
pub use params::ParamVector;
pub use config::{parse_config, render_config, ExperimentConfig};
pub use engine::{run_experiment, RunTrace};

//! Round-level federated simulation.

pub mod client;
pub mod config;
pub mod data;
pub mod metrics;
pub mod mnist;
pub mod model;
pub mod optim;
pub mod partition;
pub mod qsgd;
pub mod seed;
pub mod server;
pub mod simulation;

pub use config::{Scheme, SimConfig};
pub use data::Dataset;
pub use metrics::RoundMetrics;
pub use model::{MlpShape, ModelParams};
pub use simulation::Simulation;

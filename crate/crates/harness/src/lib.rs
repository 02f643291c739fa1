//! Experiment harness for the `flc` command: config files, seeded runs,
//! metrics CSVs, run comparison and SVG charts.

pub mod compare;
pub mod config;
pub mod error;
pub mod gendata;
pub mod metrics_csv;
pub mod run;
pub mod svg;

pub use config::{load_config, parse_config, DatasetSpec, ExperimentConfig};
pub use error::{HarnessError, Result};

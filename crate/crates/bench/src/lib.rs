//! Experiment orchestration for the interventional density estimators:
//! configuration, tuning, fitting, evaluation and result files.

pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod methods;
pub mod results;
pub mod tune;

pub use compare::{compare_methods, Summary};
pub use config::{ExperimentConfig, Family, Method};
pub use error::{BenchError, Result};
pub use experiment::{run_experiment, ExperimentOutput};
pub use results::ResultRow;

//! Experiment harness for the decentralized multi-agent actor-critic
//! algorithms: configuration, parallel fan-out of training runs, CSV metrics,
//! summary statistics, plot series and the analysis suites.

pub mod checks;
pub mod config;
pub mod envfile;
pub mod error;
pub mod experiment;
pub mod metrics_io;
pub mod plot;
pub mod summary;

pub use config::{load_config, parse_config, EnvKind, RunConfig};
pub use error::{ConfigError, HarnessError};
pub use experiment::run_experiment;
pub use metrics_io::Manifest;
pub use summary::{summarize, SummaryTable};

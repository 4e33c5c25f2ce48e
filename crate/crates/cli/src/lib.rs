//! Command-line front end for the correlated-qubit heat simulator: config
//! parsing, figure presets, parameter sweeps and CSV/JSON output.

pub mod app;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod presets;
pub mod sweep;

pub use config::{parse_config, ExperimentConfig, Mode};
pub use error::{CliError, Result};

//! Configuration, presets, artifact writers and the command-line front end
//! for `quasiexit-core`.

pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod preset;

pub use commands::{run, Command, Outcome};
pub use config::{parse_config, ExperimentConfig, PresetName};
pub use error::CliError;
pub use exec::RayonExecutor;

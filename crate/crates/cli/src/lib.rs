//! Experiment harness: JSON configuration, phantoms, and the `forward`,
//! `reconstruct`, `oed` and `eig` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod phantom;

pub use commands::{cmd_eig, cmd_forward, cmd_oed, cmd_reconstruct, Context};
pub use config::ExperimentConfig;
pub use error::CliError;

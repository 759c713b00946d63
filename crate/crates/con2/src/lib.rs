//! File formats, dataset loading and the command-line pipeline around
//! `con2-core`.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod imageio;

pub use con2_core;
pub use error::{CliError, CliResult};

//! Library surface of the command-line pipeline; the binary is a thin
//! argument-parsing wrapper and integration tests drive these entry
//! points directly.

pub mod commands;
pub mod config;
mod error;
pub mod hashing;
pub mod io;
pub mod synth;

pub use config::{PathsConfig, RunConfig, TokenizerConfig};
pub use error::{CliError, Result};

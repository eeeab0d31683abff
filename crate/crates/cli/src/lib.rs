//! File formats, configuration and commands of the `radcal` tool.
//!
//! Exit codes are listed in [`error::exit`].

pub mod commands;
pub mod config;
pub mod error;
pub mod input;
pub mod output;
pub mod records;
pub mod validate;

pub use commands::{run, Cli};
pub use error::{exit, CliError};

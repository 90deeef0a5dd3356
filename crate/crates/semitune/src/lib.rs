//! File formats, configuration and the `semitune` command-line tool built on
//! [`semitune_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod format;
pub mod metrics;

pub use error::CliError;

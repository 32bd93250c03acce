//! Bandwidth-file formats, configuration loading, result files and the
//! `bwscan` command line on top of `bwscan-core`.

pub mod bwfile;
pub mod cli;
pub mod config;
pub mod error;
pub mod output;

pub use error::{CliError, CliResult};

//! Batch command-line front end for the `nilink` library: dataset building,
//! training, prediction and evaluation, each run recorded in a replayable
//! manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use commands::{dispatch, replay, Command};
pub use config::{Method, RunConfig, Threshold};
pub use error::{CliError, CliResult, ErrorKind};
pub use manifest::Manifest;

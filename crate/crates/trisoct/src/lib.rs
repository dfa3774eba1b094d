//! File formats, experiment configuration and command implementations for
//! the `trisoct` CLI.
//!
//! Volumes and projection stacks are stored as raw little-endian `f64`
//! with a JSON sidecar ([`io`]). An experiment file ([`config`]) ties a
//! phantom, a scan geometry, acquisition settings and reconstruction
//! parameters together; [`experiment`] runs the commands on it.

use std::path::PathBuf;

pub mod config;
pub mod experiment;
pub mod io;
pub mod render;

pub use config::{Experiment, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] trisoct_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("format error: {0}")]
    Format(String),
}

impl CliError {
    /// 2 for bad configuration or parameters, 3 for numerical failure,
    /// 1 for IO and file-format problems.
    pub fn exit_code(&self) -> i32 {
        use trisoct_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::NonFiniteCost { .. } | E::Data(_)) => 3,
            CliError::Core(_) => 2,
            CliError::Io { .. } | CliError::Format(_) => 1,
        }
    }
}

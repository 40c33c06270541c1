//! Library side of the `tnshield` command-line tool: configuration, image
//! IO, batch orchestration and JSON reports. The binary is a thin clap
//! wrapper around [`commands`].

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod imageio;
pub mod report;

pub use config::{Overrides, RunConfig};

#[derive(Error, Debug)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Tnz(#[from] tnshield_core::tnz::TnzError),

    #[error(transparent)]
    Format(#[from] tnshield_core::formats::FormatError),

    #[error(transparent)]
    Quantize(#[from] tnshield_core::quantize::QuantizeError),

    #[error(transparent)]
    Analysis(#[from] tnshield_core::analysis::AnalysisError),

    #[error(transparent)]
    Detect(#[from] tnshield_core::detect::DetectError),

    #[error(transparent)]
    Tensor(#[from] tnshield_core::TensorError),

    #[error("report: {0}")]
    Report(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Errors that abort the whole run (as opposed to a single batch item).
    pub fn is_usage(&self) -> bool {
        matches!(self, CliError::Config(_) | CliError::Usage(_))
    }
}

/// Maps `f` over `items` on `jobs` worker threads. Results keep input order.
pub fn run_batch<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>, CliError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if jobs <= 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

//! JSON report envelope.
//!
//! Every command emits
//!
//! ```text
//! { "tool": "tnshield", "version": "...", "command": "...",
//!   "config": { ...effective RunConfig... },
//!   "items": [ ...one entry per input, in input order... ],
//!   "summary": { ... } }
//! ```
//!
//! Item entries always carry `input` and `status` (`"ok"` or `"failed"`,
//! with `error` on failure). Wall-clock fields live under `timings_ms` and
//! are omitted with `--no-timings`, which makes reports byte-identical
//! across runs and worker counts.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::{CliError, RunConfig};

#[derive(Debug, Clone, Serialize)]
pub struct Report<I, S> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: RunConfig,
    pub items: Vec<I>,
    pub summary: S,
}

impl<I: Serialize, S: Serialize> Report<I, S> {
    pub fn new(command: &'static str, config: &RunConfig, items: Vec<I>, summary: S) -> Self {
        // the worker count must not leak into otherwise identical reports
        let config = RunConfig {
            jobs: None,
            ..config.clone()
        };
        Self {
            tool: "tnshield",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            items,
            summary,
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Report(e.to_string()))
    }
}

/// Writes to `path`, or stdout when `None`.
pub fn emit(json: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, format!("{json}\n")).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{json}").and_then(|_| out.flush()) {
                // a closed pipe (e.g. `| head`) is not an error
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(CliError::io(Path::new("<stdout>"), e))
                }
                _ => Ok(()),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// Milliseconds since `start`, rounded to microseconds.
pub fn elapsed_ms(start: Instant) -> f64 {
    (start.elapsed().as_secs_f64() * 1e6).round() / 1e3
}

//! Run configuration: TOML file, then command-line overrides, then
//! validation. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tnshield_core::detect::DetectionConfig;
use tnshield_core::formats::{CpOptions, NetworkFormat, RankPolicy};
use tnshield_core::quantize::{LloydOptions, QuantizerKind, QuantizerPlan};
use tnshield_core::RobustBinConfig;

use crate::CliError;

pub const JOBS_ENV: &str = "TNSHIELD_JOBS";

/// Relative error target used when neither a tolerance nor ranks are given.
pub const DEFAULT_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub failure_threshold: f64,
}

impl Default for CpSettings {
    fn default() -> Self {
        let d = CpOptions::default();
        Self {
            max_iter: d.max_iter,
            tol: d.tol,
            failure_threshold: d.failure_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerSettings {
    /// Force one quantizer for every subtensor; unset picks per subtensor by
    /// kurtosis.
    pub kind: Option<QuantizerKind>,
    pub lloyd: LloydOptions,
}

impl QuantizerSettings {
    pub fn plan(&self) -> QuantizerPlan {
        QuantizerPlan {
            overrides: Vec::new(),
            force: self.kind,
            lloyd: self.lloyd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    pub nmi_bins: usize,
    /// Include every TT step's singular values in analysis reports.
    pub spectra: bool,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            nmi_bins: tnshield_core::analysis::DEFAULT_NMI_BINS,
            spectra: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format: NetworkFormat,
    /// Relative reconstruction error target. Unset means 0.1, or exact
    /// (caps only) when `ranks` is given.
    pub tolerance: Option<f64>,
    /// Rank caps: one value for every position, or one per position.
    pub ranks: Option<Vec<usize>>,
    /// Use the robust (binned) TT-SVD when compressing.
    pub robust: bool,
    pub robust_svd: RobustBinConfig,
    pub quantizer: QuantizerSettings,
    pub cp: CpSettings,
    pub detection: DetectionConfig,
    pub analysis: AnalysisSettings,
    pub seed: u64,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format: NetworkFormat::Tt,
            tolerance: None,
            ranks: None,
            robust: false,
            robust_svd: RobustBinConfig::default(),
            quantizer: QuantizerSettings::default(),
            cp: CpSettings::default(),
            detection: DetectionConfig::default(),
            analysis: AnalysisSettings::default(),
            seed: 0,
            jobs: None,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub format: Option<NetworkFormat>,
    pub tolerance: Option<f64>,
    pub ranks: Option<Vec<usize>>,
    pub robust: bool,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub slope: Option<f64>,
    pub trunc: Option<f64>,
    pub threshold: Option<f64>,
    pub quantizer: Option<QuantizerKind>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(f) = o.format {
            self.format = f;
        }
        if o.tolerance.is_some() {
            self.tolerance = o.tolerance;
        }
        if o.ranks.is_some() {
            self.ranks = o.ranks.clone();
        }
        self.robust |= o.robust;
        if o.alpha.is_some() {
            self.robust_svd.alpha = o.alpha;
            self.detection.alpha = o.alpha;
        }
        if let Some(b) = o.beta {
            self.robust_svd.beta = b;
        }
        if let Some(s) = o.slope {
            self.detection.target_slope = s;
        }
        if let Some(e) = o.trunc {
            self.detection.truncation_error = e;
        }
        if let Some(t) = o.threshold {
            self.detection.l2_threshold = t;
        }
        if o.quantizer.is_some() {
            self.quantizer.kind = o.quantizer;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.jobs.is_some() {
            self.jobs = o.jobs;
        }
    }

    pub fn effective_tolerance(&self) -> f64 {
        match (self.tolerance, &self.ranks) {
            (Some(t), _) => t,
            (None, Some(_)) => 0.0,
            (None, None) => DEFAULT_TOLERANCE,
        }
    }

    pub fn rank_policy(&self) -> RankPolicy {
        RankPolicy {
            tolerance: self.effective_tolerance(),
            max_ranks: self.ranks.clone(),
        }
    }

    pub fn cp_options(&self) -> Result<CpOptions, CliError> {
        let rank = match self.ranks.as_deref() {
            Some([r]) => *r,
            Some(rs) => {
                return Err(CliError::Config(format!(
                    "CP takes a single rank, got {} values",
                    rs.len()
                )))
            }
            None => return Err(CliError::Config("CP needs a rank (--ranks R)".into())),
        };
        Ok(CpOptions {
            rank,
            max_iter: self.cp.max_iter,
            tol: self.cp.tol,
            seed: self.seed,
            failure_threshold: self.cp.failure_threshold,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if let Some(t) = self.tolerance {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("tolerance must be >= 0, got {t}"));
            }
        }
        if let Some(r) = &self.ranks {
            if r.is_empty() || r.contains(&0) {
                return bad(format!("ranks must be non-empty and >= 1, got {r:?}"));
            }
        }
        if self.format == NetworkFormat::Cp {
            self.cp_options()?;
            if !(self.cp.failure_threshold > 0.0) || self.cp.max_iter == 0 {
                return bad("cp.failure_threshold must be > 0 and cp.max_iter >= 1".into());
            }
        }
        if self.robust && self.format != NetworkFormat::Tt {
            return bad(format!(
                "robust SVD is only available for tt, not {}",
                self.format.name()
            ));
        }
        self.robust_svd
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.detection
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.analysis.nmi_bins == 0 {
            return bad("analysis.nmi_bins must be >= 1".into());
        }
        if self.jobs == Some(0) {
            return bad("jobs must be >= 1".into());
        }
        Ok(())
    }

    /// Worker count: explicit setting, then `TNSHIELD_JOBS`, then the number
    /// of available cores.
    pub fn resolve_jobs(&self) -> Result<usize, CliError> {
        if let Some(j) = self.jobs {
            return Ok(j);
        }
        match std::env::var(JOBS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(j) if j >= 1 => Ok(j),
                _ => Err(CliError::Config(format!(
                    "{JOBS_ENV} must be a positive integer, got {v:?}"
                ))),
            },
            Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }
}

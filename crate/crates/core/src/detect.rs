//! Residual test for strong additive perturbations.
//!
//! An image is decomposed with a robust TT-SVD (binned spectrum, tolerance
//! truncation) and reconstructed; perturbations that do not follow the
//! image's low-rank structure survive as a large ℓ2 residual. The test only
//! applies to images whose clean residual is already small (the eligibility
//! gate).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{normalized_l2_dissimilarity, AnalysisError};
use crate::formats::{tt_reconstruct, tt_svd, FormatError, RankPolicy};
use crate::svd::RobustBinConfig;
use crate::tensor::{norm2, DenseTensor};

/// Element count (299 × 299 × 3) the default threshold is calibrated for.
pub const REFERENCE_ELEMENTS: usize = 299 * 299 * 3;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DetectError {
    #[error("invalid detection config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    /// Decay rate of the binned cumulative spectrum; the bin ladder grows as
    /// `e^{|target_slope|·z}`.
    pub target_slope: f64,
    /// Relative truncation error of the robust TT-SVD.
    pub truncation_error: f64,
    /// Residual threshold at [`REFERENCE_ELEMENTS`] elements, in 0..255 units.
    pub l2_threshold: f64,
    /// Maximum pixel value of the input; inputs are rescaled to 0..255.
    pub pixel_scale: f64,
    /// Scale the threshold by `sqrt(elements / REFERENCE_ELEMENTS)`.
    pub scale_threshold: bool,
    /// First bin edge; `None` derives it from the spectrum.
    pub alpha: Option<f64>,
    pub max_bins: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            target_slope: -0.03,
            truncation_error: 0.03,
            l2_threshold: 1000.0,
            pixel_scale: 255.0,
            scale_threshold: true,
            alpha: None,
            max_bins: 512,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::InvalidConfig(m));
        if !(self.target_slope != 0.0 && self.target_slope.is_finite()) {
            return bad(format!(
                "target_slope must be finite and non-zero, got {}",
                self.target_slope
            ));
        }
        if !(self.truncation_error >= 0.0 && self.truncation_error.is_finite()) {
            return bad(format!(
                "truncation_error must be >= 0, got {}",
                self.truncation_error
            ));
        }
        if !(self.l2_threshold > 0.0 && self.l2_threshold.is_finite()) {
            return bad(format!(
                "l2_threshold must be > 0, got {}",
                self.l2_threshold
            ));
        }
        if !(self.pixel_scale > 0.0 && self.pixel_scale.is_finite()) {
            return bad(format!("pixel_scale must be > 0, got {}", self.pixel_scale));
        }
        self.robust_config()
            .validate()
            .map_err(|e| DetectError::InvalidConfig(e.to_string()))
    }

    pub fn robust_config(&self) -> RobustBinConfig {
        RobustBinConfig {
            alpha: self.alpha,
            beta: self.target_slope.abs(),
            max_bins: self.max_bins,
        }
    }

    /// Threshold for a tensor with `elements` entries.
    pub fn threshold_for(&self, elements: usize) -> f64 {
        if self.scale_threshold {
            self.l2_threshold * (elements as f64 / REFERENCE_ELEMENTS as f64).sqrt()
        } else {
            self.l2_threshold
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub eligible: bool,
    pub residual_norm: f64,
    pub flagged: bool,
    /// Normalized ℓ2-dissimilarity between the input and its reconstruction.
    pub reconstruction_dissimilarity: f64,
    pub threshold: f64,
    pub baseline_residual: Option<f64>,
    /// Set when eligibility could not be checked against a clean baseline.
    pub caveat: Option<String>,
}

fn to_pixel_units(t: &DenseTensor, cfg: &DetectionConfig) -> Result<DenseTensor, DetectError> {
    if cfg.pixel_scale == 255.0 {
        return Ok(t.clone());
    }
    let k = 255.0 / cfg.pixel_scale;
    DenseTensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * k).collect())
        .map_err(|e| DetectError::Format(e.into()))
}

/// Robust TT-SVD reconstruction of `image` (decomposition layout, see
/// [`crate::analysis::image_to_rcw`]) and the residual `‖image − rec‖` in
/// 0..255 pixel units. The reconstruction is returned in input units.
pub fn robust_reconstruct(
    image: &DenseTensor,
    cfg: &DetectionConfig,
) -> Result<(DenseTensor, f64), DetectError> {
    cfg.validate()?;
    let tt = tt_svd(
        image,
        &RankPolicy::tolerance(cfg.truncation_error),
        Some(&cfg.robust_config()),
    )?;
    let rec = tt_reconstruct(&tt)?;
    let diff: Vec<f64> = image
        .data()
        .iter()
        .zip(rec.data())
        .map(|(a, b)| a - b)
        .collect();
    let residual = norm2(&diff) * 255.0 / cfg.pixel_scale;
    Ok((rec, residual))
}

/// Flags `image` when its residual exceeds the threshold, provided the clean
/// `baseline` (when given) is eligible, i.e. its own residual is below the
/// threshold. Without a baseline the image is assumed eligible and a caveat
/// is recorded.
pub fn detect(
    image: &DenseTensor,
    cfg: &DetectionConfig,
    baseline: Option<&DenseTensor>,
) -> Result<DetectionVerdict, DetectError> {
    cfg.validate()?;
    let threshold = cfg.threshold_for(image.len());
    let (rec, residual_norm) = robust_reconstruct(image, cfg)?;
    let reconstruction_dissimilarity = normalized_l2_dissimilarity(
        &[to_pixel_units(image, cfg)?],
        &[to_pixel_units(&rec, cfg)?],
    )
    .unwrap_or(0.0);
    let (eligible, baseline_residual, caveat) = match baseline {
        Some(b) => {
            let (_, r) = robust_reconstruct(b, cfg)?;
            (r < threshold, Some(r), None)
        }
        None => (
            true,
            None,
            Some("no clean baseline supplied; eligibility assumed".to_string()),
        ),
    };
    Ok(DetectionVerdict {
        eligible,
        residual_norm,
        flagged: eligible && residual_norm > threshold,
        reconstruction_dissimilarity,
        threshold,
        baseline_residual,
        caveat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_scene(h: usize, w: usize) -> DenseTensor {
        // rank-2 colour scene in (rows, channels, columns) layout
        DenseTensor::from_fn(vec![h, 3, w], |i| {
            let (y, c, x) = (i[0] as f64 / h as f64, i[1] as f64, i[2] as f64 / w as f64);
            80.0 + 60.0 * (1.0 - y) * (1.0 + 0.2 * c)
                + 50.0 * (-((x - 0.5) * 4.0).powi(2)).exp() * (y + 0.3)
        })
        .unwrap()
    }

    fn with_noise(t: &DenseTensor, amp: f64, seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = t
            .data()
            .iter()
            .map(|v| v + amp * rng.random_range(-1.0..1.0))
            .collect();
        DenseTensor::new(t.shape().to_vec(), data).unwrap()
    }

    #[test]
    fn constant_image_has_no_residual() {
        let t = DenseTensor::new(vec![20, 3, 20], vec![128.0; 1200]).unwrap();
        let (_, r) = robust_reconstruct(&t, &DetectionConfig::default()).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn smooth_scene_is_below_threshold() {
        let t = smooth_scene(64, 64);
        let cfg = DetectionConfig::default();
        let (_, r) = robust_reconstruct(&t, &cfg).unwrap();
        assert!(r < 0.25 * cfg.threshold_for(t.len()), "{r}");
    }

    #[test]
    fn residual_grows_with_noise() {
        let t = smooth_scene(64, 64);
        let cfg = DetectionConfig::default();
        let mut last = robust_reconstruct(&t, &cfg).unwrap().1;
        for amp in [5.0, 10.0, 20.0, 40.0] {
            let r = robust_reconstruct(&with_noise(&t, amp, 1), &cfg).unwrap().1;
            assert!(r > last, "{amp}: {r} <= {last}");
            last = r;
        }
    }

    #[test]
    fn verdict_consistency() {
        let t = smooth_scene(64, 64);
        let cfg = DetectionConfig::default();
        let clean = detect(&t, &cfg, Some(&t)).unwrap();
        assert!(clean.eligible && !clean.flagged);
        let noisy = with_noise(&t, 60.0, 2);
        let v = detect(&noisy, &cfg, Some(&t)).unwrap();
        assert!(v.eligible && v.flagged, "{v:?}");
        assert_eq!(v.flagged, v.residual_norm > v.threshold);
        let no_base = detect(&noisy, &cfg, None).unwrap();
        assert!(no_base.eligible && no_base.caveat.is_some());
    }

    #[test]
    fn ineligible_baseline_never_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let busy = DenseTensor::from_fn(vec![64, 3, 64], |_| rng.random_range(0.0..255.0)).unwrap();
        let cfg = DetectionConfig::default();
        let v = detect(&with_noise(&busy, 60.0, 4), &cfg, Some(&busy)).unwrap();
        assert!(!v.eligible && !v.flagged);
    }

    #[test]
    fn threshold_scaling() {
        let cfg = DetectionConfig::default();
        assert_eq!(cfg.threshold_for(REFERENCE_ELEMENTS), 1000.0);
        assert!((cfg.threshold_for(REFERENCE_ELEMENTS * 4) - 2000.0).abs() < 1e-9);
        let fixed = DetectionConfig {
            scale_threshold: false,
            ..Default::default()
        };
        assert_eq!(fixed.threshold_for(10), 1000.0);
    }

    #[test]
    fn unit_scale_input_matches_byte_scale() {
        let t = smooth_scene(32, 32);
        let unit = DenseTensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| v / 255.0).collect(),
        )
        .unwrap();
        let a = robust_reconstruct(&t, &DetectionConfig::default())
            .unwrap()
            .1;
        let cfg = DetectionConfig {
            pixel_scale: 1.0,
            ..Default::default()
        };
        let b = robust_reconstruct(&unit, &cfg).unwrap().1;
        assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            DetectionConfig {
                target_slope: 0.0,
                ..Default::default()
            },
            DetectionConfig {
                truncation_error: -1.0,
                ..Default::default()
            },
            DetectionConfig {
                l2_threshold: 0.0,
                ..Default::default()
            },
            DetectionConfig {
                pixel_scale: f64::NAN,
                ..Default::default()
            },
            DetectionConfig {
                max_bins: 0,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}

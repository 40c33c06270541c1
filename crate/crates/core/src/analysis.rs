//! Measurements: normalized ℓ2-dissimilarity, TT-SVD decay slope, histogram
//! NMI between subtensors, top-k reconstruction and smoothing filters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{tt_svd_traced, FormatError, RankPolicy};
use crate::svd::{self, SlopeEstimate, SvdError, SLOPE_HI, SLOPE_LO};
use crate::tensor::{norm2, DenseTensor, Matrix, TensorError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("input {0} has zero norm")]
    ZeroNormInput(usize),

    #[error("batch sizes differ: {0} vs {1}")]
    BatchMismatch(usize, usize),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid smoothing kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid bin count {0}")]
    InvalidBins(usize),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Svd(#[from] SvdError),

    #[error(transparent)]
    Format(#[from] FormatError),
}

/// `(1/N) Σ_n ‖x_n − x'_n‖ / ‖x_n‖` over flattened tensors.
pub fn normalized_l2_dissimilarity(
    originals: &[DenseTensor],
    perturbed: &[DenseTensor],
) -> Result<f64, AnalysisError> {
    if originals.len() != perturbed.len() {
        return Err(AnalysisError::BatchMismatch(
            originals.len(),
            perturbed.len(),
        ));
    }
    if originals.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut total = 0.0;
    for (n, (x, y)) in originals.iter().zip(perturbed).enumerate() {
        if x.shape() != y.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "batch item {n}: {:?} vs {:?}",
                x.shape(),
                y.shape()
            ))
            .into());
        }
        let nx = x.frobenius_norm();
        if nx == 0.0 {
            return Err(AnalysisError::ZeroNormInput(n));
        }
        let diff: Vec<f64> = x.data().iter().zip(y.data()).map(|(a, b)| a - b).collect();
        total += norm2(&diff) / nx;
    }
    Ok(total / originals.len() as f64)
}

/// `H × W × C` image layout to the `(rows, channels, columns)` layout used
/// for decomposition. Order-2 (grayscale) tensors pass through.
pub fn image_to_rcw(image: &DenseTensor) -> Result<DenseTensor, TensorError> {
    match image.order() {
        3 => image.permute_modes(&[0, 2, 1]),
        _ => Ok(image.clone()),
    }
}

/// Inverse of [`image_to_rcw`] (the permutation is an involution).
pub fn rcw_to_image(t: &DenseTensor) -> Result<DenseTensor, TensorError> {
    image_to_rcw(t)
}

/// Decay slopes of one tensor's TT-SVD sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub steps: Vec<SlopeEstimate>,
    /// Mean of the per-step slopes.
    pub mean_slope: f64,
}

/// Slope statistics across a batch, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSlope {
    pub reports: Vec<SlopeReport>,
    pub mean_slope: f64,
    /// Population (not sample) standard deviation of the per-input means.
    pub population_std: f64,
}

/// Untruncated TT-SVD sweep with the log-linear decay slope of every step's
/// spectrum over indices 5..=25, averaged. Ranks below 25 clamp the upper
/// index; ranks below 6 leave the slope undefined (error).
///
/// `t` is expected in decomposition layout (see [`image_to_rcw`]).
pub fn tt_svd_slope(t: &DenseTensor) -> Result<SlopeReport, AnalysisError> {
    let sweep = tt_svd_traced(t, &RankPolicy::exact(), None)?;
    let steps = sweep
        .spectra
        .iter()
        .map(|s| svd::decay_slope_clamped(s, SLOPE_LO, SLOPE_HI))
        .collect::<Result<Vec<_>, _>>()?;
    let mean_slope = steps.iter().map(|e| e.slope).sum::<f64>() / steps.len() as f64;
    Ok(SlopeReport { steps, mean_slope })
}

/// Aggregates per-input reports in the order given.
pub fn batch_slope(reports: Vec<SlopeReport>) -> Result<BatchSlope, AnalysisError> {
    if reports.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let n = reports.len() as f64;
    let mean_slope = reports.iter().map(|r| r.mean_slope).sum::<f64>() / n;
    let var = reports
        .iter()
        .map(|r| (r.mean_slope - mean_slope).powi(2))
        .sum::<f64>()
        / n;
    Ok(BatchSlope {
        reports,
        mean_slope,
        population_std: var.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmiNormalization {
    /// `2I / (H_a + H_b)`
    #[default]
    Arithmetic,
    /// `I / sqrt(H_a · H_b)`
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmiResult {
    pub value: f64,
    pub bins: usize,
    /// Entropies in bits.
    pub entropy_a: f64,
    pub entropy_b: f64,
    /// At least one input was constant; `value` is then 1 for identical
    /// inputs and 0 otherwise.
    pub degenerate: bool,
}

pub const DEFAULT_NMI_BINS: usize = 256;

fn bin_codes(x: &[f64], bins: usize) -> (Vec<usize>, bool) {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    if hi <= lo {
        return (vec![0; x.len()], true);
    }
    let w = hi - lo;
    let codes = x
        .iter()
        .map(|&v| (((v - lo) / w * bins as f64) as usize).min(bins - 1))
        .collect();
    (codes, false)
}

fn entropy_bits(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Histogram NMI with equal-width bins over each array's own range.
/// Arrays of different length are truncated to the shorter one.
pub fn nmi(a: &[f64], b: &[f64], bins: usize) -> Result<NmiResult, AnalysisError> {
    nmi_with(a, b, bins, NmiNormalization::Arithmetic)
}

pub fn nmi_with(
    a: &[f64],
    b: &[f64],
    bins: usize,
    norm: NmiNormalization,
) -> Result<NmiResult, AnalysisError> {
    if bins == 0 {
        return Err(AnalysisError::InvalidBins(bins));
    }
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(AnalysisError::EmptyInput);
    }
    let (a, b) = (&a[..n], &b[..n]);
    let (ca, dega) = bin_codes(a, bins);
    let (cb, degb) = bin_codes(b, bins);
    let nf = n as f64;

    let mut ma = vec![0usize; bins];
    let mut mb = vec![0usize; bins];
    ca.iter().for_each(|&i| ma[i] += 1);
    cb.iter().for_each(|&j| mb[j] += 1);
    let (ha, hb) = (
        entropy_bits(ma.iter().copied(), nf),
        entropy_bits(mb.iter().copied(), nf),
    );

    let identical = a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    if dega || degb || identical {
        let value = if identical { 1.0 } else { 0.0 };
        return Ok(NmiResult {
            value,
            bins,
            entropy_a: ha,
            entropy_b: hb,
            degenerate: dega || degb,
        });
    }

    // accumulate with a canonical argument order so that swapping the inputs
    // gives a bitwise identical value
    let (first, second, m1, m2) = if a
        .iter()
        .map(|x| x.to_bits())
        .lt(b.iter().map(|x| x.to_bits()))
    {
        (&ca, &cb, &ma, &mb)
    } else {
        (&cb, &ca, &mb, &ma)
    };
    let mut joint = vec![0usize; bins * bins];
    for (&i, &j) in first.iter().zip(second) {
        joint[i * bins + j] += 1;
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let pij = c as f64 / nf;
                let pi = m1[i] as f64 / nf;
                let pj = m2[j] as f64 / nf;
                mi += pij * (pij / (pi * pj)).log2();
            }
        }
    }
    let mi = mi.max(0.0);
    let value = match norm {
        NmiNormalization::Arithmetic => 2.0 * mi / (ha + hb),
        NmiNormalization::Geometric => mi / (ha * hb).sqrt(),
    };
    Ok(NmiResult {
        value: value.clamp(0.0, 1.0),
        bins,
        entropy_a: ha,
        entropy_b: hb,
        degenerate: false,
    })
}

/// Rank-`k` truncated SVD reconstruction.
pub fn topk_reconstruct(m: &Matrix, k: usize) -> Result<Matrix, AnalysisError> {
    let f = svd::svd(m)?;
    if k == 0 || k > f.rank() {
        return Err(SvdError::InsufficientRank {
            available: f.rank(),
            required: k,
        }
        .into());
    }
    Ok(f.leading(k).reconstruct())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    Gaussian {
        sigma: f64,
    },
    /// Square window of odd width.
    Median {
        window: usize,
    },
}

/// Reflects an out-of-range index back into `0..n` (edge sample repeated:
/// `d c b a | a b c d | d c b a`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Per-channel 2-D filtering of an `H × W` or `H × W × C` image with
/// reflected borders.
pub fn smooth(t: &DenseTensor, kind: Smoothing) -> Result<DenseTensor, AnalysisError> {
    let (h, w, c) = match t.shape() {
        &[h, w] => (h, w, 1),
        &[h, w, c] => (h, w, c),
        s => {
            return Err(AnalysisError::InvalidKernel(format!(
                "expected an image, got shape {s:?}"
            )))
        }
    };
    let mut out = t.clone();
    match kind {
        Smoothing::Gaussian { sigma } => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(AnalysisError::InvalidKernel(format!(
                    "sigma must be > 0, got {sigma}"
                )));
            }
            let radius = (4.0 * sigma + 0.5) as isize;
            let mut k: Vec<f64> = (-radius..=radius)
                .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
                .collect();
            let total: f64 = k.iter().sum();
            k.iter_mut().for_each(|v| *v /= total);
            let src = t.data();
            let mut tmp = vec![0.0; src.len()];
            // rows pass (along W), then columns pass (along H)
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        tmp[(y * w + x) * c + ch] = k
                            .iter()
                            .enumerate()
                            .map(|(o, kv)| {
                                kv * src[(y * w + reflect(x as isize + o as isize - radius, w)) * c
                                    + ch]
                            })
                            .sum();
                    }
                }
            }
            let dst = out.data_mut();
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        dst[(y * w + x) * c + ch] = k
                            .iter()
                            .enumerate()
                            .map(|(o, kv)| {
                                kv * tmp[(reflect(y as isize + o as isize - radius, h) * w + x) * c
                                    + ch]
                            })
                            .sum();
                    }
                }
            }
        }
        Smoothing::Median { window } => {
            if window < 3 || window % 2 == 0 {
                return Err(AnalysisError::InvalidKernel(format!(
                    "median window must be odd and >= 3, got {window}"
                )));
            }
            let r = (window / 2) as isize;
            let src = t.data();
            let dst = out.data_mut();
            let mut buf = Vec::with_capacity(window * window);
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        buf.clear();
                        for dy in -r..=r {
                            let yy = reflect(y as isize + dy, h);
                            for dx in -r..=r {
                                let xx = reflect(x as isize + dx, w);
                                buf.push(src[(yy * w + xx) * c + ch]);
                            }
                        }
                        let mid = buf.len() / 2;
                        let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
                        dst[(y * w + x) * c + ch] = *m;
                    }
                }
            }
        }
    }
    Ok(out)
}

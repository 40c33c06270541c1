//! Matrix SVD, truncation, robust (binned) SVD and singular-value decay slopes.
//!
//! The plain decomposition is delegated to faer's bidiagonal divide-and-conquer kernel and
//! post-processed here: a deterministic
//! sign convention (first significant entry of every left singular vector is
//! non-negative, the matching right vector is flipped along with it).
//!
//! [`robust_svd`] merges singular triplets whose reverse cumulative sums fall
//! into the same bin of an exponential ladder `0, α, αe^β, αe^{2β}, ...`.
//! Singular values in a bin are summed, vectors averaged and renormalized.
//! Merged vectors are unit norm but no longer mutually orthogonal.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Matrix, TensorError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SvdError {
    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    ConvergenceFailure { rows: usize, cols: usize },

    #[error("need at least {required} singular values, have {available}")]
    InsufficientRank { available: usize, required: usize },

    #[error("singular value #{index} is {value}, expected > 0")]
    NonPositiveValue { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// `U · diag(S) · Vᵀ` with `U: m×r`, `V: n×r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        us.scale_columns(&self.s);
        us.matmul(&self.v.transpose())
            .expect("factor shapes agree by construction")
    }

    /// Keeps the leading `k` triplets.
    pub fn leading(&self, k: usize) -> SvdFactors {
        let k = k.min(self.rank());
        SvdFactors {
            u: self.u.leading_columns(k),
            s: self.s[..k].to_vec(),
            v: self.v.leading_columns(k),
        }
    }

    /// `diag(S) · Vᵀ`, the part carried forward in sequential sweeps.
    pub fn s_vt(&self) -> Matrix {
        let mut vt = self.v.transpose();
        vt.scale_rows(&self.s);
        vt
    }
}

/// Thin SVD with descending singular values.
pub fn svd(a: &Matrix) -> Result<SvdFactors, SvdError> {
    let (m, n) = (a.rows(), a.cols());
    if m == 0 || n == 0 {
        return Err(SvdError::InvalidConfig(format!(
            "cannot decompose a {m}x{n} matrix"
        )));
    }
    let dec = a
        .to_faer()
        .thin_svd()
        .map_err(|_| SvdError::ConvergenceFailure { rows: m, cols: n })?;
    let mut u = Matrix::from_faer(dec.U());
    let mut v = Matrix::from_faer(dec.V());
    let s: Vec<f64> = dec.S().column_vector().iter().map(|x| x.max(0.0)).collect();
    if s.iter()
        .chain(u.data())
        .chain(v.data())
        .any(|x| !x.is_finite())
    {
        return Err(SvdError::ConvergenceFailure { rows: m, cols: n });
    }
    fix_signs(&mut u, &mut v);
    Ok(SvdFactors { u, s, v })
}

/// Makes the first significant entry of each `u` column non-negative.
fn fix_signs(u: &mut Matrix, v: &mut Matrix) {
    for j in 0..u.cols() {
        let col = u.column(j);
        let scale = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let first = col.iter().find(|x| x.abs() > 1e-10 * scale);
        if let Some(&x) = first {
            if x < 0.0 {
                for i in 0..u.rows() {
                    u.set(i, j, -u.get(i, j));
                }
                for i in 0..v.rows() {
                    v.set(i, j, -v.get(i, j));
                }
            }
        }
    }
}

/// How many leading singular values to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Keep exactly this many (clamped to the available rank).
    Rank(usize),
    /// Keep the shortest prefix whose discarded energy is at most `δ·‖A‖_F`,
    /// with `‖A‖_F = sqrt(Σ S²)`.
    Tolerance(f64),
    /// Keep the shortest prefix whose discarded energy is at most this
    /// absolute amount.
    Budget(f64),
}

/// Length of the shortest prefix of `s` with `sqrt(Σ_{i≥k} s_i²) ≤ budget`.
pub fn prefix_rank_for_budget(s: &[f64], budget: f64) -> usize {
    let mut tail = 0.0f64;
    let mut k = s.len();
    // grow the discarded tail from the back while it stays within budget
    while k > 0 {
        let next = tail + s[k - 1] * s[k - 1];
        if next.sqrt() > budget {
            break;
        }
        tail = next;
        k -= 1;
    }
    k
}

fn tail_energy(s: &[f64], k: usize) -> f64 {
    s[k.min(s.len())..]
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Applies `policy` and returns the kept factors with the discarded energy
/// `sqrt(Σ discarded S²)`.
pub fn truncate(f: &SvdFactors, policy: Truncation) -> (SvdFactors, f64) {
    let k = match policy {
        Truncation::Rank(r) => r.min(f.rank()),
        Truncation::Tolerance(delta) => {
            let total = f.s.iter().map(|x| x * x).sum::<f64>().sqrt();
            prefix_rank_for_budget(&f.s, delta * total)
        }
        Truncation::Budget(b) => prefix_rank_for_budget(&f.s, b),
    };
    (f.leading(k), tail_energy(&f.s, k))
}

/// Parameters of the exponential bin ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustBinConfig {
    /// First bin edge. `None` derives `ΣS·e^{-β·max_bins}` from the spectrum
    /// so that the ladder always reaches the largest tail sum.
    pub alpha: Option<f64>,
    /// Log-scale growth rate of the bin edges.
    pub beta: f64,
    pub max_bins: usize,
}

impl Default for RobustBinConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            beta: 0.03,
            max_bins: 512,
        }
    }
}

impl RobustBinConfig {
    pub fn with_beta(beta: f64) -> Self {
        Self {
            beta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SvdError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(SvdError::InvalidConfig(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(SvdError::InvalidConfig(format!(
                    "alpha must be positive, got {a}"
                )));
            }
        }
        if self.max_bins == 0 {
            return Err(SvdError::InvalidConfig("max_bins must be >= 1".into()));
        }
        Ok(())
    }

    /// First bin edge for a spectrum summing to `total`. The derived edge
    /// spans at most `e^{-600}` below `total` so that it stays a normal float
    /// for large `β · max_bins`; the ladder then still covers `total`.
    pub fn alpha_for(&self, total: f64) -> f64 {
        self.alpha.unwrap_or_else(|| {
            let span = (self.beta * self.max_bins as f64).min(600.0);
            (total * (-span).exp()).max(f64::MIN_POSITIVE)
        })
    }
}

/// Bin index of `x` on the ladder `[0, α, αe^β, ...]`: `0` for `x ≤ 0`,
/// otherwise `z + 1` for `x ∈ (αe^{β(z-1)}, αe^{βz}]` (with `αe^{-β}` read
/// as `0`).
pub fn bin_index(x: f64, alpha: f64, beta: f64) -> u64 {
    if x <= 0.0 {
        return 0;
    }
    let (lx, la) = (x.ln(), alpha.ln());
    // x ≤ αe^{βz}, in the log domain once the edge overflows
    let below = |z: u64| {
        let e = alpha * (beta * z as f64).exp();
        if e.is_finite() {
            x <= e
        } else {
            lx <= la + beta * z as f64
        }
    };
    // ln x - ln α rather than ln(x/α): the ratio overflows for tiny α.
    // The estimate is refined below; the clamp only guards the cast.
    let mut z = ((lx - la) / beta).ceil().clamp(0.0, 1e15) as u64;
    while z > 0 && below(z - 1) {
        z -= 1;
    }
    while !below(z) {
        z += 1;
    }
    z + 1
}

/// Output of [`robust_svd`].
#[derive(Debug, Clone, PartialEq)]
pub struct RobustSvd {
    pub factors: SvdFactors,
    /// Original (descending) indices merged into each output triplet.
    pub bins: Vec<Range<usize>>,
    /// Every singular value landed in one bin; the output is a rank-1 summary.
    pub degenerate: bool,
}

/// Robust SVD: plain SVD followed by binned merging of the spectrum.
pub fn robust_svd(
    a: &Matrix,
    cfg: &RobustBinConfig,
    truncation: Option<Truncation>,
) -> Result<RobustSvd, SvdError> {
    cfg.validate()?;
    let plain = svd(a)?;
    let mut merged = merge_bins(&plain, cfg);
    if let Some(policy) = truncation {
        let (kept, _) = truncate(&merged.factors, policy);
        merged.bins.truncate(kept.rank());
        merged.factors = kept;
    }
    Ok(merged)
}

/// Merging step of [`robust_svd`], applied to an existing plain SVD.
pub fn merge_bins(plain: &SvdFactors, cfg: &RobustBinConfig) -> RobustSvd {
    let s0 = &plain.s;
    let r = s0.len();
    let total: f64 = s0.iter().sum();
    let alpha = cfg.alpha_for(total);

    // reverse cumulative sums, non-increasing in i
    let mut tails = vec![0.0; r];
    let mut acc = 0.0;
    for i in (0..r).rev() {
        acc += s0[i];
        tails[i] = acc;
    }

    // tail sums are monotone, so equal bin indices form contiguous runs
    let mut runs: Vec<Range<usize>> = Vec::new();
    let mut start = 0;
    let mut current = tails.first().map(|&t| bin_index(t, alpha, cfg.beta));
    for i in 1..r {
        let b = bin_index(tails[i], alpha, cfg.beta);
        if Some(b) != current {
            runs.push(start..i);
            start = i;
            current = Some(b);
        }
    }
    if r > 0 {
        runs.push(start..r);
    }

    let mut merged: Vec<(f64, Vec<f64>, Vec<f64>, Range<usize>)> = runs
        .into_iter()
        .map(|run| {
            let s: f64 = s0[run.clone()].iter().sum();
            let u = mean_unit_column(&plain.u, run.clone());
            let v = mean_unit_column(&plain.v, run.clone());
            (s, u, v, run)
        })
        .collect();
    // stable: ties keep ladder order
    merged.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let k = merged.len();
    let mut u = Matrix::zeros(plain.u.rows(), k);
    let mut v = Matrix::zeros(plain.v.rows(), k);
    let mut s = Vec::with_capacity(k);
    let mut bins = Vec::with_capacity(k);
    for (j, (sv, uc, vc, run)) in merged.into_iter().enumerate() {
        s.push(sv);
        u.set_column(j, &uc);
        v.set_column(j, &vc);
        bins.push(run);
    }
    RobustSvd {
        degenerate: k == 1 && r > 1,
        factors: SvdFactors { u, s, v },
        bins,
    }
}

/// Arithmetic mean of the columns in `run`, scaled to unit norm. A mean that
/// cancels to zero falls back to the first member column.
fn mean_unit_column(m: &Matrix, run: Range<usize>) -> Vec<f64> {
    let count = run.len() as f64;
    let mut mean = vec![0.0; m.rows()];
    for j in run.clone() {
        for (i, acc) in mean.iter_mut().enumerate() {
            *acc += m.get(i, j);
        }
    }
    for x in &mut mean {
        *x /= count;
    }
    let norm = crate::tensor::norm2(&mean);
    if norm > 1e-300 {
        mean.iter().map(|x| x / norm).collect()
    } else {
        m.column(run.start)
    }
}

/// Least-squares fit of `ln S(k)` against `k` over a 1-based index range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub slope: f64,
    pub stderr: f64,
    /// Inclusive, 1-based.
    pub index_range: (usize, usize),
}

pub const SLOPE_LO: usize = 5;
pub const SLOPE_HI: usize = 25;

/// OLS slope of the natural log of `s` over indices `lo..=hi` (1-based).
pub fn decay_slope(s: &[f64], lo: usize, hi: usize) -> Result<SlopeEstimate, SvdError> {
    if lo < 1 || hi <= lo {
        return Err(SvdError::InvalidConfig(format!(
            "slope range must satisfy 1 <= lo < hi, got {lo}..{hi}"
        )));
    }
    if s.len() < hi {
        return Err(SvdError::InsufficientRank {
            available: s.len(),
            required: hi,
        });
    }
    let mut xs = Vec::with_capacity(hi - lo + 1);
    let mut ys = Vec::with_capacity(hi - lo + 1);
    for k in lo..=hi {
        let v = s[k - 1];
        if !(v > 0.0) {
            return Err(SvdError::NonPositiveValue { index: k, value: v });
        }
        xs.push(k as f64);
        ys.push(v.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if xs.len() > 2 {
        let ssr: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let e = y - (intercept + slope * x);
                e * e
            })
            .sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeEstimate {
        slope,
        stderr,
        index_range: (lo, hi),
    })
}

/// [`decay_slope`] with `hi` clamped to the numerical rank of `s`
/// (values above `1e-12·S_1`). The clamp shows up in `index_range`.
pub fn decay_slope_clamped(s: &[f64], lo: usize, hi: usize) -> Result<SlopeEstimate, SvdError> {
    let top = s.first().copied().unwrap_or(0.0);
    let numerical_rank = s
        .iter()
        .take_while(|&&v| v > top * 1e-12 && v > 0.0)
        .count();
    let hi_eff = hi.min(numerical_rank);
    if hi_eff <= lo {
        return Err(SvdError::InsufficientRank {
            available: numerical_rank,
            required: lo + 1,
        });
    }
    decay_slope(s, lo, hi_eff)
}

/// Rebuilds `target` from its own singular vectors and the singular values of
/// `source`. Both spectra are cut to the smaller rank; with `rescale` the
/// transplanted values are scaled so their sum matches the target's.
pub fn transfer_singular_values(
    source: &Matrix,
    target: &Matrix,
    rescale: bool,
) -> Result<Matrix, SvdError> {
    let fs = svd(source)?;
    let ft = svd(target)?;
    let r = fs.rank().min(ft.rank());
    let mut s: Vec<f64> = fs.s[..r].to_vec();
    if rescale {
        let src_sum: f64 = s.iter().sum();
        let tgt_sum: f64 = ft.s[..r].iter().sum();
        if src_sum > 0.0 {
            let c = tgt_sum / src_sum;
            s.iter_mut().for_each(|x| *x *= c);
        }
    }
    let out = SvdFactors {
        u: ft.u.leading_columns(r),
        s,
        v: ft.v.leading_columns(r),
    };
    Ok(out.reconstruct())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(m: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormal_columns(m: &Matrix) -> f64 {
        let g = m.t_matmul(m).unwrap();
        let mut worst = 0.0f64;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - want).abs());
            }
        }
        worst
    }

    #[test]
    fn identity_spectrum() {
        let f = svd(&Matrix::identity(3)).unwrap();
        for s in &f.s {
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_deficient_wide_matrix() {
        // outer product with a sign change; loses accuracy in some QR-iteration kernels
        let a = [1.87, -1.87, -5.61, -9.35];
        let m = Matrix::from_fn(4, 5, |i, j| a[i] * (0.3 * j as f64).exp());
        let f = svd(&m).unwrap();
        let r = f.leading(1).reconstruct();
        let err: f64 = r
            .data()
            .iter()
            .zip(m.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        assert!(err.sqrt() < 1e-12 * m.frobenius_norm());
    }

    #[test]
    fn diagonal_spectrum_and_vectors() {
        let a = Matrix::diag(&[3.0, 2.0, 1.0]);
        let f = svd(&a).unwrap();
        assert_eq!(f.s.len(), 3);
        for (s, want) in f.s.iter().zip([3.0, 2.0, 1.0]) {
            assert!((s - want).abs() < 1e-14);
        }
        // sign convention pins the vectors to the identity
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((f.u.get(i, j) - want).abs() < 1e-14);
                assert!((f.v.get(i, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn random_reconstruction_and_orthogonality() {
        for (m, n) in [(5, 4), (4, 5), (7, 7), (1, 6), (6, 1)] {
            let a = random_matrix(m, n, (m * 31 + n) as u64);
            let f = svd(&a).unwrap();
            assert_eq!(f.rank(), m.min(n));
            let rec = f.reconstruct();
            let err: f64 = a
                .data()
                .iter()
                .zip(rec.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-10 * a.frobenius_norm(), "{m}x{n}: {err}");
            assert!(orthonormal_columns(&f.u) < 1e-10);
            assert!(orthonormal_columns(&f.v) < 1e-10);
            assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn truncate_by_rank() {
        let f = svd(&Matrix::diag(&[3.0, 2.0, 1.0])).unwrap();
        let (t, e) = truncate(&f, Truncation::Rank(2));
        assert_eq!(t.s, vec![3.0, 2.0]);
        assert!((e - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_tolerance_keeps_everything() {
        let f = svd(&random_matrix(4, 6, 1)).unwrap();
        let (t, e) = truncate(&f, Truncation::Tolerance(0.0));
        assert_eq!(t, f);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn tolerance_prefix_rule() {
        let f = svd(&Matrix::diag(&[10.0, 1.0, 0.1])).unwrap();
        let norm = (100.0f64 + 1.0 + 0.01).sqrt();
        let (t, e) = truncate(&f, Truncation::Tolerance(1.01 / norm));
        assert_eq!(t.rank(), 1);
        assert!((t.s[0] - 10.0).abs() < 1e-12);
        assert!((e - 1.01f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn discarded_energy_is_reconstruction_gap() {
        let a = random_matrix(8, 6, 9);
        let f = svd(&a).unwrap();
        for k in 0..=6 {
            let (t, e) = truncate(&f, Truncation::Rank(k));
            let full = f.reconstruct();
            let gap = if k == 0 {
                full.frobenius_norm()
            } else {
                let part = t.reconstruct();
                let d: Vec<f64> = full
                    .data()
                    .iter()
                    .zip(part.data())
                    .map(|(x, y)| x - y)
                    .collect();
                crate::tensor::norm2(&d)
            };
            assert!((gap - e).abs() <= 1e-10 * e.max(1e-300) + 1e-14, "k={k}");
        }
    }

    #[test]
    fn bin_edges_are_half_open() {
        let (alpha, beta) = (1.0, 0.5);
        assert_eq!(bin_index(0.0, alpha, beta), 0);
        assert_eq!(bin_index(0.5, alpha, beta), 1);
        assert_eq!(bin_index(1.0, alpha, beta), 1);
        assert_eq!(bin_index(1.0000001, alpha, beta), 2);
        let e2 = (2.0f64 * 0.5).exp();
        assert_eq!(bin_index(e2, alpha, beta), 3);
        assert_eq!(bin_index(e2 * 1.0001, alpha, beta), 4);
    }

    #[test]
    fn well_separated_spectrum_is_untouched() {
        // tail sums 111, 11, 1 land in distinct bins
        let a = Matrix::diag(&[100.0, 10.0, 1.0]);
        let plain = svd(&a).unwrap();
        let r = robust_svd(&a, &RobustBinConfig::with_beta(0.5), None).unwrap();
        assert!(!r.degenerate);
        assert_eq!(r.bins, vec![0..1, 1..2, 2..3]);
        for j in 0..3 {
            assert!((r.factors.s[j] - plain.s[j]).abs() < 1e-12);
            for i in 0..3 {
                assert!((r.factors.u.get(i, j).abs() - plain.u.get(i, j).abs()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn steep_ladder_keeps_positive_alpha() {
        // β · max_bins = 1536 would underflow e^{-β·max_bins} to zero
        let cfg = RobustBinConfig::with_beta(3.0);
        let alpha = cfg.alpha_for(10.0);
        assert!(alpha > 0.0 && alpha.is_normal());
        let a = random_matrix(20, 20, 4);
        let r = robust_svd(&a, &cfg, None).unwrap();
        let total: f64 = svd(&a).unwrap().s.iter().sum();
        assert!((r.factors.s.iter().sum::<f64>() - total).abs() < 1e-9 * total);
        assert!(bin_index(1e300, f64::MIN_POSITIVE, 1e-3) > 1_000_000);
    }

    #[test]
    fn equal_pair_merges_into_one_bin() {
        // A = [[1,0],[0,1]] rotated: symmetric with S = [1, 1]
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let a = Matrix::new(2, 2, vec![c, c, c, -c]).unwrap();
        let plain = svd(&a).unwrap();
        // tail sums 2 and 1 share the bin (0.5, 0.5·e^1.5]
        let cfg = RobustBinConfig {
            alpha: Some(0.5),
            beta: 1.5,
            max_bins: 8,
        };
        let r = robust_svd(&a, &cfg, None).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.factors.s, vec![2.0]);
        let mut mean: Vec<f64> = (0..2)
            .map(|i| 0.5 * (plain.u.get(i, 0) + plain.u.get(i, 1)))
            .collect();
        let n = crate::tensor::norm2(&mean);
        mean.iter_mut().for_each(|x| *x /= n);
        for i in 0..2 {
            assert!((r.factors.u.get(i, 0) - mean[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn robust_truncation_keeps_prefix() {
        let a = random_matrix(12, 10, 3);
        let full = robust_svd(&a, &RobustBinConfig::default(), None).unwrap();
        let cut = robust_svd(&a, &RobustBinConfig::default(), Some(Truncation::Rank(3))).unwrap();
        assert_eq!(cut.factors.rank(), 3.min(full.factors.rank()));
        assert_eq!(cut.factors.s[..], full.factors.s[..cut.factors.rank()]);
        assert_eq!(cut.bins.len(), cut.factors.rank());
    }

    #[test]
    fn invalid_bin_config() {
        let a = Matrix::identity(2);
        for cfg in [
            RobustBinConfig::with_beta(0.0),
            RobustBinConfig {
                alpha: Some(-1.0),
                ..Default::default()
            },
            RobustBinConfig {
                max_bins: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                robust_svd(&a, &cfg, None),
                Err(SvdError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn exact_exponential_slope() {
        let s: Vec<f64> = (1..=40).map(|k| (-0.1 * k as f64).exp()).collect();
        let est = decay_slope(&s, 5, 25).unwrap();
        assert!((est.slope + 0.1).abs() < 1e-9);
        assert!(est.stderr < 1e-9);
        assert_eq!(est.index_range, (5, 25));
    }

    #[test]
    fn constant_spectrum_has_zero_slope() {
        let est = decay_slope(&[2.0; 30], 5, 25).unwrap();
        assert_eq!(est.slope, 0.0);
    }

    #[test]
    fn slope_errors_and_clamp() {
        let s: Vec<f64> = (1..=10).map(|k| 1.0 / k as f64).collect();
        assert_eq!(
            decay_slope(&s, 5, 25),
            Err(SvdError::InsufficientRank {
                available: 10,
                required: 25
            })
        );
        let clamped = decay_slope_clamped(&s, 5, 25).unwrap();
        assert_eq!(clamped.index_range, (5, 10));

        let mut z = vec![1.0; 30];
        z[9] = 0.0;
        assert!(matches!(
            decay_slope(&z, 5, 25),
            Err(SvdError::NonPositiveValue { index: 10, .. })
        ));
        // a rank-1 spectrum has no slope at all
        let mut r1 = vec![0.0; 30];
        r1[0] = 5.0;
        assert!(matches!(
            decay_slope_clamped(&r1, 5, 25),
            Err(SvdError::InsufficientRank { .. })
        ));
    }

    #[test]
    fn transfer_onto_itself() {
        let a = random_matrix(6, 5, 11);
        let out = transfer_singular_values(&a, &a, true).unwrap();
        for (x, y) in a.data().iter().zip(out.data()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

use crate::svd::{self, RobustBinConfig, SvdFactors};
use crate::tensor::{DenseTensor, Matrix};

use super::{truncate_step, FormatError, RankPolicy};

/// Tensor train: cores `G_k` of shape `(r_{k-1}, I_k, r_k)` with `r_0 = r_d = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TTTensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) cores: Vec<DenseTensor>,
}

impl TTTensor {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self, FormatError> {
        if cores.is_empty() {
            return Err(FormatError::Structure("TT needs at least one core".into()));
        }
        let mut prev = 1;
        for (k, c) in cores.iter().enumerate() {
            if c.order() != 3 || c.shape()[0] != prev {
                return Err(FormatError::Structure(format!(
                    "core {k} has shape {:?}, expected ({prev}, _, _)",
                    c.shape()
                )));
            }
            prev = c.shape()[2];
        }
        if prev != 1 {
            return Err(FormatError::Structure(format!(
                "last TT rank is {prev}, expected 1"
            )));
        }
        let shape = cores.iter().map(|c| c.shape()[1]).collect();
        Ok(Self { shape, cores })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<DenseTensor> {
        self.cores
    }

    /// `(r_0, .., r_d)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![1];
        r.extend(self.cores.iter().map(|c| c.shape()[2]));
        r
    }
}

/// A TT decomposition together with the full (pre-truncation) spectrum of
/// every sweep step.
#[derive(Debug, Clone, PartialEq)]
pub struct TtSweep {
    pub tt: TTTensor,
    pub spectra: Vec<Vec<f64>>,
}

/// TT-SVD.
///
/// Left-to-right sweep: matricize the remainder with `r_{k-1}·I_k` rows,
/// decompose, truncate within `ε‖t‖/√(d-1)`, keep `U` as core `k` and carry
/// `diag(S)·Vᵀ` forward. With `robust` set, the inner decomposition is the
/// binned robust SVD; truncation then acts on the merged spectrum.
pub fn tt_svd(
    t: &DenseTensor,
    policy: &RankPolicy,
    robust: Option<&RobustBinConfig>,
) -> Result<TTTensor, FormatError> {
    Ok(tt_svd_traced(t, policy, robust)?.tt)
}

/// [`tt_svd`], also returning the plain singular values of each step.
pub fn tt_svd_traced(
    t: &DenseTensor,
    policy: &RankPolicy,
    robust: Option<&RobustBinConfig>,
) -> Result<TtSweep, FormatError> {
    policy.validate()?;
    if let Some(cfg) = robust {
        cfg.validate()?;
    }
    let shape = t.shape().to_vec();
    let d = shape.len();
    if d < 2 {
        return Err(FormatError::Structure(format!(
            "TT-SVD needs order >= 2, got {d}"
        )));
    }
    let caps = policy.caps(d - 1)?;
    let budget = policy.tolerance * t.frobenius_norm() / ((d - 1) as f64).sqrt();

    let mut cores = Vec::with_capacity(d);
    let mut spectra = Vec::with_capacity(d - 1);
    let mut rest = t.data().to_vec();
    let mut r = 1;
    for k in 0..d - 1 {
        let rows = r * shape[k];
        let cols = rest.len() / rows;
        let m = Matrix::new(rows, cols, rest)?;
        let plain = svd::svd(&m)?;
        spectra.push(plain.s.clone());
        let full: SvdFactors = match robust {
            None => plain,
            Some(cfg) => svd::merge_bins(&plain, cfg).factors,
        };
        let f = truncate_step(&full, budget, caps[k]);
        let rr = f.rank();
        cores.push(f.u.clone().into_tensor(vec![r, shape[k], rr])?);
        rest = f.s_vt().into_data();
        r = rr;
    }
    cores.push(DenseTensor::new(vec![r, shape[d - 1], 1], rest)?);
    Ok(TtSweep {
        tt: TTTensor::new(cores)?,
        spectra,
    })
}

/// Contracts the train left to right.
pub fn tt_reconstruct(tt: &TTTensor) -> Result<DenseTensor, FormatError> {
    let first = &tt.cores[0];
    let mut acc = Matrix::new(first.shape()[1], first.shape()[2], first.data().to_vec())?;
    for core in &tt.cores[1..] {
        let s = core.shape();
        let c = Matrix::new(s[0], s[1] * s[2], core.data().to_vec())?;
        let prod = acc.matmul(&c)?;
        let rows = prod.rows() * s[1];
        acc = Matrix::new(rows, s[2], prod.into_data())?;
    }
    Ok(acc.into_tensor(tt.shape.clone())?)
}

/// Sum of two trains of equal shape; ranks add (block-diagonal cores).
pub fn tt_add(a: &TTTensor, b: &TTTensor) -> Result<TTTensor, FormatError> {
    if a.shape != b.shape {
        return Err(FormatError::Structure(format!(
            "cannot add TT tensors of shapes {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let d = a.shape.len();
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let (ca, cb) = (&a.cores[k], &b.cores[k]);
        let (ra0, n, ra1) = (ca.shape()[0], ca.shape()[1], ca.shape()[2]);
        let (rb0, rb1) = (cb.shape()[0], cb.shape()[2]);
        let r0 = if k == 0 { 1 } else { ra0 + rb0 };
        let r1 = if k == d - 1 { 1 } else { ra1 + rb1 };
        let mut c = DenseTensor::zeros(vec![r0, n, r1])?;
        let (oa0, oa1) = (0, 0);
        let ob0 = if k == 0 { 0 } else { ra0 };
        let ob1 = if k == d - 1 { 0 } else { ra1 };
        for i in 0..n {
            for p in 0..ra0 {
                for q in 0..ra1 {
                    c.set(&[oa0 + p, i, oa1 + q], ca.get(&[p, i, q]));
                }
            }
            for p in 0..rb0 {
                for q in 0..rb1 {
                    let idx = [ob0 + p, i, ob1 + q];
                    // first/last cores are concatenated, so entries accumulate
                    let v = c.get(&idx) + cb.get(&[p, i, q]);
                    c.set(&idx, v);
                }
            }
        }
        cores.push(c);
    }
    TTTensor::new(cores)
}

/// TT-rounding to relative accuracy `eps`, without densifying.
///
/// Right-to-left QR orthogonalization, then a left-to-right truncated-SVD
/// sweep with per-step budget `eps·‖tt‖/√(d-1)`. Ranks never grow.
pub fn tt_round(tt: &TTTensor, eps: f64) -> Result<TTTensor, FormatError> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(FormatError::InvalidRank(format!(
            "tolerance must be >= 0, got {eps}"
        )));
    }
    let d = tt.cores.len();
    let mut cores = tt.cores.clone();
    if d == 1 {
        return TTTensor::new(cores);
    }

    for k in (1..d).rev() {
        let s = cores[k].shape().to_vec();
        // G_k as (r_{k-1}) × (I_k r_k); QR of its transpose gives G_k = Rᵀ Qᵀ
        let g = Matrix::new(s[0], s[1] * s[2], cores[k].data().to_vec())?;
        let qr = g.transpose().to_faer().qr();
        let q = Matrix::from_faer(qr.compute_thin_Q().as_ref());
        let rt = Matrix::from_faer(qr.thin_R()).transpose();
        let rnew = q.cols();
        cores[k] = q.transpose().into_tensor(vec![rnew, s[1], s[2]])?;
        let p = cores[k - 1].shape().to_vec();
        let left = Matrix::new(p[0] * p[1], p[2], cores[k - 1].data().to_vec())?;
        cores[k - 1] = left.matmul(&rt)?.into_tensor(vec![p[0], p[1], rnew])?;
    }

    // the remaining norm lives entirely in the first core
    let norm = cores[0].frobenius_norm();
    let budget = eps * norm / ((d - 1) as f64).sqrt();
    for k in 0..d - 1 {
        let s = cores[k].shape().to_vec();
        let g = Matrix::new(s[0] * s[1], s[2], cores[k].data().to_vec())?;
        let f = truncate_step(&svd::svd(&g)?, budget, usize::MAX);
        let rr = f.rank();
        cores[k] = f.u.clone().into_tensor(vec![s[0], s[1], rr])?;
        let n = cores[k + 1].shape().to_vec();
        let right = Matrix::new(n[0], n[1] * n[2], cores[k + 1].data().to_vec())?;
        cores[k + 1] = f.s_vt().matmul(&right)?.into_tensor(vec![rr, n[1], n[2]])?;
    }
    TTTensor::new(cores)
}

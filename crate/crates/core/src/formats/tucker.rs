use crate::svd;
use crate::tensor::{DenseTensor, Matrix};

use super::{truncate_step, FormatError, RankPolicy};

/// Tucker format: core `G` of shape `(R_1..R_d)` and factors `U_j` (`I_j × R_j`).
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerTensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) core: DenseTensor,
    pub(crate) factors: Vec<Matrix>,
}

impl TuckerTensor {
    pub fn new(core: DenseTensor, factors: Vec<Matrix>) -> Result<Self, FormatError> {
        if core.order() != factors.len() {
            return Err(FormatError::Structure(format!(
                "core order {} but {} factors",
                core.order(),
                factors.len()
            )));
        }
        for (j, (f, &r)) in factors.iter().zip(core.shape()).enumerate() {
            if f.cols() != r {
                return Err(FormatError::Structure(format!(
                    "factor {j} has {} columns, core mode has size {r}",
                    f.cols()
                )));
            }
        }
        let shape = factors.iter().map(|f| f.rows()).collect();
        Ok(Self {
            shape,
            core,
            factors,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.core.shape().to_vec()
    }
}

/// Truncated higher-order SVD. Each mode is truncated within
/// `ε‖t‖/√d`, so the total error stays within `ε‖t‖`.
pub fn tucker_decompose(t: &DenseTensor, policy: &RankPolicy) -> Result<TuckerTensor, FormatError> {
    policy.validate()?;
    let d = t.order();
    if d < 2 {
        return Err(FormatError::Structure(format!(
            "Tucker needs order >= 2, got {d}"
        )));
    }
    let caps = policy.caps(d)?;
    let budget = policy.tolerance * t.frobenius_norm() / (d as f64).sqrt();
    let mut factors = Vec::with_capacity(d);
    for (j, &cap) in caps.iter().enumerate() {
        let f = svd::svd(&t.unfold(j)?)?;
        factors.push(truncate_step(&f, budget, cap).u);
    }
    let mut core = t.clone();
    for (j, u) in factors.iter().enumerate() {
        core = core.mode_product(j, &u.transpose())?;
    }
    TuckerTensor::new(core, factors)
}

pub fn tucker_reconstruct(tk: &TuckerTensor) -> Result<DenseTensor, FormatError> {
    let mut t = tk.core.clone();
    for (j, u) in tk.factors.iter().enumerate() {
        t = t.mode_product(j, u)?;
    }
    Ok(t)
}

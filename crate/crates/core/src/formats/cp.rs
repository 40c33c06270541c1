use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::svd;
use crate::tensor::{norm2, DenseTensor, Matrix};

use super::FormatError;

/// CP format: `A(i) = Σ_r w_r Π_k U_k(i_k, r)`, weights optional.
#[derive(Debug, Clone, PartialEq)]
pub struct CPTensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) factors: Vec<Matrix>,
    pub(crate) weights: Option<Vec<f64>>,
}

impl CPTensor {
    pub fn new(factors: Vec<Matrix>, weights: Option<Vec<f64>>) -> Result<Self, FormatError> {
        let r = factors.first().map(|f| f.cols()).unwrap_or(0);
        if factors.len() < 2 || r == 0 {
            return Err(FormatError::Structure(
                "CP needs at least two factors with a positive rank".into(),
            ));
        }
        if factors.iter().any(|f| f.cols() != r) {
            return Err(FormatError::Structure("CP factors disagree on rank".into()));
        }
        if weights.as_ref().is_some_and(|w| w.len() != r) {
            return Err(FormatError::Structure(format!(
                "CP weights must have length {r}"
            )));
        }
        let shape = factors.iter().map(|f| f.rows()).collect();
        Ok(Self {
            shape,
            factors,
            weights,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn rank(&self) -> usize {
        self.factors[0].cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpOptions {
    pub rank: usize,
    pub max_iter: usize,
    /// Stop once the relative error improves by less than this.
    pub tol: f64,
    pub seed: u64,
    /// A final relative error above this is reported as a failure.
    pub failure_threshold: f64,
}

impl Default for CpOptions {
    fn default() -> Self {
        Self {
            rank: 1,
            max_iter: 500,
            tol: 1e-10,
            seed: 0,
            failure_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpFit {
    pub tensor: CPTensor,
    pub relative_error: f64,
    pub iterations: usize,
}

/// Row-wise Khatri–Rao product of `factors`, rows in row-major order of
/// their mode indices.
fn khatri_rao(factors: &[&Matrix], r: usize) -> Matrix {
    let mut acc = Matrix::new(1, r, vec![1.0; r]).expect("1 x r");
    for f in factors {
        let rows = acc.rows() * f.rows();
        let mut next = Vec::with_capacity(rows * r);
        for a in 0..acc.rows() {
            let left = acc.row(a);
            for i in 0..f.rows() {
                next.extend(left.iter().zip(f.row(i)).map(|(x, y)| x * y));
            }
        }
        acc = Matrix::new(rows, r, next).expect("sizes agree");
    }
    acc
}

/// Solves `X · G = B` for symmetric positive semi-definite `G` through a
/// ridge-regularized pseudo-inverse, so singular Gram matrices stay solvable.
fn solve_gram(b: &Matrix, g: &Matrix) -> Result<Matrix, FormatError> {
    let f = svd::svd(g)?;
    let top = f.s.first().copied().unwrap_or(0.0);
    let ridge = 1e-13 * top;
    let inv: Vec<f64> =
        f.s.iter()
            .map(|&x| {
                if x > 1e-14 * top {
                    x / (x * x + ridge * ridge)
                } else {
                    0.0
                }
            })
            .collect();
    // G⁺ = V diag(1/s) Uᵀ
    let mut v = f.v.clone();
    v.scale_columns(&inv);
    let pinv = v.matmul(&f.u.transpose())?;
    Ok(b.matmul(&pinv)?)
}

/// Alternating least squares from seeded uniform factors.
///
/// Column scales are absorbed into the factors, so the result carries no
/// weight vector.
pub fn cp_als(t: &DenseTensor, opts: &CpOptions) -> Result<CpFit, FormatError> {
    if opts.rank == 0 {
        return Err(FormatError::InvalidRank("CP rank must be >= 1".into()));
    }
    let d = t.order();
    if d < 2 {
        return Err(FormatError::Structure(format!(
            "CP needs order >= 2, got {d}"
        )));
    }
    let r = opts.rank;
    let norm = t.frobenius_norm();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut factors: Vec<Matrix> = t
        .shape()
        .iter()
        .map(|&n| Matrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    if norm == 0.0 {
        let zero = factors.iter().map(|f| Matrix::zeros(f.rows(), r)).collect();
        return Ok(CpFit {
            tensor: CPTensor::new(zero, None)?,
            relative_error: 0.0,
            iterations: 0,
        });
    }
    let unfoldings = (0..d).map(|n| t.unfold(n)).collect::<Result<Vec<_>, _>>()?;

    let mut best: Option<(f64, Vec<Matrix>)> = None;
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        for n in 0..d {
            let others: Vec<&Matrix> = (0..d).filter(|&k| k != n).map(|k| &factors[k]).collect();
            let kr = khatri_rao(&others, r);
            let mttkrp = unfoldings[n].matmul(&kr)?;
            let mut gram = Matrix::new(r, r, vec![1.0; r * r])?;
            for f in &others {
                let g = f.t_matmul(f)?;
                for (a, b) in gram.data_mut().iter_mut().zip(g.data()) {
                    *a *= b;
                }
            }
            factors[n] = solve_gram(&mttkrp, &gram)?;
        }
        balance_columns(&mut factors);
        let err = relative_error(t, &factors, norm)?;
        if !err.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, factors.clone()));
        }
        if (prev - err).abs() < opts.tol {
            break;
        }
        prev = err;
    }

    match best {
        Some((err, factors)) if err <= opts.failure_threshold => Ok(CpFit {
            tensor: CPTensor::new(factors, None)?,
            relative_error: err,
            iterations,
        }),
        Some((err, _)) => Err(FormatError::DecompositionFailure {
            best_relative_error: err,
            iterations,
        }),
        None => Err(FormatError::DecompositionFailure {
            best_relative_error: f64::INFINITY,
            iterations,
        }),
    }
}

/// Spreads each rank-1 term's magnitude evenly across its factor columns.
fn balance_columns(factors: &mut [Matrix]) {
    let d = factors.len() as f64;
    let r = factors[0].cols();
    for c in 0..r {
        let norms: Vec<f64> = factors.iter().map(|f| norm2(&f.column(c))).collect();
        if norms.contains(&0.0) {
            continue;
        }
        let geo = norms.iter().map(|x| x.ln()).sum::<f64>() / d;
        for (f, nrm) in factors.iter_mut().zip(&norms) {
            let s = geo.exp() / nrm;
            let col: Vec<f64> = f.column(c).iter().map(|x| x * s).collect();
            f.set_column(c, &col);
        }
    }
}

fn relative_error(t: &DenseTensor, factors: &[Matrix], norm: f64) -> Result<f64, FormatError> {
    let cp = CPTensor::new(factors.to_vec(), None)?;
    let rec = cp_reconstruct(&cp)?;
    let diff: Vec<f64> = t
        .data()
        .iter()
        .zip(rec.data())
        .map(|(a, b)| a - b)
        .collect();
    Ok(norm2(&diff) / norm)
}

pub fn cp_reconstruct(cp: &CPTensor) -> Result<DenseTensor, FormatError> {
    let r = cp.rank();
    let mut first = cp.factors[0].clone();
    if let Some(w) = &cp.weights {
        first.scale_columns(w);
    }
    let rest: Vec<&Matrix> = cp.factors[1..].iter().collect();
    let kr = khatri_rao(&rest, r);
    // U_1 · KRᵀ is the mode-1 unfolding, which is already row-major data
    let m = first.matmul(&kr.transpose())?;
    Ok(m.into_tensor(cp.shape.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::for_each_index;

    fn random_cp(shape: &[usize], r: usize, seed: u64) -> CPTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = shape
            .iter()
            .map(|&n| Matrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        CPTensor::new(f, None).unwrap()
    }

    #[test]
    fn hand_case_matches_nested_sum() {
        let mut cp = random_cp(&[2, 2, 2], 2, 1);
        cp.weights = Some(vec![0.5, -2.0]);
        let t = cp_reconstruct(&cp).unwrap();
        for_each_index(&[2, 2, 2], |i| {
            let want: f64 = (0..2)
                .map(|r| {
                    cp.weights.as_ref().unwrap()[r]
                        * (0..3).map(|k| cp.factors[k].get(i[k], r)).product::<f64>()
                })
                .sum();
            assert!((t.get(i) - want).abs() < 1e-14);
        });
    }

    #[test]
    fn single_component_is_outer_product() {
        let a = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Matrix::new(3, 1, vec![3.0, 4.0, 5.0]).unwrap();
        let t = cp_reconstruct(&CPTensor::new(vec![a, b], None).unwrap()).unwrap();
        assert_eq!(t.data(), &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn zero_weights_give_zero_tensor() {
        let mut cp = random_cp(&[2, 3, 2], 2, 2);
        cp.weights = Some(vec![0.0, 0.0]);
        assert!(cp_reconstruct(&cp)
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn rank_one_fit() {
        let t = cp_reconstruct(&random_cp(&[4, 5, 3], 1, 3)).unwrap();
        let fit = cp_als(
            &t,
            &CpOptions {
                rank: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fit.relative_error < 1e-8, "{}", fit.relative_error);
        assert!(fit.tensor.weights().is_none());
    }

    #[test]
    fn rank_three_fit() {
        let t = cp_reconstruct(&random_cp(&[6, 5, 7], 3, 4)).unwrap();
        let opts = CpOptions {
            rank: 3,
            max_iter: 2000,
            tol: 1e-14,
            ..Default::default()
        };
        let fit = cp_als(&t, &opts).unwrap();
        assert!(fit.relative_error < 1e-6, "{}", fit.relative_error);
    }

    #[test]
    fn zero_rank_rejected() {
        let t = DenseTensor::zeros(vec![2, 2]).unwrap();
        let opts = CpOptions {
            rank: 0,
            ..Default::default()
        };
        assert!(matches!(
            cp_als(&t, &opts),
            Err(FormatError::InvalidRank(_))
        ));
    }

    #[test]
    fn stagnation_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = DenseTensor::from_fn(vec![6, 6, 6], |_| rng.random_range(-1.0..1.0)).unwrap();
        let opts = CpOptions {
            rank: 1,
            failure_threshold: 0.1,
            ..Default::default()
        };
        match cp_als(&t, &opts) {
            Err(FormatError::DecompositionFailure {
                best_relative_error,
                ..
            }) => {
                assert!(best_relative_error > 0.1 && best_relative_error < 1.0)
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }
}

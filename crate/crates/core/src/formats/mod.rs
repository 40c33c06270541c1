//! Tensor-network formats: CP, Tucker (TD), hierarchical Tucker (HT) and
//! tensor train (TT).
//!
//! Every format can be decomposed from a [`DenseTensor`], reconstructed back,
//! counted for storage, and flattened into an ordered list of subtensors
//! (cores, factors, transfer tensors). The subtensor order is fixed per format
//! and shared with the quantizer and the TNZ container:
//!
//! | format | subtensors, in order |
//! |--------|----------------------|
//! | CP     | `U_1 .. U_d`, then the weight vector if present |
//! | TD     | `U_1 .. U_d`, then the core `G` |
//! | HT     | leaf factors `U_1 .. U_d`, transfer tensors in tree pre-order, root matrix |
//! | TT     | cores `G_1 .. G_d` |

mod cp;
mod ht;
mod tt;
mod tucker;

pub use cp::{cp_als, cp_reconstruct, CPTensor, CpFit, CpOptions};
pub use ht::{ht_decompose, ht_reconstruct, DimensionTree, HTTensor, TreeNode};
pub use tt::{tt_add, tt_reconstruct, tt_round, tt_svd, tt_svd_traced, TTTensor, TtSweep};
pub use tucker::{tucker_decompose, tucker_reconstruct, TuckerTensor};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svd::{self, SvdError, SvdFactors};
use crate::tensor::{DenseTensor, Matrix, TensorError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum FormatError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Svd(#[from] SvdError),

    #[error("invalid rank specification: {0}")]
    InvalidRank(String),

    #[error("inconsistent network structure: {0}")]
    Structure(String),

    #[error("subtensor selector {index} out of range ({count} subtensors)")]
    InvalidSelector { index: usize, count: usize },

    #[error("decomposition failed after {iterations} iterations (best relative error {best_relative_error:.4})")]
    DecompositionFailure {
        best_relative_error: f64,
        iterations: usize,
    },
}

/// Rank selection for the SVD-based decompositions.
///
/// `tolerance` is a relative Frobenius error target for the whole
/// decomposition (0 disables it). `max_ranks` caps the ranks; a single entry
/// is broadcast to every rank position.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankPolicy {
    #[serde(default)]
    pub tolerance: f64,
    #[serde(default)]
    pub max_ranks: Option<Vec<usize>>,
}

impl RankPolicy {
    pub fn tolerance(eps: f64) -> Self {
        Self {
            tolerance: eps,
            max_ranks: None,
        }
    }

    pub fn ranks(ranks: Vec<usize>) -> Self {
        Self {
            tolerance: 0.0,
            max_ranks: Some(ranks),
        }
    }

    pub fn exact() -> Self {
        Self::default()
    }

    pub(crate) fn validate(&self) -> Result<(), FormatError> {
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(FormatError::InvalidRank(format!(
                "tolerance must be finite and >= 0, got {}",
                self.tolerance
            )));
        }
        if let Some(r) = &self.max_ranks {
            if r.is_empty() || r.contains(&0) {
                return Err(FormatError::InvalidRank(format!(
                    "ranks must be >= 1, got {r:?}"
                )));
            }
        }
        Ok(())
    }

    /// Rank caps for `positions` truncation points.
    pub(crate) fn caps(&self, positions: usize) -> Result<Vec<usize>, FormatError> {
        match &self.max_ranks {
            None => Ok(vec![usize::MAX; positions]),
            Some(r) if r.len() == 1 => Ok(vec![r[0]; positions]),
            Some(r) if r.len() == positions => Ok(r.clone()),
            Some(r) => Err(FormatError::InvalidRank(format!(
                "expected 1 or {positions} ranks, got {}",
                r.len()
            ))),
        }
    }
}

/// Truncates `f` to the shortest prefix within `budget`, at most `cap`, and at
/// least one triplet.
pub(crate) fn truncate_step(f: &SvdFactors, budget: f64, cap: usize) -> SvdFactors {
    let k = svd::prefix_rank_for_budget(&f.s, budget).min(cap).max(1);
    f.leading(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkFormat {
    Cp,
    #[serde(rename = "td")]
    Tucker,
    Ht,
    Tt,
}

impl NetworkFormat {
    /// Tag used in the TNZ container.
    pub fn tag(self) -> u8 {
        match self {
            NetworkFormat::Cp => 0,
            NetworkFormat::Tucker => 1,
            NetworkFormat::Ht => 2,
            NetworkFormat::Tt => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(NetworkFormat::Cp),
            1 => Some(NetworkFormat::Tucker),
            2 => Some(NetworkFormat::Ht),
            3 => Some(NetworkFormat::Tt),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NetworkFormat::Cp => "cp",
            NetworkFormat::Tucker => "td",
            NetworkFormat::Ht => "ht",
            NetworkFormat::Tt => "tt",
        }
    }
}

impl std::str::FromStr for NetworkFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cp" => Ok(NetworkFormat::Cp),
            "td" | "tucker" => Ok(NetworkFormat::Tucker),
            "ht" => Ok(NetworkFormat::Ht),
            "tt" => Ok(NetworkFormat::Tt),
            other => Err(format!(
                "unknown format '{other}' (expected cp, td, ht or tt)"
            )),
        }
    }
}

/// Structure of a network without its values.
///
/// `ranks` is format specific:
/// - CP: `[R]`
/// - TD: `[R_1, .., R_d]`
/// - HT: one rank per dimension-tree node in pre-order, root rank `1`
/// - TT: `[r_0, .., r_d]` with `r_0 = r_d = 1`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub format: NetworkFormat,
    pub shape: Vec<usize>,
    pub ranks: Vec<usize>,
    /// CP only: a weight vector follows the factors.
    pub cp_weights: bool,
}

impl NetworkLayout {
    /// Shapes of the subtensors, in canonical order.
    pub fn subtensor_shapes(&self) -> Result<Vec<Vec<usize>>, FormatError> {
        let d = self.shape.len();
        if d < 2 {
            return Err(FormatError::Structure(format!("order {d} < 2")));
        }
        let bad = |msg: String| Err(FormatError::Structure(msg));
        match self.format {
            NetworkFormat::Cp => {
                if self.ranks.len() != 1 || self.ranks[0] == 0 {
                    return bad(format!("CP needs one positive rank, got {:?}", self.ranks));
                }
                let r = self.ranks[0];
                let mut out: Vec<Vec<usize>> = self.shape.iter().map(|&i| vec![i, r]).collect();
                if self.cp_weights {
                    out.push(vec![r]);
                }
                Ok(out)
            }
            NetworkFormat::Tucker => {
                if self.ranks.len() != d || self.ranks.contains(&0) {
                    return bad(format!("TD needs {d} positive ranks, got {:?}", self.ranks));
                }
                let mut out: Vec<Vec<usize>> = self
                    .shape
                    .iter()
                    .zip(&self.ranks)
                    .map(|(&i, &r)| vec![i, r])
                    .collect();
                out.push(self.ranks.clone());
                Ok(out)
            }
            NetworkFormat::Tt => {
                if self.ranks.len() != d + 1
                    || self.ranks[0] != 1
                    || self.ranks[d] != 1
                    || self.ranks.contains(&0)
                {
                    return bad(format!(
                        "TT needs {} positive ranks with r_0 = r_d = 1, got {:?}",
                        d + 1,
                        self.ranks
                    ));
                }
                Ok((0..d)
                    .map(|k| vec![self.ranks[k], self.shape[k], self.ranks[k + 1]])
                    .collect())
            }
            NetworkFormat::Ht => {
                let tree = DimensionTree::balanced(d);
                if self.ranks.len() != tree.nodes.len()
                    || self.ranks[0] != 1
                    || self.ranks.contains(&0)
                {
                    return bad(format!(
                        "HT needs {} positive node ranks with root rank 1, got {:?}",
                        tree.nodes.len(),
                        self.ranks
                    ));
                }
                let mut out = Vec::new();
                for k in 0..d {
                    out.push(vec![self.shape[k], self.ranks[tree.leaf_of_mode(k)]]);
                }
                for (id, node) in tree.nodes.iter().enumerate().skip(1) {
                    if let Some((u, v)) = node.children {
                        out.push(vec![self.ranks[u], self.ranks[v], self.ranks[id]]);
                    }
                }
                let (u0, v0) = tree.nodes[0]
                    .children
                    .expect("root of order >= 2 has children");
                out.push(vec![self.ranks[u0], self.ranks[v0]]);
                Ok(out)
            }
        }
    }

    /// Closed-form parameter count.
    ///
    /// CP `Σ I_k R`, TD `Σ I_k R_k + Π R_k`, HT `Σ I_k R_k + Σ R_u R_v R_t`
    /// plus the root matrix, TT `Σ I_k r_{k-1} r_k`.
    pub fn storage_count(&self) -> usize {
        let d = self.shape.len();
        match self.format {
            NetworkFormat::Cp => {
                let r = self.ranks[0];
                self.shape.iter().map(|i| i * r).sum::<usize>()
                    + if self.cp_weights { r } else { 0 }
            }
            NetworkFormat::Tucker => {
                self.shape
                    .iter()
                    .zip(&self.ranks)
                    .map(|(i, r)| i * r)
                    .sum::<usize>()
                    + self.ranks.iter().product::<usize>()
            }
            NetworkFormat::Tt => (0..d)
                .map(|k| self.shape[k] * self.ranks[k] * self.ranks[k + 1])
                .sum(),
            NetworkFormat::Ht => {
                let tree = DimensionTree::balanced(d);
                let leaves: usize = (0..d)
                    .map(|k| self.shape[k] * self.ranks[tree.leaf_of_mode(k)])
                    .sum();
                let transfers: usize = tree
                    .nodes
                    .iter()
                    .enumerate()
                    .skip(1)
                    .filter_map(|(t, n)| {
                        n.children
                            .map(|(u, v)| self.ranks[u] * self.ranks[v] * self.ranks[t])
                    })
                    .sum();
                let (u0, v0) = tree.nodes[0].children.expect("order >= 2");
                leaves + transfers + self.ranks[u0] * self.ranks[v0]
            }
        }
    }
}

/// Any of the four formats.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorNetwork {
    Cp(CPTensor),
    Tucker(TuckerTensor),
    Ht(HTTensor),
    Tt(TTTensor),
}

impl TensorNetwork {
    pub fn format(&self) -> NetworkFormat {
        match self {
            TensorNetwork::Cp(_) => NetworkFormat::Cp,
            TensorNetwork::Tucker(_) => NetworkFormat::Tucker,
            TensorNetwork::Ht(_) => NetworkFormat::Ht,
            TensorNetwork::Tt(_) => NetworkFormat::Tt,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorNetwork::Cp(x) => &x.shape,
            TensorNetwork::Tucker(x) => &x.shape,
            TensorNetwork::Ht(x) => &x.shape,
            TensorNetwork::Tt(x) => &x.shape,
        }
    }

    pub fn layout(&self) -> NetworkLayout {
        let (ranks, cp_weights) = match self {
            TensorNetwork::Cp(x) => (vec![x.rank()], x.weights.is_some()),
            TensorNetwork::Tucker(x) => (x.ranks(), false),
            TensorNetwork::Ht(x) => (x.ranks.clone(), false),
            TensorNetwork::Tt(x) => (x.ranks(), false),
        };
        NetworkLayout {
            format: self.format(),
            shape: self.shape().to_vec(),
            ranks,
            cp_weights,
        }
    }

    pub fn reconstruct(&self) -> Result<DenseTensor, FormatError> {
        match self {
            TensorNetwork::Cp(x) => cp_reconstruct(x),
            TensorNetwork::Tucker(x) => tucker_reconstruct(x),
            TensorNetwork::Ht(x) => ht_reconstruct(x),
            TensorNetwork::Tt(x) => tt_reconstruct(x),
        }
    }

    pub fn storage_count(&self) -> usize {
        self.layout().storage_count()
    }

    /// Flat views of every stored subtensor, in canonical order.
    pub fn subtensors(&self) -> Vec<&[f64]> {
        match self {
            TensorNetwork::Cp(x) => {
                let mut v: Vec<&[f64]> = x.factors.iter().map(|f| f.data()).collect();
                if let Some(w) = &x.weights {
                    v.push(w);
                }
                v
            }
            TensorNetwork::Tucker(x) => {
                let mut v: Vec<&[f64]> = x.factors.iter().map(|f| f.data()).collect();
                v.push(x.core.data());
                v
            }
            TensorNetwork::Ht(x) => {
                let mut v: Vec<&[f64]> = x.leaves.iter().map(|f| f.data()).collect();
                v.extend(x.transfers.iter().flatten().map(|b| b.data()));
                v.push(x.root.data());
                v
            }
            TensorNetwork::Tt(x) => x.cores.iter().map(|c| c.data()).collect(),
        }
    }

    fn subtensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            TensorNetwork::Cp(x) => {
                let mut v: Vec<&mut [f64]> = x.factors.iter_mut().map(|f| f.data_mut()).collect();
                if let Some(w) = &mut x.weights {
                    v.push(w);
                }
                v
            }
            TensorNetwork::Tucker(x) => {
                let mut v: Vec<&mut [f64]> = x.factors.iter_mut().map(|f| f.data_mut()).collect();
                v.push(x.core.data_mut());
                v
            }
            TensorNetwork::Ht(x) => {
                let mut v: Vec<&mut [f64]> = x.leaves.iter_mut().map(|f| f.data_mut()).collect();
                v.extend(x.transfers.iter_mut().flatten().map(|b| b.data_mut()));
                v.push(x.root.data_mut());
                v
            }
            TensorNetwork::Tt(x) => x.cores.iter_mut().map(|c| c.data_mut()).collect(),
        }
    }

    /// Rebuilds a network from its layout and subtensor values.
    pub fn from_parts(layout: &NetworkLayout, parts: Vec<Vec<f64>>) -> Result<Self, FormatError> {
        let shapes = layout.subtensor_shapes()?;
        if shapes.len() != parts.len() {
            return Err(FormatError::Structure(format!(
                "layout has {} subtensors, got {}",
                shapes.len(),
                parts.len()
            )));
        }
        for (k, (s, p)) in shapes.iter().zip(&parts).enumerate() {
            let n: usize = s.iter().product();
            if n != p.len() {
                return Err(FormatError::Structure(format!(
                    "subtensor {k} needs {n} values, got {}",
                    p.len()
                )));
            }
        }
        let d = layout.shape.len();
        let mut parts = parts.into_iter();
        let mut shapes_it = shapes.into_iter();
        let mut next_matrix =
            |parts: &mut std::vec::IntoIter<Vec<f64>>| -> Result<Matrix, FormatError> {
                let s = shapes_it.next().expect("counted above");
                Ok(Matrix::new(
                    s[0],
                    s[1],
                    parts.next().expect("counted above"),
                )?)
            };
        Ok(match layout.format {
            NetworkFormat::Cp => {
                let factors = (0..d)
                    .map(|_| next_matrix(&mut parts))
                    .collect::<Result<Vec<_>, _>>()?;
                let weights = if layout.cp_weights {
                    parts.next()
                } else {
                    None
                };
                TensorNetwork::Cp(CPTensor::new(factors, weights)?)
            }
            NetworkFormat::Tucker => {
                let factors = (0..d)
                    .map(|_| next_matrix(&mut parts))
                    .collect::<Result<Vec<_>, _>>()?;
                let core = DenseTensor::new(layout.ranks.clone(), parts.next().expect("counted"))?;
                TensorNetwork::Tucker(TuckerTensor::new(core, factors)?)
            }
            NetworkFormat::Tt => {
                let cores = (0..d)
                    .map(|k| {
                        DenseTensor::new(
                            vec![layout.ranks[k], layout.shape[k], layout.ranks[k + 1]],
                            parts.next().expect("counted"),
                        )
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                TensorNetwork::Tt(TTTensor::new(cores)?)
            }
            NetworkFormat::Ht => {
                let tree = DimensionTree::balanced(d);
                let leaves = (0..d)
                    .map(|_| next_matrix(&mut parts))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut transfers = vec![None; tree.nodes.len()];
                for (id, node) in tree.nodes.iter().enumerate().skip(1) {
                    if let Some((u, v)) = node.children {
                        let shape = vec![layout.ranks[u], layout.ranks[v], layout.ranks[id]];
                        transfers[id] =
                            Some(DenseTensor::new(shape, parts.next().expect("counted"))?);
                    }
                }
                let (u0, v0) = tree.nodes[0]
                    .children
                    .expect("root of order >= 2 has children");
                let root = Matrix::new(
                    layout.ranks[u0],
                    layout.ranks[v0],
                    parts.next().expect("counted"),
                )?;
                TensorNetwork::Ht(HTTensor::new(
                    layout.shape.clone(),
                    tree,
                    layout.ranks.clone(),
                    leaves,
                    transfers,
                    root,
                )?)
            }
        })
    }
}

/// Which subtensor to perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtensorSelector {
    Index(usize),
    /// Drawn from the perturbation seed.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    /// Adds `U(-1, 1) · noise_level · max|x|` to every entry.
    AdditiveUniform,
    /// Shuffles the entries of the subtensor.
    RandomizeSequence,
}

/// Resolves a selector to a concrete subtensor index.
pub fn resolve_selector(
    net: &TensorNetwork,
    selector: SubtensorSelector,
    seed: u64,
) -> Result<usize, FormatError> {
    let count = net.subtensors().len();
    match selector {
        SubtensorSelector::Index(i) if i < count => Ok(i),
        SubtensorSelector::Index(i) => Err(FormatError::InvalidSelector { index: i, count }),
        SubtensorSelector::Random => {
            // separate stream from the noise draws
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5E1E_C70E);
            Ok(rng.random_range(0..count))
        }
    }
}

/// Perturbs a single subtensor in place on a copy of `net`. All other
/// subtensors are left bitwise untouched.
pub fn perturb_subtensor(
    net: &TensorNetwork,
    selector: SubtensorSelector,
    noise_level: f64,
    mode: PerturbMode,
    seed: u64,
) -> Result<TensorNetwork, FormatError> {
    let index = resolve_selector(net, selector, seed)?;
    let mut out = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subs = out.subtensors_mut();
    let target = &mut subs[index];
    match mode {
        PerturbMode::AdditiveUniform => {
            if noise_level == 0.0 {
                return Ok(net.clone());
            }
            let amp = noise_level * target.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for x in target.iter_mut() {
                let u: f64 = rng.random_range(-1.0..=1.0);
                *x += amp * u;
            }
        }
        PerturbMode::RandomizeSequence => target.shuffle(&mut rng),
    }
    drop(subs);
    Ok(out)
}

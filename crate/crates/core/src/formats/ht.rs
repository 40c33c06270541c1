use std::ops::Range;

use crate::svd;
use crate::tensor::{DenseTensor, Matrix};

use super::{truncate_step, FormatError, RankPolicy};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    /// Modes covered by this node, contiguous in natural order.
    pub modes: Range<usize>,
    /// Node ids of the (left, right) children; `None` for leaves.
    pub children: Option<(usize, usize)>,
}

/// Full binary tree over the modes, nodes stored in pre-order (root first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionTree {
    pub nodes: Vec<TreeNode>,
}

impl DimensionTree {
    /// Splits every node's range `[a, b)` into `[a, a + ⌈len/2⌉)` and the
    /// rest, recursively.
    pub fn balanced(order: usize) -> Self {
        fn build(modes: Range<usize>, nodes: &mut Vec<TreeNode>) -> usize {
            let id = nodes.len();
            nodes.push(TreeNode {
                modes: modes.clone(),
                children: None,
            });
            if modes.len() > 1 {
                let mid = modes.start + modes.len().div_ceil(2);
                let l = build(modes.start..mid, nodes);
                let r = build(mid..modes.end, nodes);
                nodes[id].children = Some((l, r));
            }
            id
        }
        let mut nodes = Vec::with_capacity(2 * order.max(1) - 1);
        build(0..order.max(1), &mut nodes);
        Self { nodes }
    }

    pub fn order(&self) -> usize {
        self.nodes[0].modes.len()
    }

    pub fn leaf_of_mode(&self, mode: usize) -> usize {
        self.nodes
            .iter()
            .position(|n| n.children.is_none() && n.modes.start == mode)
            .expect("every mode has a leaf")
    }
}

/// Hierarchical Tucker tensor on a [`DimensionTree`].
///
/// `ranks[t]` is the rank of node `t` (root rank 1). Leaf `k` holds
/// `U_k` (`I_k × R_k`); every internal non-root node holds a transfer tensor
/// `B_t` (`R_u × R_v × R_t`); the root holds `B_root` (`R_u0 × R_v0`).
#[derive(Debug, Clone, PartialEq)]
pub struct HTTensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) tree: DimensionTree,
    pub(crate) ranks: Vec<usize>,
    pub(crate) leaves: Vec<Matrix>,
    pub(crate) transfers: Vec<Option<DenseTensor>>,
    pub(crate) root: Matrix,
}

impl HTTensor {
    pub fn new(
        shape: Vec<usize>,
        tree: DimensionTree,
        ranks: Vec<usize>,
        leaves: Vec<Matrix>,
        transfers: Vec<Option<DenseTensor>>,
        root: Matrix,
    ) -> Result<Self, FormatError> {
        let d = shape.len();
        let bad = |m: String| Err(FormatError::Structure(m));
        if d < 2 || tree.order() != d {
            return bad(format!(
                "tree of order {} for shape {shape:?}",
                tree.order()
            ));
        }
        let n = tree.nodes.len();
        if ranks.len() != n || transfers.len() != n || leaves.len() != d || ranks[0] != 1 {
            return bad("HT component counts do not match the tree".into());
        }
        for (k, u) in leaves.iter().enumerate() {
            if u.rows() != shape[k] || u.cols() != ranks[tree.leaf_of_mode(k)] {
                return bad(format!("leaf {k} is {}x{}", u.rows(), u.cols()));
            }
        }
        for (t, node) in tree.nodes.iter().enumerate().skip(1) {
            match (node.children, &transfers[t]) {
                (Some((u, v)), Some(b)) if b.shape() == [ranks[u], ranks[v], ranks[t]] => {}
                (None, None) => {}
                _ => {
                    return bad(format!(
                        "transfer tensor of node {t} does not match its ranks"
                    ))
                }
            }
        }
        let (u0, v0) = tree.nodes[0].children.expect("order >= 2");
        if transfers[0].is_some() || root.rows() != ranks[u0] || root.cols() != ranks[v0] {
            return bad("root matrix does not match child ranks".into());
        }
        Ok(Self {
            shape,
            tree,
            ranks,
            leaves,
            transfers,
            root,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn tree(&self) -> &DimensionTree {
        &self.tree
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn leaves(&self) -> &[Matrix] {
        &self.leaves
    }

    pub fn transfer(&self, node: usize) -> Option<&DenseTensor> {
        self.transfers.get(node).and_then(|b| b.as_ref())
    }

    pub fn root(&self) -> &Matrix {
        &self.root
    }
}

/// Leaves-to-root truncation.
///
/// Nodes are processed children-before-parent. Each node's basis comes from
/// the truncated SVD of the current (already projected) core, matricized
/// along that node; the core is then projected onto it. The per-node budget
/// is `ε‖t‖/√(2d-2)`, one share per non-root node.
pub fn ht_decompose(t: &DenseTensor, policy: &RankPolicy) -> Result<HTTensor, FormatError> {
    policy.validate()?;
    let d = t.order();
    if d < 2 {
        return Err(FormatError::Structure(format!(
            "HT needs order >= 2, got {d}"
        )));
    }
    let tree = DimensionTree::balanced(d);
    let n = tree.nodes.len();
    let caps = policy.caps(n - 1)?;
    let budget = policy.tolerance * t.frobenius_norm() / ((n - 1) as f64).sqrt();

    let mut ranks = vec![1usize; n];
    let mut leaves = vec![Matrix::zeros(1, 1); d];
    let mut transfers: Vec<Option<DenseTensor>> = vec![None; n];
    // frontier[p] = node owning mode p of `core`
    let mut frontier: Vec<usize> = (0..d).map(|k| tree.leaf_of_mode(k)).collect();
    let mut core = t.clone();

    for id in (1..n).rev() {
        let node = &tree.nodes[id];
        let pos = match node.children {
            None => frontier
                .iter()
                .position(|&x| x == id)
                .expect("leaf in frontier"),
            Some((u, v)) => {
                let p = frontier
                    .iter()
                    .position(|&x| x == u)
                    .expect("child processed");
                debug_assert_eq!(frontier[p + 1], v);
                // adjacent modes merge by reshape in row-major order
                let mut shape = core.shape().to_vec();
                shape[p] *= shape.remove(p + 1);
                core = core.reshape(shape)?;
                frontier.remove(p + 1);
                frontier[p] = id;
                p
            }
        };
        let f = svd::svd(&core.unfold(pos)?)?;
        let basis = truncate_step(&f, budget, caps[id - 1]).u;
        ranks[id] = basis.cols();
        core = core.mode_product(pos, &basis.transpose())?;
        match node.children {
            None => leaves[node.modes.start] = basis,
            Some((u, v)) => {
                transfers[id] = Some(basis.into_tensor(vec![ranks[u], ranks[v], ranks[id]])?)
            }
        }
    }
    let (u0, v0) = tree.nodes[0].children.expect("order >= 2");
    let root = Matrix::new(ranks[u0], ranks[v0], core.into_data())?;
    HTTensor::new(t.shape().to_vec(), tree, ranks, leaves, transfers, root)
}

/// Frame of node `id`: rows over the node's modes (row-major), `R_t` columns.
fn node_frame(ht: &HTTensor, id: usize) -> Result<Matrix, FormatError> {
    let node = &ht.tree.nodes[id];
    let Some((u, v)) = node.children else {
        return Ok(ht.leaves[node.modes.start].clone());
    };
    let fu = node_frame(ht, u)?;
    let fv = node_frame(ht, v)?;
    let b = ht.transfers[id]
        .as_ref()
        .expect("internal node has a transfer tensor");
    let (ru, rv, rt) = (ht.ranks[u], ht.ranks[v], ht.ranks[id]);
    combine(&fu, &fv, b.data(), ru, rv, rt)
}

/// `F[(i_u, i_v), c] = Σ_{a,b} F_u[i_u, a] F_v[i_v, b] B[a, b, c]`.
fn combine(
    fu: &Matrix,
    fv: &Matrix,
    b: &[f64],
    ru: usize,
    rv: usize,
    rt: usize,
) -> Result<Matrix, FormatError> {
    let x = fu.matmul(&Matrix::new(ru, rv * rt, b.to_vec())?)?;
    let (nu, nv) = (fu.rows(), fv.rows());
    let mut out = Vec::with_capacity(nu * nv * rt);
    for iu in 0..nu {
        let y = Matrix::new(rv, rt, x.row(iu).to_vec())?;
        out.extend_from_slice(fv.matmul(&y)?.data());
    }
    Ok(Matrix::new(nu * nv, rt, out)?)
}

pub fn ht_reconstruct(ht: &HTTensor) -> Result<DenseTensor, FormatError> {
    let (u0, v0) = ht.tree.nodes[0].children.expect("order >= 2");
    let fu = node_frame(ht, u0)?;
    let fv = node_frame(ht, v0)?;
    let m = combine(&fu, &fv, ht.root.data(), ht.ranks[u0], ht.ranks[v0], 1)?;
    Ok(m.into_tensor(ht.shape.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{for_each_index, norm2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &DenseTensor, b: &DenseTensor) -> f64 {
        let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        norm2(&diff) / a.frobenius_norm()
    }

    fn random_ht(shape: &[usize], rank: usize, seed: u64) -> HTTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = shape.len();
        let tree = DimensionTree::balanced(d);
        let n = tree.nodes.len();
        let mut ranks = vec![rank; n];
        ranks[0] = 1;
        let leaves = (0..d)
            .map(|k| Matrix::from_fn(shape[k], rank, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let mut transfers = vec![None; n];
        for (t, node) in tree.nodes.iter().enumerate().skip(1) {
            if node.children.is_some() {
                let s = vec![rank, rank, rank];
                transfers[t] =
                    Some(DenseTensor::from_fn(s, |_| rng.random_range(-1.0..1.0)).unwrap());
            }
        }
        let root = Matrix::from_fn(rank, rank, |_, _| rng.random_range(-1.0..1.0));
        HTTensor::new(shape.to_vec(), tree, ranks, leaves, transfers, root).unwrap()
    }

    #[test]
    fn balanced_tree_layout() {
        let t = DimensionTree::balanced(3);
        let ranges: Vec<_> = t.nodes.iter().map(|n| n.modes.clone()).collect();
        assert_eq!(ranges, vec![0..3, 0..2, 0..1, 1..2, 2..3]);
        assert_eq!(t.nodes[0].children, Some((1, 4)));
        assert_eq!(t.leaf_of_mode(2), 4);
        assert_eq!(DimensionTree::balanced(4).nodes.len(), 7);
        assert_eq!(DimensionTree::balanced(5).nodes.len(), 9);
    }

    #[test]
    fn reconstruction_matches_nested_sum() {
        let ht = random_ht(&[2, 2, 2], 2, 1);
        let t = ht_reconstruct(&ht).unwrap();
        // tree for d = 3: root(0..3) -> n1(0..2) [leaves 0, 1] and leaf 2
        let b1 = ht.transfer(1).unwrap();
        for_each_index(&[2, 2, 2], |i| {
            let mut want = 0.0;
            for_each_index(&[2, 2, 2, 2], |r| {
                let (a, b, c, e) = (r[0], r[1], r[2], r[3]);
                // root(c, e) · B1(a, b, c) · U0(i0, a) U1(i1, b) U2(i2, e)
                want += ht.root.get(c, e)
                    * b1.get(&[a, b, c])
                    * ht.leaves[0].get(i[0], a)
                    * ht.leaves[1].get(i[1], b)
                    * ht.leaves[2].get(i[2], e);
            });
            assert!((t.get(i) - want).abs() < 1e-12);
        });
    }

    #[test]
    fn two_mode_tree_is_a_matrix_product() {
        let ht = random_ht(&[3, 4], 2, 2);
        let t = ht_reconstruct(&ht).unwrap();
        let want = ht.leaves[0]
            .matmul(&ht.root)
            .unwrap()
            .matmul(&ht.leaves[1].transpose())
            .unwrap();
        assert!(t
            .data()
            .iter()
            .zip(want.data())
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn rank_one_tensor() {
        let t = DenseTensor::from_fn(vec![3, 2, 4, 2], |i| {
            (1.0 + i[0] as f64) * (2.0 - i[1] as f64) * (0.5 + i[2] as f64) * (1.0 + i[3] as f64)
        })
        .unwrap();
        let ht = ht_decompose(&t, &RankPolicy::tolerance(1e-10)).unwrap();
        assert!(ht.ranks().iter().all(|&r| r == 1));
        assert!(rel_err(&t, &ht_reconstruct(&ht).unwrap()) < 1e-12);
    }

    #[test]
    fn recovers_known_ranks() {
        let src = random_ht(&[4, 5, 3, 4], 2, 3);
        let t = ht_reconstruct(&src).unwrap();
        let ht = ht_decompose(&t, &RankPolicy::tolerance(1e-10)).unwrap();
        assert!(ht.ranks().iter().all(|&r| r <= 2), "{:?}", ht.ranks());
        assert!(rel_err(&t, &ht_reconstruct(&ht).unwrap()) < 1e-8);
    }

    #[test]
    fn full_rank_roundtrip() {
        for d in 2..=5 {
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            let shape: Vec<usize> = (0..d).map(|k| 2 + (k % 3)).collect();
            let t = DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap();
            let ht = ht_decompose(&t, &RankPolicy::exact()).unwrap();
            assert!(rel_err(&t, &ht_reconstruct(&ht).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn tolerance_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = DenseTensor::from_fn(vec![5, 4, 6, 3], |_| rng.random_range(-1.0..1.0)).unwrap();
        for eps in [0.05, 0.2, 0.5] {
            let ht = ht_decompose(&t, &RankPolicy::tolerance(eps)).unwrap();
            assert!(rel_err(&t, &ht_reconstruct(&ht).unwrap()) <= eps);
        }
    }
}

//! Dense tensors and matrices.
//!
//! Everything is stored row-major (last index fastest). A tensor of shape
//! `[I_1, .., I_d]` keeps element `(i_1, .., i_d)` at offset
//! `((i_1 * I_2 + i_2) * I_3 + i_3) ...`, and all matricizations, mode
//! permutations and contractions in this crate use that flattening.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid shape {0:?}: order must be >= 1 and every mode size >= 1")]
    InvalidShape(Vec<usize>),

    #[error("invalid split {split} for a tensor of order {order}")]
    InvalidSplit { split: usize, order: usize },

    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),

    #[error("mode {mode} out of range for order {order}")]
    InvalidMode { mode: usize, order: usize },
}

/// Order-d real array with shape metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![0.0; n],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in row-major order.
    pub fn from_fn<F>(shape: Vec<usize>, mut f: F) -> Result<Self, TensorError>
    where
        F: FnMut(&[usize]) -> f64,
    {
        let n = check_shape(&shape)?;
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            increment(&mut idx, &shape);
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    /// Reinterprets the buffer under a new shape. The data order is unchanged.
    pub fn reshape(self, new_shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = check_shape(&new_shape)?;
        if n != self.data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "cannot reshape {:?} ({} values) into {:?} ({} values)",
                self.shape,
                self.data.len(),
                new_shape,
                n
            )));
        }
        Ok(Self {
            shape: new_shape,
            data: self.data,
        })
    }

    /// Unfolds modes `..split` into rows and `split..` into columns.
    pub fn matricize(&self, split: usize) -> Result<Matrix, TensorError> {
        if split == 0 || split >= self.order() {
            return Err(TensorError::InvalidSplit {
                split,
                order: self.order(),
            });
        }
        let rows: usize = self.shape[..split].iter().product();
        let cols: usize = self.shape[split..].iter().product();
        Ok(Matrix {
            rows,
            cols,
            data: self.data.clone(),
        })
    }

    /// Reorders modes so that output mode `k` is input mode `perm[k]`.
    pub fn permute_modes(&self, perm: &[usize]) -> Result<Self, TensorError> {
        let d = self.order();
        let mut seen = vec![false; d];
        if perm.len() != d {
            return Err(TensorError::InvalidPermutation(perm.to_vec()));
        }
        for &p in perm {
            if p >= d || seen[p] {
                return Err(TensorError::InvalidPermutation(perm.to_vec()));
            }
            seen[p] = true;
        }
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides(&self.shape);
        // stride in the input buffer for each output mode
        let walk: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; d];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[src]);
            // odometer increment, keeping `src` in sync
            let mut k = d;
            while k > 0 {
                k -= 1;
                idx[k] += 1;
                src += walk[k];
                if idx[k] < new_shape[k] {
                    break;
                }
                src -= walk[k] * new_shape[k];
                idx[k] = 0;
            }
        }
        Ok(Self {
            shape: new_shape,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// Mode-`mode` unfolding: rows indexed by `i_mode`, columns by the
    /// remaining indices in their natural order.
    pub fn unfold(&self, mode: usize) -> Result<Matrix, TensorError> {
        let d = self.order();
        if mode >= d {
            return Err(TensorError::InvalidMode { mode, order: d });
        }
        let mut perm = vec![mode];
        perm.extend((0..d).filter(|&k| k != mode));
        let p = self.permute_modes(&perm)?;
        let rows = self.shape[mode];
        Ok(Matrix {
            rows,
            cols: p.data.len() / rows,
            data: p.data,
        })
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: Matrix, mode: usize, shape: &[usize]) -> Result<Self, TensorError> {
        let d = shape.len();
        if mode >= d {
            return Err(TensorError::InvalidMode { mode, order: d });
        }
        if m.rows != shape[mode] || m.rows * m.cols != shape.iter().product::<usize>() {
            return Err(TensorError::ShapeMismatch(format!(
                "{}x{} matrix does not fold into {:?} along mode {}",
                m.rows, m.cols, shape, mode
            )));
        }
        let mut permuted_shape = vec![shape[mode]];
        permuted_shape.extend((0..d).filter(|&k| k != mode).map(|k| shape[k]));
        let t = Self::new(permuted_shape, m.data)?;
        // inverse of [mode, 0, 1, .., mode-1, mode+1, ..]
        let mut inv = vec![0usize; d];
        let mut fwd = vec![mode];
        fwd.extend((0..d).filter(|&k| k != mode));
        for (k, &p) in fwd.iter().enumerate() {
            inv[p] = k;
        }
        t.permute_modes(&inv)
    }

    /// Mode-n product `t ×_mode M` with `M` of shape `J × I_mode`.
    pub fn mode_product(&self, mode: usize, m: &Matrix) -> Result<Self, TensorError> {
        let d = self.order();
        if mode >= d {
            return Err(TensorError::InvalidMode { mode, order: d });
        }
        if m.cols != self.shape[mode] {
            return Err(TensorError::ShapeMismatch(format!(
                "mode {} has size {}, matrix is {}x{}",
                mode, self.shape[mode], m.rows, m.cols
            )));
        }
        let unfolded = self.unfold(mode)?;
        let prod = m.matmul(&unfolded)?;
        let mut shape = self.shape.clone();
        shape[mode] = m.rows;
        Self::fold(prod, mode, &shape)
    }
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    let mut k = idx.len();
    while k > 0 {
        k -= 1;
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Visits every multi-index of `shape` in row-major order.
pub fn for_each_index<F: FnMut(&[usize])>(shape: &[usize], mut f: F) {
    let n: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        f(&idx);
        increment(&mut idx, shape);
    }
}

/// Euclidean norm of a flat slice.
pub fn norm2(x: &[f64]) -> f64 {
    // scaled accumulation avoids overflow for very large entries
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = x.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * s.sqrt()
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::InvalidShape(vec![rows, cols]));
        }
        if rows * cols != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "{}x{} matrix needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(rows: usize, cols: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        for (i, v) in col.iter().enumerate() {
            self.set(i, j, *v);
        }
    }

    /// First `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let orow = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix, TensorError> {
        if self.rows != other.rows {
            return Err(TensorError::ShapeMismatch(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        let n = other.cols;
        for k in 0..self.rows {
            let brow = &other.data[k * n..(k + 1) * n];
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Scales row `i` by `s[i]`.
    pub fn scale_rows(&mut self, s: &[f64]) {
        for (i, f) in s.iter().enumerate().take(self.rows) {
            for v in &mut self.data[i * self.cols..(i + 1) * self.cols] {
                *v *= f;
            }
        }
    }

    /// Scales column `j` by `s[j]`.
    pub fn scale_columns(&mut self, s: &[f64]) {
        for row in self.data.chunks_mut(self.cols) {
            for (v, f) in row.iter_mut().zip(s) {
                *v *= f;
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn into_tensor(self, shape: Vec<usize>) -> Result<DenseTensor, TensorError> {
        DenseTensor::new(shape, self.data)
    }

    pub(crate) fn to_faer(&self) -> faer::Mat<f64> {
        faer::Mat::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j])
    }

    pub(crate) fn from_faer(m: faer::MatRef<'_, f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: Vec<usize>) -> DenseTensor {
        let n = shape.iter().product();
        DenseTensor::new(shape, (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn reshape_keeps_row_major_offsets() {
        let t = iota(vec![2, 3, 4]);
        let v = t.get(&[1, 2, 3]);
        let r = t.reshape(vec![6, 4]).unwrap();
        assert_eq!(r.get(&[5, 3]), v);
    }

    #[test]
    fn reshape_vector_to_matrix() {
        let t = iota(vec![6]);
        let before = t.data().to_vec();
        let r = t.reshape(vec![2, 3]).unwrap();
        assert_eq!(r.data(), &before[..]);
    }

    #[test]
    fn reshape_rejects_size_change() {
        let t = iota(vec![2, 2]);
        assert!(matches!(
            t.reshape(vec![5]),
            Err(TensorError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn matricize_dimensions() {
        let t = iota(vec![2, 3, 4]);
        let m1 = t.matricize(1).unwrap();
        assert_eq!((m1.rows(), m1.cols()), (2, 12));
        let m2 = t.matricize(2).unwrap();
        assert_eq!((m2.rows(), m2.cols()), (6, 4));
        assert_eq!(m2.get(1 * 3 + 2, 3), t.get(&[1, 2, 3]));
        assert!(t.matricize(0).is_err());
        assert!(t.matricize(3).is_err());
    }

    #[test]
    fn permute_image_to_channel_middle() {
        let t = iota(vec![4, 5, 3]);
        let p = t.permute_modes(&[0, 2, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 3, 5]);
        assert_eq!(p.get(&[2, 1, 4]), t.get(&[2, 4, 1]));
        let back = p.permute_modes(&[0, 2, 1]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn identity_permutation_is_bitwise_equal() {
        let t = iota(vec![3, 2, 2]);
        assert_eq!(t.permute_modes(&[0, 1, 2]).unwrap(), t);
    }

    #[test]
    fn bad_permutations() {
        let t = iota(vec![3, 2, 2]);
        assert!(t.permute_modes(&[0, 0, 1]).is_err());
        assert!(t.permute_modes(&[0, 1]).is_err());
        assert!(t.permute_modes(&[0, 1, 3]).is_err());
    }

    #[test]
    fn norms() {
        assert_eq!(
            DenseTensor::zeros(vec![3, 3]).unwrap().frobenius_norm(),
            0.0
        );
        assert_eq!(
            DenseTensor::new(vec![1], vec![3.0])
                .unwrap()
                .frobenius_norm(),
            3.0
        );
        assert_eq!(
            DenseTensor::new(vec![2, 2], vec![1.0; 4])
                .unwrap()
                .frobenius_norm(),
            2.0
        );
    }

    #[test]
    fn unfold_fold_roundtrip() {
        let t = iota(vec![2, 3, 4]);
        for mode in 0..3 {
            let m = t.unfold(mode).unwrap();
            assert_eq!(m.rows(), t.shape()[mode]);
            let back = DenseTensor::fold(m, mode, t.shape()).unwrap();
            assert_eq!(back, t);
        }
        let m = t.unfold(1).unwrap();
        // column index runs over (i_1, i_3)
        assert_eq!(m.get(2, 1 * 4 + 3), t.get(&[1, 2, 3]));
    }

    #[test]
    fn mode_product_matches_sum() {
        let t = iota(vec![2, 3, 2]);
        let m = Matrix::from_fn(4, 3, |i, j| (i as f64) - 0.5 * j as f64);
        let p = t.mode_product(1, &m).unwrap();
        assert_eq!(p.shape(), &[2, 4, 2]);
        for a in 0..2 {
            for b in 0..4 {
                for c in 0..2 {
                    let want: f64 = (0..3).map(|k| m.get(b, k) * t.get(&[a, k, c])).sum();
                    assert!((p.get(&[a, b, c]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matmul_and_transposed_product() {
        let a = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        let b = Matrix::from_fn(3, 4, |i, j| (i as f64) - (j as f64));
        let direct = a.transpose().matmul(&b).unwrap();
        assert_eq!(a.t_matmul(&b).unwrap(), direct);
        assert!(a.matmul(&a).is_err());
    }
}

//! Dense 2-D tensors with row-major storage.
//!
//! All model quantities are matrices; vectors travel as `m x 1` columns or
//! `1 x n` rows. Zero-width tensors (0 rows or 0 columns) are legal and
//! arise for examples without numbers.

use super::real::Real;
use super::DiffError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Real> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
    pub requires_grad: bool,
}

impl<S: Real> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
            requires_grad: false,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, DiffError> {
        if data.len() != rows * cols {
            return Err(DiffError::Dimension(format!(
                "from_vec: {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor {
            rows,
            cols,
            data,
            requires_grad: false,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor {
            rows,
            cols,
            data,
            requires_grad: false,
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn item(&self) -> S {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sq_l2(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    /// Maximum absolute entry difference against another tensor of the same
    /// shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add_assign_scaled(&mut self, other: &Self, scale: S) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b * scale;
        }
    }

    pub fn convert<T: Real>(&self) -> Tensor<T> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }
}

/// `a (m x k) * b (k x n)` with an ikj kernel over row slices.
pub fn matmul<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(a.cols, b.rows);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(m, n);
    for i in 0..m {
        let c_row = &mut out.data[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a.data[i * k + l];
            if av == S::zero() {
                continue;
            }
            let b_row = &b.data[l * n..(l + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *c += av * bv;
            }
        }
    }
    out
}

/// `a (m x n) * b^T (k x n)` -> `m x k`, i.e. rows of `a` dotted with rows
/// of `b`.
pub fn matmul_nt<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(a.cols, b.cols);
    let (m, n, k) = (a.rows, a.cols, b.rows);
    let mut out = Tensor::zeros(m, k);
    for i in 0..m {
        let a_row = &a.data[i * n..(i + 1) * n];
        for j in 0..k {
            let b_row = &b.data[j * n..(j + 1) * n];
            let mut acc = S::zero();
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            out.data[i * k + j] = acc;
        }
    }
    out
}

/// `a^T (m x k) * b (m x n)` -> `k x n`.
pub fn matmul_tn<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(a.rows, b.rows);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(k, n);
    for l in 0..m {
        let a_row = &a.data[l * k..(l + 1) * k];
        let b_row = &b.data[l * n..(l + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let c_row = &mut out.data[i * n..(i + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *c += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 2.0);
        let b = Tensor::from_fn(4, 2, |i, j| (i + j) as f64 * 0.25 + 1.0);
        let base = matmul(&a, &b);
        assert_eq!(matmul_nt(&a, &b.transpose()), base);
        assert_eq!(matmul_tn(&a.transpose(), &b), base);
    }

    #[test]
    fn zero_width_matmul() {
        let a: Tensor<f64> = Tensor::zeros(3, 0);
        let b: Tensor<f64> = Tensor::zeros(0, 4);
        let c = matmul(&a, &b);
        assert_eq!(c.shape(), (3, 4));
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transpose_round_trip() {
        let a = Tensor::from_fn(3, 5, |i, j| (i * 10 + j) as f32);
        assert_eq!(a.transpose().transpose(), a);
    }
}

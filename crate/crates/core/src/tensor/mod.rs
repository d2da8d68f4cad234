//! Dense `f64` tensors and a define-by-run reverse-mode gradient tape.
//!
//! [`Tensor`] is an immutable-by-default value type (its buffer is shared
//! behind an `Arc` and copied on write). Differentiable computations are
//! recorded on a [`Tape`], rebuilt for every forward pass, and consumed by
//! [`Tape::backward`].

mod gemm;
mod tape;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub(crate) use gemm::{gemm, View};
pub use tape::{Gradients, Tape, Var};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data.as_slice())
            .finish()
    }
}

/// Pointwise unary maps supported by [`Tensor::unary`] and the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Relu,
    Exp,
}

impl Unary {
    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => tanh(x),
            Unary::Relu => x.max(0.0),
            Unary::Exp => x.exp(),
        }
    }
}

/// `tanh` through a single `exp`, within a few ulp of the libm routine and
/// about twice as fast. Small arguments go to libm to avoid cancellation.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.25 {
        return x.tanh();
    }
    let e = (-2.0 * a).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Pointwise binary maps. The right operand may be a row vector broadcast over
/// the rows of a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        }
    }
}

/// How the right operand of a binary op lines up with the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    Rows { cols: usize },
}

pub(crate) fn broadcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if a.len() == 2 {
        let cols = a[1];
        let row_vec = (b.len() == 1 && b[0] == cols) || (b.len() == 2 && b[0] == 1 && b[1] == cols);
        if row_vec {
            return Ok(Broadcast::Rows { cols });
        }
    }
    Err(Error::dim(op, a, b))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: Arc::new(vec![value]),
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data: Arc::new(data),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; all rows must share one length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim("from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            shape: vec![n, n],
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; clones the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Domain(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::dim(op, &self.shape, &[]));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub(crate) fn view(&self) -> View<'_> {
        View::new(&self.data, self.rows(), self.cols())
    }

    /// Matrix product of `[m x k]` and `[k x n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("matmul")?;
        let (k2, n) = other.as_matrix("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.view(), other.view(), 0.0, &mut out);
        Tensor::matrix(m, n, out)
    }

    pub fn binary(&self, op: Binary, other: &Tensor) -> Result<Tensor> {
        let out = match broadcast_kind("elementwise", &self.shape, &other.shape)? {
            Broadcast::Same => self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| op.apply(a, b))
                .collect(),
            Broadcast::Rows { cols } => self
                .data
                .chunks_exact(cols)
                .flat_map(|row| row.iter().zip(other.data.iter()).map(|(&a, &b)| op.apply(a, b)))
                .collect(),
        };
        Tensor::new(self.shape.clone(), out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Mul, other)
    }

    pub fn unary(&self, op: Unary) -> Tensor {
        self.map(|v| op.apply(v))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Unary::Tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Unary::Relu)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Unary::Exp)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.as_matrix("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::matrix(n, m, out)
    }

    /// `softmax(z / scale)` over all entries, shape preserved.
    pub fn softmax_scaled(&self, scale: f64) -> Result<Tensor> {
        let w = softmax_scaled(&self.data, scale)?;
        Tensor::new(self.shape.clone(), w)
    }
}

/// Scaled softmax `w_j = exp(z_j/s) / sum_k exp(z_k/s)`.
///
/// The maximum logit is subtracted before exponentiation and the result is
/// divided once by the accumulated sum.
pub fn softmax_scaled(z: &[f64], scale: f64) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Domain("softmax of an empty input".into()));
    }
    if !(scale > 0.0) {
        return Err(Error::Domain(format!("softmax scale must be positive, got {scale}")));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted = max / scale;
    let mut w: Vec<f64> = z.iter().map(|&v| (v / scale - shifted).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_tanh_matches_libm() {
        let mut worst = 0.0f64;
        for k in -40_000..=40_000 {
            let x = k as f64 * 5e-4;
            let (a, b) = (tanh(x), x.tanh());
            worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
            assert_eq!(tanh(-x), -a);
        }
        assert!(worst < 1e-15, "{worst}");
        assert_eq!(tanh(800.0), 1.0);
        assert!(tanh(f64::NAN).is_nan());
    }

    #[test]
    fn identity_times_matrix() {
        let a = Tensor::from_rows(&[[1.5, -2.0], [0.25, 3.0]]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn hand_product() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[[0.0], [1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn zero_matrix_product() {
        let a = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let z = Tensor::zeros(&[4, 2]);
        let c = z.matmul(&a).unwrap();
        assert_eq!(c.shape(), &[4, 3]);
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] vs [2, 3]"), "{err}");
    }

    #[test]
    fn elementwise_cases() {
        assert_eq!(Tensor::scalar(0.0).tanh().item().unwrap(), 0.0);
        let x = Tensor::from_rows(&[[1.0, -2.0], [3.5, 0.0]]).unwrap();
        assert_eq!(x.add(&Tensor::zeros(&[2, 2])).unwrap(), x);
        let e = Tensor::scalar(2f64.ln()).exp().item().unwrap();
        assert!((e - 2.0).abs() < 1e-12);
    }

    #[test]
    fn row_broadcast() {
        let x = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Tensor::vector(vec![10.0, 20.0]);
        assert_eq!(x.add(&b).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
        assert!(x.add(&Tensor::vector(vec![1.0; 3])).is_err());
    }

    #[test]
    fn softmax_cases() {
        let w = softmax_scaled(&[0.3; 7], 2.0).unwrap();
        assert!(w.iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));

        let w = softmax_scaled(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-15);

        let w = softmax_scaled(&[1000.0, 0.0], 1.0).unwrap();
        assert_eq!(w[0], 1.0);
        assert!(w[1] >= 0.0 && w[1] < 1e-300);

        assert!(softmax_scaled(&[], 1.0).is_err());
        assert!(softmax_scaled(&[1.0], 0.0).is_err());
    }
}

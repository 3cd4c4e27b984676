//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine is a creation-order tape: every operation appends one node to a
//! [`Graph`], and [`Graph::backward`] walks the tape in reverse. Tensors are
//! matrices (scalars are 1x1, vectors are 1xN rows); that is all the policy
//! networks, losses, and the simulator need. Graphs are single-threaded;
//! distinct graphs may live on distinct threads.

mod check;
mod graph;
mod var;

pub use check::{grad_check, grad_check_multi, DEFAULT_STEP};
pub use graph::{Graph, NodeId};
pub use var::{Real, Var};

use thiserror::Error;

/// Errors raised by graph construction and differentiation.
#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type AdResult<T> = Result<T, AdError>;

/// A dense row-major matrix of 64-bit floats.
///
/// `shape` is `[rows, cols]`; scalars are stored as `[1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> AdResult<Self> {
        if data.len() != rows * cols {
            return Err(AdError::Shape(format!(
                "data length {} does not match shape [{rows}, {cols}]",
                data.len()
            )));
        }
        Ok(Tensor { shape: [rows, cols], data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: [1, 1], data: vec![v] }
    }

    /// A 1xN row vector.
    pub fn row(data: Vec<f64>) -> Self {
        Tensor { shape: [1, data.len()], data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: [rows, cols], data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { shape: [rows, cols], data: vec![v; rows * cols] }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
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

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    /// The single element of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// NaN or infinity anywhere in the data is a detectable error state.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_is_validated() {
        assert!(Tensor::new(2, 3, vec![0.0; 5]).is_err());
        assert!(Tensor::new(2, 3, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn finite_detection() {
        let mut t = Tensor::row(vec![1.0, 2.0]);
        assert!(t.all_finite());
        t.data_mut()[1] = f64::NAN;
        assert!(!t.all_finite());
        t.data_mut()[1] = f64::INFINITY;
        assert!(!t.all_finite());
    }
}

use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` in row-major order.
///
/// The payload is behind an `Arc`, so clones and reshapes are O(1); mutation
/// goes through [`Tensor::data_mut`], which copies only when the buffer is
/// shared.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} expects {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {:?}", shape)));
        }
        Ok(Self { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new(vec![0.0; n]) }
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new(vec![1.0; n]) }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new(vec![v; n]) }
    }

    /// 1-element tensor (shape `[1]`).
    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: Arc::new(vec![v]) }
    }

    /// Rank-1 tensor from a vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data: Arc::new(data) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        let v: &mut Vec<f64> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    /// Value of a 1-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    /// Same buffer under a new shape; element count must match.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if expect != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elems) to {:?} ({} elems)",
                self.shape,
                self.numel(),
                shape,
                expect
            )));
        }
        Ok(Tensor { shape, data: Arc::clone(&self.data) })
    }

    /// (rows, cols) of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::Shape(format!("expected rank-2 tensor, got {:?}", s))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [a, b, c] => Ok((*a, *b, *c)),
            s => Err(Error::Shape(format!("expected rank-3 tensor, got {:?}", s))),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.shape[self.shape.len() - 1];
        &self.data[i * n..(i + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

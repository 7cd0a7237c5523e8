//! Dense n-dimensional f64 tensor with an optional gradient buffer.
//!
//! This is the universal value type of the network core: inputs, activations,
//! parameters and gradients are all `Tensor`s. Data is stored contiguously in
//! row-major order.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from a shape and a row-major buffer.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} requires {} elements, buffer has {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len], grad: None }
    }

    pub fn scalar_filled(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![value; len], grad: None }
    }

    /// 2-d convenience constructor: `rows x cols` from a flat buffer.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Leading dimension, i.e. the batch size for batched tensors.
    pub fn batch_len(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of elements per leading-dimension slice.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Row `i` of a batched tensor, as a flat slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Gradient buffer, allocated (zeroed) on first use.
    pub fn grad_or_init(&mut self) -> &mut [f64] {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self.grad.as_deref_mut().unwrap()
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Accumulates `delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::Dimension(format!(
                "gradient buffer length {} does not match tensor length {}",
                delta.len(),
                self.data.len()
            )));
        }
        let g = self.grad_or_init();
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
        Ok(())
    }

    /// Errors if any entry (or gradient entry) is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericContract(format!(
                "{context}: tensor contains non-finite values"
            )));
        }
        if let Some(g) = &self.grad {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericContract(format!(
                    "{context}: gradient contains non-finite values"
                )));
            }
        }
        Ok(())
    }

    /// Gathers `rows` from a batched tensor into a new tensor with the same
    /// per-sample shape.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Self> {
        let w = self.row_len();
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            return Err(Error::Dimension("cannot gather rows of a 0-d tensor".into()));
        }
        shape[0] = rows.len();
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            if r >= self.batch_len() {
                return Err(Error::InvalidData(format!(
                    "row index {r} out of range for batch of {}",
                    self.batch_len()
                )));
            }
            data.extend_from_slice(self.row(r));
        }
        Self::new(shape, data)
    }
}

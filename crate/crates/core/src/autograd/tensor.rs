use std::ops::Range;

use super::AutogradError;
use crate::graph::TensorShape;

/// Dense row-major `f64` tensor of rank 2 (`N×F`) or 4 (`N×C×H×W`).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: TensorShape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f64>) -> Result<Self, AutogradError> {
        if shape.numel() != data.len() {
            return Err(AutogradError::ShapeMismatch {
                context: "tensor data".into(),
                expected: shape.to_string(),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: TensorShape) -> Self {
        let n = shape.numel();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
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

    pub fn batch(&self) -> usize {
        self.shape.batch()
    }

    /// Scalars per sample.
    pub fn sample_len(&self) -> usize {
        self.data.len() / self.shape.batch()
    }

    /// Copies samples `range` into a new tensor.
    pub fn slice_batch(&self, range: Range<usize>) -> Tensor {
        let per = self.sample_len();
        Tensor {
            shape: self.shape.with_batch(range.len()),
            data: self.data[range.start * per..range.end * per].to_vec(),
        }
    }

    /// Gathers samples by index.
    pub fn select(&self, indices: &[usize]) -> Tensor {
        let per = self.sample_len();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Tensor {
            shape: self.shape.with_batch(indices.len()),
            data,
        }
    }

    /// Largest absolute elementwise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }
}

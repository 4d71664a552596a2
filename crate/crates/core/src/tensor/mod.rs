//! Dense tensor type and the layer primitives built on it: convolution,
//! max-pooling, fully-connected layers, activations, softmax cross-entropy,
//! SGD with momentum, gradient clipping and a finite-difference checker.
//!
//! Everything is double precision and value-semantic. All operations are
//! pure functions; none of them mutate their inputs unless the signature
//! says so.

mod act;
mod conv;
mod fc;
mod gradcheck;
mod loss;
mod optim;
mod pool;

pub use act::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::{conv2d_backward, conv2d_forward, ConvParams};
pub use fc::{fc_backward, fc_forward};
pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use loss::{log_softmax, softmax_ce};
pub use optim::{clip_gradient, sgd_step};
pub use pool::{maxpool_backward, maxpool_forward, ArgmaxMap, PoolParams};

use crate::error::{Error, Result};

/// Dense N-dimensional array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the extents are positive and their
    /// product equals the data length.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(
                "Tensor::new",
                "all extents >= 1",
                format!("{shape:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "Tensor::new",
                format!("{n} values for shape {shape:?}"),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// 1-D tensor from a plain vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
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

    /// Reinterprets the tensor with a new shape of the same volume.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(
                "Tensor::reshape",
                format!("volume {}", self.data.len()),
                format!("{shape:?}"),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Flat index for a 3-D tensor.
    #[inline]
    pub fn idx3(&self, m: usize, t: usize, f: usize) -> usize {
        (m * self.shape[1] + t) * self.shape[2] + f
    }

    #[inline]
    pub fn at3(&self, m: usize, t: usize, f: usize) -> f64 {
        self.data[self.idx3(m, t, f)]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise a*self + b*other; shapes must agree.
    pub fn scaled_add(&mut self, a: f64, b: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "Tensor::scaled_add",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        for (x, &y) in self.data.iter_mut().zip(other.data.iter()) {
            *x = a * *x + b * y;
        }
        Ok(())
    }
}

#[cfg(test)]
mod shape_tests {
    use super::*;

    #[test]
    fn rejects_zero_extent() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn idx3_row_major() {
        let t = Tensor::zeros(&[2, 3, 4]);
        assert_eq!(t.idx3(0, 0, 0), 0);
        assert_eq!(t.idx3(0, 0, 3), 3);
        assert_eq!(t.idx3(0, 1, 0), 4);
        assert_eq!(t.idx3(1, 0, 0), 12);
        assert_eq!(t.idx3(1, 2, 3), 23);
    }
}

//! Dense tensors and the reverse-mode graph built on top of them.
//!
//! Tensors are plain row-major buffers with shape metadata. All layer math is
//! generic over [`Scalar`] so the training path runs at f32 while the
//! finite-difference check path can re-run the identical code at f64.

mod graph;
mod kernels;

pub use graph::{ActKind, BnUpdate, Graph, Mode, NodeId};
pub use kernels::{conv_out_dim, Conv2dCfg};

use crate::error::{Error, Result};
use std::fmt::Debug;

/// Element type for tensor math: f32 in production, f64 for gradient checks.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Debug + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor with an optional gradient buffer of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("zero dimension in shape {shape:?}")));
        }
        if data.len() != numel {
            return Err(Error::Config(format!(
                "data length {} does not match shape {:?} (expects {})",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); numel],
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
            grad: None,
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..numel).map(&mut f).collect(),
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<T>>) {
        if let Some(g) = &grad {
            assert_eq!(g.len(), self.data.len(), "grad length must match data");
        }
        self.grad = grad;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert elementwise; shapes are preserved, gradients dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: None,
        }
    }
}

impl Tensor<f32> {
    /// NCHW batch-of-images constructor used by the data pipeline and tests.
    pub fn stack_images(images: &[Tensor<f32>]) -> Result<Tensor<f32>> {
        let first = images
            .first()
            .ok_or_else(|| Error::Input("cannot stack an empty image list".into()))?;
        let mut shape = vec![images.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.numel() * images.len());
        for img in images {
            if img.shape() != first.shape() {
                return Err(Error::Input(format!(
                    "cannot stack images of shapes {:?} and {:?}",
                    first.shape(),
                    img.shape()
                )));
            }
            data.extend_from_slice(img.data());
        }
        Tensor::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn cast_round_trips_f32_exactly() {
        let t = Tensor::<f32>::from_fn(vec![2, 2], |i| i as f32 * 0.3);
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t.data(), back.data());
    }

    #[test]
    fn stack_checks_shapes() {
        let a = Tensor::<f32>::zeros(vec![3, 4, 4]);
        let b = Tensor::<f32>::zeros(vec![3, 4, 5]);
        assert!(Tensor::stack_images(&[a.clone(), b]).is_err());
        let s = Tensor::stack_images(&[a.clone(), a]).unwrap();
        assert_eq!(s.shape(), &[2, 3, 4, 4]);
    }
}

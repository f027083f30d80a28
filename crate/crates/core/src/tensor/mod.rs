//! Dense tensors, a reverse-mode tape, and the 3D operator set used by the model.
//!
//! Tensors are row-major with the `N, C, D, H, W` layout for volumetric data.
//! Everything is generic over [`Scalar`], which is implemented for `f32`
//! (training) and `f64` (gradient verification).

mod error;
pub mod gradcheck;
pub(crate) mod kernels;
mod scalar;
mod tape;

pub use error::TensorError;
pub use scalar::Scalar;
pub use tape::{BackwardFn, ForwardFn, Tape, Var};

pub type Result<T> = std::result::Result<T, TensorError>;

/// N-dimensional array with optional gradient storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        validate_shape(shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ElementCount {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        validate_shape(shape)?;
        Self::new(shape, vec![value; shape.iter().product()])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        validate_shape(shape)?;
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Stores a gradient buffer. Ignored for tensors that do not require grad.
    pub(crate) fn set_grad(&mut self, grad: Vec<T>) {
        debug_assert_eq!(grad.len(), self.data.len());
        if self.requires_grad {
            self.grad = Some(grad);
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::ElementCount {
                shape: shape.to_vec(),
                expected: n,
                actual: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        self.grad = None;
        Ok(self)
    }

    /// Converts element precision. Gradient buffers are dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64_lossy(x.to_f64_lossy()))
                .collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Bitwise equality of shape and elements.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

/// Splits a 5D shape into `(n, c, [d, h, w])`.
pub(crate) fn dims5(op: &'static str, shape: &[usize]) -> Result<(usize, usize, [usize; 3])> {
    if shape.len() != 5 {
        return Err(TensorError::Rank {
            op,
            expected: 5,
            shape: shape.to_vec(),
        });
    }
    Ok((shape[0], shape[1], [shape[2], shape[3], shape[4]]))
}

pub(crate) fn dims2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() != 2 {
        return Err(TensorError::Rank {
            op,
            expected: 2,
            shape: shape.to_vec(),
        });
    }
    Ok((shape[0], shape[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_count_must_match_shape() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(
            err,
            TensorError::ElementCount {
                expected: 6,
                actual: 5,
                ..
            }
        ));
        assert!(Tensor::<f32>::zeros(&[2, 0]).is_err());
    }

    #[test]
    fn grad_is_only_stored_when_requested() {
        let mut t = Tensor::<f32>::zeros(&[2]).unwrap();
        t.set_grad(vec![1.0, 1.0]);
        assert!(t.grad().is_none());
        let mut t = t.with_requires_grad(true);
        t.set_grad(vec![1.0, 2.0]);
        assert_eq!(t.grad().unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn cast_round_trips_exact_values() {
        let t = Tensor::<f32>::new(&[3], vec![0.5, -1.25, 3.0]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert!(t.bitwise_eq(&back));
    }
}

use crate::autodiff::TensorError;
use crate::scalar::Scalar;

/// Dense row-major tensor with a gradient accumulator of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
    grad: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != values.len()
        {
            return Err(TensorError::InvalidShape {
                shape,
                len: values.len(),
            });
        }
        let grad = vec![S::zero(); values.len()];
        Ok(Self {
            shape,
            values,
            grad,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = shape.iter().product();
        Self::new(shape, vec![S::zero(); n])
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
            grad: vec![S::zero()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn grad(&self) -> &[S] {
        &self.grad
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("shape is never empty")
    }

    /// Number of rows when viewed as `[numel / last_dim, last_dim]`.
    pub fn rows(&self) -> usize {
        self.values.len() / self.last_dim()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> S {
        self.values[0]
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, values: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let grad = vec![S::zero(); values.len()];
        Self {
            shape,
            values,
            grad,
        }
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [S] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = S::zero());
    }
}

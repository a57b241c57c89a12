use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique identity of a tensor value. Gradients are keyed by it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TensorId(u64);

impl TensorId {
    fn fresh() -> Self {
        TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// Dense, row-major, contiguous n-dimensional array.
///
/// A rank-0 tensor (shape `[]`) holds exactly one element. Cloning yields a
/// new [`TensorId`], so gradients computed for the original never attach to
/// the copy.
pub struct Tensor<E: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
    /// Gradient of the most recent loss, populated by [`Tensor::set_grad`].
    pub grad: Option<Box<Tensor<E>>>,
    id: TensorId,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<E: Scalar> Tensor<E> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape(shape));
        }
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(TensorError::DataLength { shape, expected, actual: data.len() });
        }
        Ok(Self { shape, data, requires_grad: false, grad: None, id: TensorId::fresh() })
    }

    /// Builds from `f64` values, converting to `E`.
    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| E::of(v)).collect())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: E) -> Result<Self> {
        let shape = shape.into();
        let n = numel(&shape);
        Self::new(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, E::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, E::one())
    }

    pub fn scalar(value: E) -> Self {
        Self { shape: Vec::new(), data: vec![value], requires_grad: false, grad: None, id: TensorId::fresh() }
    }

    /// Identity matrix `n x n`.
    pub fn eye(n: usize) -> Result<Self> {
        let mut t = Self::zeros([n, n])?;
        for i in 0..n {
            t.data[i * n + i] = E::one();
        }
        Ok(t)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<E>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data, requires_grad: false, grad: None, id: TensorId::fresh() }
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn id(&self) -> TensorId {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable element access. The shape is fixed.
    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.data.len() != 1 {
            return Err(TensorError::NotScalar(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    /// Replaces the gradient. Ignored when the tensor does not require grad.
    pub fn set_grad(&mut self, grad: Tensor<E>) -> Result<()> {
        if !self.requires_grad {
            return Ok(());
        }
        if grad.shape != self.shape {
            return Err(TensorError::ShapeMismatch { op: "set_grad", lhs: self.shape.clone(), rhs: grad.shape });
        }
        self.grad = Some(Box::new(grad));
        Ok(())
    }

    /// Adds into the gradient. Ignored when the tensor does not require grad.
    pub fn accumulate_grad(&mut self, grad: &Tensor<E>) -> Result<()> {
        if !self.requires_grad {
            return Ok(());
        }
        if grad.shape != self.shape {
            return Err(TensorError::ShapeMismatch { op: "accumulate_grad", lhs: self.shape.clone(), rhs: grad.shape.clone() });
        }
        match &mut self.grad {
            Some(g) => {
                for (a, &b) in g.data.iter_mut().zip(&grad.data) {
                    *a += b;
                }
            }
            None => self.grad = Some(Box::new(grad.clone())),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape(shape));
        }
        if numel(&shape) != self.data.len() {
            return Err(TensorError::ShapeMismatch { op: "reshape", lhs: self.shape.clone(), rhs: shape });
        }
        Ok(Self::from_parts(shape, self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Converts element type, e.g. `f32` weights into an `f64` oracle copy.
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        let mut t = Tensor::<F>::from_parts(self.shape.clone(), self.data.iter().map(|&v| F::of(v.as_f64())).collect());
        t.requires_grad = self.requires_grad;
        t
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_all(&self) -> E {
        self.data.iter().copied().sum()
    }

    /// Maximum absolute element-wise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor<E>) -> Option<E> {
        if self.shape != other.shape {
            return None;
        }
        Some(self.data.iter().zip(&other.data).fold(E::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Row-major strides of the shape.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    /// Plain 2-D matrix product without tape recording.
    pub fn matmul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        crate::ops::linalg::matmul_forward(self, rhs)
    }

    /// Axis permutation without tape recording.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<E>> {
        crate::ops::shape::permute_forward(self, perm)
    }
}

pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<E: Scalar> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: self.requires_grad,
            grad: self.grad.clone(),
            id: TensorId::fresh(),
        }
    }
}

impl<E: Scalar> PartialEq for Tensor<E> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl<E: Scalar> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("dtype", &E::NAME)
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_zero_dims() {
        assert!(matches!(Tensor::<f32>::new([2, 3], vec![0.0; 5]), Err(TensorError::DataLength { .. })));
        assert!(matches!(Tensor::<f32>::new([2, 0], vec![]), Err(TensorError::InvalidShape(_))));
        let s = Tensor::<f32>::new(Vec::<usize>::new(), vec![4.0]).unwrap();
        assert_eq!(s.item().unwrap(), 4.0);
    }

    #[test]
    fn clone_gets_fresh_id() {
        let a = Tensor::<f32>::zeros([2]).unwrap();
        let b = a.clone();
        assert_ne!(a.id(), b.id());
        assert_eq!(a, b);
    }

    #[test]
    fn grad_ignored_without_requires_grad() {
        let mut a = Tensor::<f32>::zeros([2]).unwrap();
        a.accumulate_grad(&Tensor::ones([2]).unwrap()).unwrap();
        assert!(a.grad.is_none());
        let mut b = a.clone().with_requires_grad(true);
        b.accumulate_grad(&Tensor::ones([2]).unwrap()).unwrap();
        b.accumulate_grad(&Tensor::ones([2]).unwrap()).unwrap();
        assert_eq!(b.grad.as_ref().unwrap().data(), &[2.0, 2.0]);
        assert!(b.accumulate_grad(&Tensor::ones([3]).unwrap()).is_err());
    }

    #[test]
    fn strides_row_major() {
        assert_eq!(strides_of(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides_of(&[]), Vec::<usize>::new());
    }
}

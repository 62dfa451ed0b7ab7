//! Dense row-major tensors: the universal numeric carrier.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("axis {axis} out of range for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("inner dimensions disagree: [{m}x{k}] . [{k_rhs}x{p}]")]
    InnerDimMismatch { m: usize, k: usize, k_rhs: usize, p: usize },
    #[error("expected rank {expected}, got shape {shape:?}")]
    RankMismatch { expected: usize, shape: Vec<usize> },
    #[error("kernel {kernel:?} does not fit padded input {input:?} (stride {stride:?}, padding {padding:?})")]
    KernelDoesNotFit {
        input: Vec<usize>,
        kernel: Vec<usize>,
        stride: Vec<usize>,
        padding: Vec<usize>,
    },
    #[error("transposed convolution output dimension is not positive (input {input:?}, kernel {kernel:?}, stride {stride:?}, padding {padding:?}, output padding {output_padding:?})")]
    EmptyTransposeOutput {
        input: Vec<usize>,
        kernel: Vec<usize>,
        stride: Vec<usize>,
        padding: Vec<usize>,
        output_padding: Vec<usize>,
    },
    #[error("batch normalization in train mode needs at least 2 values per channel, got {count}")]
    DegenerateBatch { count: usize },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("reshape cannot map {from:?} ({from_len} elements) to {to:?} ({to_len} elements)")]
    BadReshape {
        from: Vec<usize>,
        from_len: usize,
        to: Vec<usize>,
        to_len: usize,
    },
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
}

/// N-dimensional dense array with an optional gradient buffer.
///
/// Invariants: `data.len() == shape.iter().product()`, and `grad` (when
/// present) has the same length as `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks this tensor as trainable and allocates its gradient buffer.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![T::zero(); self.data.len()]);
        self
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

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<(), TensorError> {
        if delta.len() != self.data.len() {
            return Err(TensorError::LengthMismatch {
                len: delta.len(),
                shape: self.shape.clone(),
            });
        }
        let grad = self
            .grad
            .get_or_insert_with(|| vec![T::zero(); delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += *d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(grad) = &mut self.grad {
            grad.fill(T::zero());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Casts element-wise to another scalar type via `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack<T: Scalar>(tensors: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    let first = tensors
        .first()
        .expect("stack requires at least one tensor");
    let mut data = Vec::with_capacity(first.numel() * tensors.len());
    for t in tensors {
        if t.shape() != first.shape() {
            return Err(TensorError::ShapeMismatch {
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![tensors.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(shape, data)
}

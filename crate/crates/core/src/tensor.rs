//! Dense row-major `f32` tensor.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} elements but {actual} values were given")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("batch_norm: negative variance {value} in channel {channel}")]
    NegativeVariance { channel: usize, value: f32 },
}

/// Number of elements described by `shape`, or `None` on overflow.
pub fn checked_numel(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Immutable-shape dense tensor of 32-bit floats in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape {
                shape,
                reason: "dimensions must be positive and at least one is required".into(),
            });
        }
        let expected = checked_numel(&shape).ok_or_else(|| TensorError::InvalidShape {
            shape: shape.clone(),
            reason: "element count overflows".into(),
        })?;
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = checked_numel(&shape).unwrap_or(0);
        Self::new(shape, vec![0.0; n])
    }

    pub fn from_fn(
        shape: Vec<usize>,
        mut f: impl FnMut(usize) -> f32,
    ) -> Result<Self, TensorError> {
        let n = checked_numel(&shape).unwrap_or(0);
        Self::new(shape, (0..n).map(&mut f).collect())
    }

    /// A 1-D tensor. Panics on an empty slice.
    pub fn vector(values: &[f32]) -> Self {
        Self::new(vec![values.len()], values.to_vec()).expect("vector must be non-empty")
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access to the values. The shape stays fixed.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same values under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data.clone())
    }

    /// Collapse every dimension after the first: `N×...` becomes `N×F`.
    pub fn flatten_batch(&self) -> Self {
        let n = self.shape[0];
        let f = self.data.len() / n;
        Self {
            shape: vec![n, f],
            data: self.data.clone(),
        }
    }

    /// Rows `start..end` along the leading dimension.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self, TensorError> {
        let n = self.shape[0];
        if start >= end || end > n {
            return Err(TensorError::InvalidArgument {
                op: "slice_batch",
                reason: format!("range {start}..{end} outside batch of {n}"),
            });
        }
        let stride = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Self {
            shape,
            data: self.data[start * stride..end * stride].to_vec(),
        })
    }

    /// Raw little-endian bytes of the values.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " {:?}..(+{})", &self.data[..SHOWN], self.data.len() - SHOWN)
        }
    }
}

//! Dense f64 tensors with a reverse-mode differentiation graph, the
//! Adam optimizer, finite-difference checking, and a binary parameter
//! checkpoint format. Everything runs in 64-bit floats; any operation
//! that produces a NaN or infinity reports an error instead of letting
//! it propagate.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod params;

pub use adam::Adam;
pub use checkpoint::{load_named_tensors, load_params, save_named_tensors, save_params};
pub use gradcheck::grad_check;
pub use graph::{Graph, GmuParams, NodeId};
pub use params::{ParamStore, Parameter};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("shape {shape:?} does not hold {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("label {0} out of range, expected 0 or 1")]
    BadLabel(usize),
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("duplicate parameter '{0}'")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        reason: reason.into(),
    }
}

/// Row-major dense array of f64 with an explicit shape. A rank-0
/// tensor (empty shape) is a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::BadShape {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
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

    /// The value of a rank-0 or single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on multi-element tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows of the trailing matrix view: product of all leading dims.
    pub fn leading(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    /// Size of the last dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        Tensor::from_vec(shape, self.data.clone())
    }
}

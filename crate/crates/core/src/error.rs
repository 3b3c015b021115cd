//! Error types shared across the tensor kernel and model layers.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by tensor operations, blocks, and model assembly.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are incompatible for the requested operation.
    ShapeMismatch(String),
    /// Elementwise division hit a zero divisor.
    DivisionByZero,
    /// A reduction or shape operation referenced a non-existent axis.
    InvalidAxis { axis: usize, ndim: usize },
    /// `backward` was called on a non-scalar tensor.
    NonScalarLoss { shape: Vec<usize> },
    /// A spatial dimension constraint was violated (kernel larger than
    /// padded input, non-divisible part count, wrong resolution, ...).
    Dimension(String),
    /// Wrong number of operands for the operation.
    Arity(String),
    /// The batch cannot support the operation (singleton batch in train
    /// mode, no valid triplet, too few identities for a PK batch).
    Batch(String),
    /// Invalid model or run configuration.
    Config(String),
    /// A classification label fell outside `[0, num_classes)`.
    LabelOutOfRange { label: usize, num_classes: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            TensorError::DivisionByZero => write!(f, "elementwise division by zero"),
            TensorError::InvalidAxis { axis, ndim } => {
                write!(f, "axis {axis} invalid for tensor with {ndim} dimensions")
            }
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            TensorError::Dimension(msg) => write!(f, "dimension error: {msg}"),
            TensorError::Arity(msg) => write!(f, "arity error: {msg}"),
            TensorError::Batch(msg) => write!(f, "batch error: {msg}"),
            TensorError::Config(msg) => write!(f, "config error: {msg}"),
            TensorError::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} out of range for {num_classes} classes")
            }
        }
    }
}

pub type Result<T> = core::result::Result<T, TensorError>;

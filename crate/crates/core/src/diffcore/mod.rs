//! Minimal dense array engine with reverse-mode automatic differentiation
//! and the two adaptive-moment optimizers used by staged training.
//!
//! Everything is 64-bit: it keeps finite-difference gradient checks free of
//! precision noise, and throughput is more than adequate at the scales this
//! crate simulates.

mod kernels;
mod optim;
mod tape;

pub use optim::{OptimKind, Optimizer};
pub use tape::{NodeId, Tape};

use std::fmt;

/// Dense row-major array of f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || expect != data.len() {
            return Err(DiffError::BadArray(format!(
                "shape {shape:?} does not fit {} values",
                data.len()
            )));
        }
        Ok(Array { shape, data, requires_grad: false })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Array { shape: vec![data.len()], data, requires_grad: false }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Array { shape: vec![rows, cols], data, requires_grad: false }
    }

    pub fn scalar(v: f64) -> Self {
        Array { shape: vec![1], data: vec![v], requires_grad: false }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Array { shape, data: vec![0.0; len], requires_grad: false }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }
}

/// Errors from tape construction, evaluation and optimization.
#[derive(Clone, Debug, PartialEq)]
pub enum DiffError {
    /// Operand shapes do not fit the op; `node` is the id the op would have had.
    Shape { op: &'static str, node: usize, info: String },
    /// An op produced a non-finite value.
    NonFinite { node: usize },
    /// `backward` called on a non-scalar root.
    NonScalarRoot { node: usize },
    /// Invalid array construction.
    BadArray(String),
    /// Optimizer state does not match the parameter set.
    OptimMismatch(String),
}

impl fmt::Display for DiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffError::Shape { op, node, info } => {
                write!(f, "shape mismatch in `{op}` at node {node}: {info}")
            }
            DiffError::NonFinite { node } => write!(f, "non-finite value at node {node}"),
            DiffError::NonScalarRoot { node } => {
                write!(f, "backward requires a scalar root, node {node} is not")
            }
            DiffError::BadArray(s) => write!(f, "invalid array: {s}"),
            DiffError::OptimMismatch(s) => write!(f, "optimizer mismatch: {s}"),
        }
    }
}

impl std::error::Error for DiffError {}

//! Minimal neural-network toolkit: matrices, a reverse-mode tape, dense
//! layers and the AdamW optimizer. Everything runs in `f64`.

mod gradcheck;
mod layers;
mod matrix;
mod optim;
mod tape;

pub use gradcheck::{grad_check, grad_check_params, primitive_suite, relative_error, GradCheckReport};
pub use layers::{
    sinusoidal_embed, Activation, BoundParams, Linear, Mlp, ParamId, ParamStore, Parameter,
    DEFAULT_MAX_PERIOD,
};
pub use matrix::Matrix;
pub use optim::{AdamW, AdamWConfig};
pub use tape::{embedding_frequencies, Gradients, NodeId, Op, Tape};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("sinusoidal embedding dimension must be even and >= 2, got {0}")]
    OddEmbeddingDim(usize),
    #[error("node {0} does not exist on this tape")]
    UnknownNode(usize),
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("parameter `{name}`: shape {shape:?} does not match {len} values")]
    BadParameter {
        name: String,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("layer dimension chain broken at layer {layer}: expected input {expected}, got {got}")]
    DimensionChain {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),
}

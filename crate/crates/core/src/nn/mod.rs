//! Minimal f64 learning kernel: tensors, a reverse-mode tape, transformer
//! building blocks and Adam. CPU only, deterministic given seeds.

mod autograd;
mod layers;
mod optim;
mod tensor;

pub use autograd::{Graph, NodeId};
pub use layers::{
    gaussian_kl, masked_feature_mse, timestep_embedding, ParamStore, Transformer,
    TransformerConfig,
};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("backward target is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),
    #[error("tape does not match this graph state")]
    StaleTape,
    #[error("parameter {0} missing from store")]
    MissingParam(String),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
}

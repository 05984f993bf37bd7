//! Dense `f64` tensors, a define-by-run graph with reverse-mode gradients,
//! Adam, and the few layers the agents need (linear, MLP, GRU).

mod adam;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimState};
pub use graph::{log_sum_exp, Graph, Var};
pub use layers::{gru_cell, init_gru, l2_normalize, linear, mlp, MlpShape, NORM_EPS};
pub use params::ParamStore;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NdError {
    #[error("node #{node} ({op}): {detail}")]
    Shape { node: usize, op: &'static str, detail: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown input or parameter '{0}'")]
    UnknownName(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

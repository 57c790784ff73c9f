//! Minimal reverse-mode autodiff and neural-network substrate: enough to
//! train small convolutional, recurrent and transformer regression models
//! deterministically on CPU, in f32 for training and f64 for gradient
//! verification.

pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
mod real;
pub mod tensor;

pub use attention::{attention_weights, multi_head_attention, AttentionParams};
pub use gradcheck::{grad_check, grad_check_at, grad_check_params};
pub use layers::{Activation, ConvBlock, Dense, EncoderLayer, LstmCell};
pub use loss::{mse_l2, LossConfig};
pub use optim::{AdamConfig, ParamStore};
pub use real::Real;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("model dim {dim} not divisible by {heads} heads")]
    HeadDivisibility { dim: usize, heads: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("gradients not initialized; run backward before stepping")]
    UninitializedGradients,
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("unknown parameter name {0}")]
    UnknownParam(String),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

//! Small reverse-mode autodiff engine: layer stacks with cached forward
//! activations, MSE loss, SGD with momentum and a binary checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod tensor;

use std::path::PathBuf;
use thiserror::Error;

pub use layers::{Init, Layer, LayerSpec, Param, Sequential};
pub use optim::{mse_loss, LrSchedule, SgdMomentum};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("backward called without a cached forward pass")]
    NoForwardCache,
    #[error("invalid layer spec {0}")]
    InvalidSpec(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NnError>;

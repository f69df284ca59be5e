//! Minimal neural network toolkit: tensors, layers with explicit backward
//! passes, ADAM, finite-difference gradient checks and a checkpoint format.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod layers;
mod param;
mod tensor;

pub use adam::{clip_grad_norm, Adam};
pub use gradcheck::{activation_pattern, grad_check, GradCheckReport, GRADCHECK_FLOOR, GRADCHECK_STEP};
pub use layers::{
    broadcast_points, concat_channels, BatchNorm, BroadcastLinear, FullyConnected, MaxPoolPoints, Module, Relu,
    Sequential, SharedLinear, StateMut, Tanh,
};
pub use param::Parameter;
pub use tensor::{Real, Tensor, REAL_DTYPE};

pub(crate) use gradcheck::{central_difference, loss_weights, probe_indices, record_pattern};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward called before forward in {0}")]
    NoForwardCache(String),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match model: {0}")]
    StateMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

//! Dense-tensor computation with a recorded tape, reverse-mode
//! differentiation, Adam with EMA shadows, gradient checking, and binary
//! checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_meta, save_checkpoint, CheckpointError, CheckpointMeta};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{adam_step, clip_gradients, AdamConfig};
pub use params::ParamStore;
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    /// Shape incompatibility, naming the op and offending shapes.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A broken call contract (non-scalar loss, consumed tape, bad input).
    #[error("contract error: {0}")]
    Contract(String),
    /// NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// Invalid state transition (e.g. double EMA swap-in).
    #[error("state error: {0}")]
    State(String),
}

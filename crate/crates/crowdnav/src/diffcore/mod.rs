//! Differentiable-computation substrate: dense layers, LSTM sequence
//! encoding, softmax, reverse-mode gradients, Adam, checkpointing, and
//! finite-difference verification.

mod adam;
mod checkpoint;
mod gradcheck;
mod net;
mod store;
mod tape;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{deserialize_params, serialize_params, CheckpointError, MAGIC, VERSION};
pub use gradcheck::{check_gradients, finite_difference, GradCheckReport};
pub use net::{Activation, LayerSpec, LstmSpec, MlpSpec};
pub use store::{GradientStore, Param, ParameterStore};
pub use tape::{log_softmax, softmax, NodeId, Tape};

/// Errors from the differentiable core.
#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("unknown parameter {name}")]
    MissingParam { name: String },
    #[error("parameter {name} already exists")]
    DuplicateParam { name: String },
    #[error("loss must be a scalar, got length {len}")]
    NonScalarLoss { len: usize },
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("LSTM input sequence is empty")]
    EmptySequence,
    #[error("no optimizer state for parameter {name}")]
    MissingOptimizerState { name: String },
}

//! Minimal dense reverse-mode differentiation: tape, parameters, AdamW,
//! learning-rate schedule and checkpoint archive.

mod checkpoint;
pub mod nn;
mod optim;
mod params;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, NamedTensor};
pub use optim::{lr_schedule, AdamW, AdamWConfig};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{gelu_scalar, Gradients, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("index {index} out of range for {op} (len {len})")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("loss must be a 1x1 scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),
    #[error("optimizer state does not match the parameter set; rebuild it")]
    StaleState,
    #[error("unknown parameter group `{0}`")]
    UnknownGroup(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub mod gradcheck;

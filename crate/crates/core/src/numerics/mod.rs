//! f64 tensor arithmetic with reverse-mode gradient accumulation, an Adam
//! optimizer and checkpoint I/O. Everything model-related sits on top of
//! this module.

mod adam;
mod checkpoint;
mod graph;
mod kernels;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_into, read_checkpoint, write_checkpoint};
pub use graph::{Graph, Var, MASK_FILL};
pub use tensor::{Param, ParamSet, Tensor, TensorRef};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("parameter {name:?} has no gradient")]
    MissingGrad { name: String },
    #[error("cross_entropy_masked requires at least one masked position")]
    EmptyMask,
    #[error("target id {target} out of range for vocab {vocab}")]
    InvalidTarget { target: u32, vocab: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

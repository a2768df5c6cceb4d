//! Dense math, a small autodiff tape and the transformer pieces used by the
//! generator and critic.

use std::collections::BTreeMap;

pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::DenseMatrix;
pub use model::{CriticConfig, CriticKind, Dropout, GeneratorConfig};
pub use optim::{adagrad_step, ModelState, ADAGRAD_EPS};
pub use tape::{Tape, Var};

/// Named parameter matrices.
pub type ParamBank = BTreeMap<String, DenseMatrix>;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("row {row} field {field}: code {code} outside 0..{size}")]
    CodeOutOfRange { row: usize, field: usize, code: u32, size: usize },
    #[error("sequence of {len} rows exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("shape mismatch for `{name}`: expected {expected:?}, got {got:?}")]
    ShapeMismatch { name: String, expected: (usize, usize), got: (usize, usize) },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

use alloc::string::String;
use alloc::vec::Vec;

/// Failures raised by the tensor kernel and the tape.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("convolution window must be odd, got {0}")]
    EvenWindow(usize),
    #[error("index {index} out of range for dimension of size {size} in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("loss node must be scalar, has shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

/// Configuration and data errors from the corpus pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("vocabulary size must be at least 3, got {0}")]
    VocabTooSmall(usize),
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("dataset is empty")]
    Empty,
    #[error("{0} must be at least 1")]
    ZeroLength(&'static str),
}

/// Errors from model construction and evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid hyperparameters: {0}")]
    HyperParams(String),
    #[error("unknown {kind} index {index} (have {count})")]
    UnknownEntity {
        kind: &'static str,
        index: usize,
        count: usize,
    },
    #[error("token index {index} outside vocabulary of size {vocab}")]
    TokenOutOfRange { index: u32, vocab: usize },
    #[error("review bundle has no unmasked rows")]
    EmptyBundle,
}

/// Errors from the training loop.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training split is empty")]
    EmptyTrain,
    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("mse over zero elements")]
    EmptyBatch,
}

impl From<KernelError> for TrainError {
    fn from(e: KernelError) -> Self {
        TrainError::Model(ModelError::Kernel(e))
    }
}

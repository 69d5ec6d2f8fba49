//! From-scratch numeric core: dense-tensor ops, layers with hand-derived
//! backward passes, the three frame classifiers, the trainer, and the
//! checkpoint format.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod ops;
pub mod train;

pub use model::{ModelConfig, ModelKind, TrainedModel};
pub use train::{train, train_more, OptimizerKind, Precision, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid {field}: {reason}")]
    InvalidConfig {
        field: &'static str,
        reason: String,
    },
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: String },
    #[error("loss became NaN at epoch {epoch}, step {step}")]
    NanLoss { epoch: usize, step: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint config block: {0}")]
    BadConfig(#[from] serde_json::Error),
    #[error("checkpoint truncated while reading {context}")]
    Truncated { context: String },
    #[error("checkpoint tensor {0} does not belong to this model")]
    UnknownTensor(String),
    #[error("checkpoint tensor {name}: expected shape {expected:?}, got {got:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint repeats tensor {0}")]
    DuplicateTensor(String),
    #[error("checkpoint value for {name} is not finite")]
    NonFiniteTensor { name: String },
}

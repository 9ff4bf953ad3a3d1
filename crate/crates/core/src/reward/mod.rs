//! Outcome-supervised reward model: a hashed pair encoder feeding a small
//! scorer, trained with a margin ranking loss on assessed candidate pools.

mod checkpoint;
pub mod encoder;
pub mod loss;
mod model;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::assessment::AssessmentError;
use crate::types::SessionRef;

pub use checkpoint::{load_model, read_model, save_model, write_model, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encoder::{encode, EncodedPair, EncoderConfig, SEP_TOKEN};
pub use loss::{batch_gradient, batch_loss, loss_gradient, pool_gradient, ranking_loss, score_gradient, Gradient};
pub use model::{parameter_count, ModelConfig, ModelMetadata, RewardModel};
pub use train::{
    encode_examples, scheduled_lr, train, train_encoded, Batching, EncodedPool, TrainingConfig, TrainingExample,
    TrainingReport,
};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model input has dimension {actual}, expected {expected}")]
    InputDimension { expected: usize, actual: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training example {0}: {1}")]
    Example(SessionRef, String),
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
    #[error("checkpoint format error at byte {offset}: {reason}")]
    CheckpointFormat { offset: u64, reason: String },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

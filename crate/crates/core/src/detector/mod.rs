//! Toy Faster R-CNN: preprocessing, backbone, proposal network, region head,
//! target assignment, training and inference.

mod anchors;
mod checkpoint;
mod config;
mod infer;
mod model;
mod preprocess;
mod propose;
mod targets;
mod train;

#[cfg(test)]
mod tests;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::TensorError;

pub use anchors::{make_anchors, AnchorGrid};
pub use checkpoint::{Detector, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DetectorConfig, DETECTOR_KEYS};
pub use infer::Detection;
pub use model::{LossBreakdown, Model, RoiOutput, RpnOutput};
pub use preprocess::{preprocess, Preprocessed};
pub use propose::{propose, Proposal};
pub use targets::{
    assign_roi_targets, assign_rpn_targets, classify_roi, label_anchors, AnchorLabel, RoiTarget, RpnTargets,
    MAX_OUTSIDE_FRACTION,
};
pub use train::{metrics_csv, train, StepMetrics, METRICS_HEADER};

/// Total downsampling of the backbone.
pub const BACKBONE_STRIDE: u32 = 8;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("not a checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint file is truncated")]
    TruncatedFile,
    #[error("duplicate tensor {0:?} in checkpoint")]
    DuplicateTensorName(String),
    #[error("non-finite gradient at step {step} in {param}")]
    NonFiniteGradient { step: usize, param: String },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DetectorError> = std::result::Result<T, E>;

/// Independent random stream for one `(seed, step, purpose)` triple.
pub fn stream_rng(seed: u64, step: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&stream.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

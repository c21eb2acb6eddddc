//! Heading estimator: an encoder-decoder over keypoint-geometry features
//! whose latent code is split, with the leading part feeding a yaw head
//! that classifies overlapping heading bins and regresses an offset from the
//! chosen bin's center. The decoder's reconstruction error doubles as an
//! in-distribution confidence signal.

mod adam;
mod bins;
mod checkpoint;
mod features;
mod net;
mod train;
mod viewpoint;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use bins::{decode_yaw, encode_yaw_targets, make_bins, DecodedYaw, YawBinLayout, YawTargets};
pub use checkpoint::{LayerParams, ReportSummary, YawCheckpoint, CHECKPOINT_VERSION};
pub use features::keypoint_features;
pub use net::{
    loss_gradient, total_loss, Block, DenseSpec, ForwardOutput, LossComponents, LossWeights, ParamLayout, YawNet,
    YawNetConfig, YawSample, FEATURES_PER_KEYPOINT, FEATURE_DIM,
};
pub use train::{quantile, train, train_with_progress, yaw_mae, EpochLog, TrainReport, TAU_REC_QUANTILE};
pub use viewpoint::{bbox_heading, deck_yaw, ray_heading, relative_yaw};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum YawError {
    #[error("invalid bin layout: {0}")]
    InvalidBins(String),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("training and test sets must be non-empty")]
    EmptyDataset,
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize, last_good: Option<Box<YawCheckpoint>> },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawEstimate {
    pub theta: f64,
    pub chosen_bin: usize,
    pub bin_confidence: f64,
    pub recon_loss: f64,
    pub in_distribution: bool,
}

/// Strict threshold: a reconstruction loss equal to `tau_rec` is out of
/// distribution.
pub fn confidence_from_reconstruction(recon_loss: f64, tau_rec: f64) -> bool {
    recon_loss < tau_rec
}

/// A trained network plus its reconstruction-confidence threshold, ready
/// for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct YawModel {
    net: YawNet,
    layout: YawBinLayout,
    tau_rec: f64,
}

impl YawModel {
    pub fn new(net: YawNet, tau_rec: f64) -> Result<Self, YawError> {
        if tau_rec.is_nan() || tau_rec < 0.0 {
            return Err(YawError::Checkpoint(format!("invalid tau_rec {tau_rec}")));
        }
        let layout = net.config().layout()?;
        Ok(Self { net, layout, tau_rec })
    }

    pub fn net(&self) -> &YawNet {
        &self.net
    }

    pub fn layout(&self) -> &YawBinLayout {
        &self.layout
    }

    pub fn tau_rec(&self) -> f64 {
        self.tau_rec
    }

    pub fn estimate(&self, features: &[f64]) -> Result<YawEstimate, YawError> {
        let out = self.net.forward(features)?;
        let decoded = self.layout.decode(&out.bin_logits, &out.offsets)?;
        let recon_loss = net::mse(&out.reconstruction, features);
        Ok(YawEstimate {
            theta: decoded.theta,
            chosen_bin: decoded.chosen_bin,
            bin_confidence: decoded.bin_confidence,
            recon_loss,
            in_distribution: confidence_from_reconstruction(recon_loss, self.tau_rec),
        })
    }
}

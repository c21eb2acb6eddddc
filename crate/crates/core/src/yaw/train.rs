use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::bins::YawTargets;
use super::checkpoint::{ReportSummary, YawCheckpoint};
use super::net::{LossComponents, YawNet, YawNetConfig, YawSample};
use super::{YawError, YawModel};
use crate::model::wrap;

/// Quantile of training reconstruction losses used as the confidence cut.
pub const TAU_REC_QUANTILE: f64 = 0.95;

// Keeps the shuffle stream apart from the weight-initialization stream.
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4531;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossComponents,
    pub checkpointed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub tau_rec: f64,
    pub test_yaw_mae: f64,
    pub test_in_distribution: f64,
}

impl TrainReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            epochs: self.epochs.len(),
            best_epoch: self.best_epoch,
            best_loss: self.best_loss,
            test_yaw_mae: self.test_yaw_mae,
        }
    }

    /// Training losses at the epochs where a checkpoint was taken.
    pub fn checkpoint_losses(&self) -> Vec<f64> {
        self.epochs.iter().filter(|e| e.checkpointed).map(|e| e.loss.total).collect()
    }
}

/// Nearest-rank quantile of `values`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Mean absolute wrapped heading error of `model` over `samples`.
pub fn yaw_mae(model: &YawModel, samples: &[YawSample]) -> Result<f64, YawError> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for s in samples {
        total += wrap(model.estimate(&s.features)?.theta - s.yaw).abs();
    }
    Ok(total / samples.len() as f64)
}

pub fn train(
    config: &YawNetConfig,
    train_set: &[YawSample],
    test_set: &[YawSample],
) -> Result<(YawCheckpoint, TrainReport), YawError> {
    train_with_progress(config, train_set, test_set, |_| {})
}

/// Mini-batch ADAM training. Parameters are snapshotted whenever the
/// epoch-mean training loss reaches a new minimum; the best snapshot is
/// returned.
pub fn train_with_progress(
    config: &YawNetConfig,
    train_set: &[YawSample],
    test_set: &[YawSample],
    mut progress: impl FnMut(&EpochLog),
) -> Result<(YawCheckpoint, TrainReport), YawError> {
    if train_set.is_empty() || test_set.is_empty() {
        return Err(YawError::EmptyDataset);
    }
    let mut net = YawNet::init(config.clone())?;
    let layout = config.layout()?;
    let targets: Vec<YawTargets> = train_set.iter().map(|s| layout.encode(s.yaw)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = AdamState::new(net.params().len());
    let mut grads = vec![0.0; net.params().len()];
    let mut step = 0u64;

    let mut best_params = net.params().to_vec();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossComponents::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&YawSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch_targets: Vec<&YawTargets> = chunk.iter().map(|&i| &targets[i]).collect();
            grads.iter_mut().for_each(|g| *g = 0.0);
            let loss = net.loss_and_grad(&batch, &batch_targets, Some(&mut grads))?;
            if !loss.total.is_finite() {
                return Err(diverged(config, best_params, epoch));
            }
            step += 1;
            if adam_step(net.params_mut(), &grads, &mut adam, step, &config.adam).is_err() {
                return Err(diverged(config, best_params, epoch));
            }
            let w = chunk.len() as f64;
            sums.total += loss.total * w;
            sums.reconstruction += loss.reconstruction * w;
            sums.bin += loss.bin * w;
            sums.offset += loss.offset * w;
        }
        let n = train_set.len() as f64;
        let mean = LossComponents {
            total: sums.total / n,
            reconstruction: sums.reconstruction / n,
            bin: sums.bin / n,
            offset: sums.offset / n,
        };
        if !mean.total.is_finite() {
            return Err(diverged(config, best_params, epoch));
        }
        let checkpointed = mean.total < best_loss;
        if checkpointed {
            best_loss = mean.total;
            best_epoch = epoch;
            best_params.copy_from_slice(net.params());
        }
        let log = EpochLog { epoch, loss: mean, checkpointed };
        progress(&log);
        epochs.push(log);
    }

    let best = YawNet::from_parts(config.clone(), best_params)?;
    let recon: Vec<f64> = train_set.iter().map(|s| best.reconstruction_loss(&s.features)).collect::<Result<_, _>>()?;
    let tau_rec = quantile(&recon, TAU_REC_QUANTILE);
    let model = YawModel::new(best, tau_rec)?;
    let test_yaw_mae = yaw_mae(&model, test_set)?;
    let mut inside = 0usize;
    for s in test_set {
        if model.estimate(&s.features)?.in_distribution {
            inside += 1;
        }
    }
    let report = TrainReport {
        epochs,
        best_epoch,
        best_loss,
        tau_rec,
        test_yaw_mae,
        test_in_distribution: inside as f64 / test_set.len() as f64,
    };
    let checkpoint = YawCheckpoint::from_model(&model, Some(report.summary()));
    Ok((checkpoint, report))
}

fn diverged(config: &YawNetConfig, best_params: Vec<f64>, epoch: usize) -> YawError {
    let last_good = YawNet::from_parts(config.clone(), best_params)
        .ok()
        .and_then(|net| YawModel::new(net, f64::INFINITY).ok())
        .map(|m| Box::new(YawCheckpoint::from_model(&m, None)));
    YawError::Diverged { epoch, last_good }
}

use serde::{Deserialize, Serialize};

use super::net::{Block, ParamLayout, YawNet, YawNetConfig};
use super::{YawError, YawModel};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub test_yaw_mae: f64,
}

/// Versioned JSON checkpoint. Floats are written in shortest round-trip
/// form, so `load(save(x)) == x` bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YawCheckpoint {
    pub version: u32,
    pub config: YawNetConfig,
    pub params: Vec<LayerParams>,
    pub tau_rec: f64,
    pub train_report_summary: Option<ReportSummary>,
}

const BUNDLED_CHECKPOINT: &str = include_str!("../../data/yaw_checkpoint.json");

impl YawCheckpoint {
    pub fn from_model(model: &YawModel, summary: Option<ReportSummary>) -> Self {
        let net = model.net();
        let layout = net.param_layout();
        let p = net.params();
        let mut params = Vec::new();
        for block in Block::ALL {
            for (i, spec) in layout.block(block).iter().enumerate() {
                params.push(LayerParams {
                    name: format!("{}.{i}", block.name()),
                    inputs: spec.inputs,
                    outputs: spec.outputs,
                    weights: p[spec.offset..spec.bias_offset()].to_vec(),
                    bias: p[spec.bias_offset()..spec.offset + spec.len()].to_vec(),
                });
            }
        }
        Self {
            version: CHECKPOINT_VERSION,
            config: net.config().clone(),
            params,
            tau_rec: model.tau_rec(),
            train_report_summary: summary,
        }
    }

    /// Rebuilds the model, checking every layer against the configured shape.
    pub fn model(&self) -> Result<YawModel, YawError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(YawError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        self.config.validate()?;
        let layout = ParamLayout::new(&self.config);
        let expected: Vec<(String, usize, usize)> = Block::ALL
            .iter()
            .flat_map(|b| {
                layout
                    .block(*b)
                    .iter()
                    .enumerate()
                    .map(move |(i, s)| (format!("{}.{i}", b.name()), s.inputs, s.outputs))
            })
            .collect();
        if expected.len() != self.params.len() {
            return Err(YawError::Checkpoint(format!(
                "expected {} layers, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        let mut flat = Vec::with_capacity(layout.total);
        for ((name, inputs, outputs), layer) in expected.iter().zip(&self.params) {
            if &layer.name != name
                || layer.inputs != *inputs
                || layer.outputs != *outputs
                || layer.weights.len() != inputs * outputs
                || layer.bias.len() != *outputs
            {
                return Err(YawError::Checkpoint(format!(
                    "layer `{}` does not match `{name}` {outputs}x{inputs}",
                    layer.name
                )));
            }
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.bias);
        }
        let net = YawNet::from_parts(self.config.clone(), flat)?;
        YawModel::new(net, self.tau_rec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, YawError> {
        let ckpt: YawCheckpoint = serde_json::from_str(text).map_err(|e| YawError::Checkpoint(e.to_string()))?;
        ckpt.model()?;
        Ok(ckpt)
    }

    /// The checkpoint shipped with the crate, trained on the default
    /// scenario.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_CHECKPOINT).expect("bundled checkpoint is valid")
    }
}

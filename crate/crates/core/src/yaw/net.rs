use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamHyper;
use super::bins::{make_bins, YawBinLayout, YawTargets};
use super::YawError;
use crate::model::SKELETON_LEN;

/// Per-keypoint feature channels: bbox-normalized u, v and visibility.
pub const FEATURES_PER_KEYPOINT: usize = 3;
pub const FEATURE_DIM: usize = SKELETON_LEN * FEATURES_PER_KEYPOINT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub bin: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct YawNetConfig {
    pub feature_dim: usize,
    pub latent_dim: usize,
    /// Leading latent entries visible to the yaw head.
    pub yaw_latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub bins: usize,
    pub half_width: f64,
    pub loss_weights: LossWeights,
    pub adam: AdamHyper,
    pub leaky_slope: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for YawNetConfig {
    fn default() -> Self {
        Self {
            feature_dim: FEATURE_DIM,
            latent_dim: 32,
            yaw_latent_dim: 16,
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64, 64],
            head_hidden: vec![64, 64],
            bins: 8,
            half_width: PI / 4.0,
            loss_weights: LossWeights { reconstruction: 1.0, bin: 1.0, offset: 10.0 },
            adam: AdamHyper::default(),
            leaky_slope: 0.01,
            epochs: 120,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl YawNetConfig {
    pub fn validate(&self) -> Result<(), YawError> {
        let dims = [self.feature_dim, self.latent_dim, self.yaw_latent_dim, self.batch_size];
        let hidden = self.encoder_hidden.iter().chain(&self.decoder_hidden).chain(&self.head_hidden);
        if dims.iter().chain(hidden).any(|&d| d == 0) {
            return Err(YawError::InvalidConfig("all dimensions must be >= 1".into()));
        }
        if self.yaw_latent_dim > self.latent_dim {
            return Err(YawError::InvalidConfig("yaw latent dimension exceeds latent dimension".into()));
        }
        let w = &self.loss_weights;
        if [w.reconstruction, w.bin, w.offset].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(YawError::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(YawError::InvalidConfig("leaky slope must be >= 0".into()));
        }
        self.adam.validate()?;
        make_bins(self.bins, self.half_width)?;
        Ok(())
    }

    pub fn layout(&self) -> Result<YawBinLayout, YawError> {
        make_bins(self.bins, self.half_width)
    }
}

/// Location of one dense layer inside the flat parameter vector. Weights are
/// row-major `outputs x inputs`, followed by the bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseSpec {
    pub offset: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl DenseSpec {
    pub fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.outputs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Encoder,
    Decoder,
    Head,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Encoder, Block::Decoder, Block::Head];

    pub fn name(self) -> &'static str {
        match self {
            Block::Encoder => "encoder",
            Block::Decoder => "decoder",
            Block::Head => "head",
        }
    }
}

/// Layer-major parameter layout: encoder, decoder, then yaw head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub encoder: Vec<DenseSpec>,
    pub decoder: Vec<DenseSpec>,
    pub head: Vec<DenseSpec>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(config: &YawNetConfig) -> Self {
        let mut offset = 0;
        let mut block = |sizes: Vec<usize>| {
            sizes
                .windows(2)
                .map(|w| {
                    let spec = DenseSpec { offset, inputs: w[0], outputs: w[1] };
                    offset += spec.len();
                    spec
                })
                .collect::<Vec<_>>()
        };
        let chain = |first: usize, hidden: &[usize], last: usize| {
            let mut v = vec![first];
            v.extend_from_slice(hidden);
            v.push(last);
            v
        };
        let encoder = block(chain(config.feature_dim, &config.encoder_hidden, config.latent_dim));
        let decoder = block(chain(config.latent_dim, &config.decoder_hidden, config.feature_dim));
        let head = block(chain(config.yaw_latent_dim, &config.head_hidden, 2 * config.bins));
        Self { encoder, decoder, head, total: offset }
    }

    pub fn block(&self, b: Block) -> &[DenseSpec] {
        match b {
            Block::Encoder => &self.encoder,
            Block::Decoder => &self.decoder,
            Block::Head => &self.head,
        }
    }
}

/// Activations kept from a forward pass through one MLP.
#[derive(Debug, Clone, Default)]
struct MlpTrace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn mlp_forward(
    params: &[f64],
    specs: &[DenseSpec],
    input: &[f64],
    slope: f64,
    trace: Option<&mut MlpTrace>,
) -> Vec<f64> {
    let mut local = MlpTrace::default();
    let trace = trace.unwrap_or(&mut local);
    trace.inputs.clear();
    trace.pre.clear();
    let mut a = input.to_vec();
    for (l, spec) in specs.iter().enumerate() {
        let w = &params[spec.offset..spec.bias_offset()];
        let b = &params[spec.bias_offset()..spec.offset + spec.len()];
        let mut out = b.to_vec();
        for (o, row) in out.iter_mut().zip(w.chunks_exact(spec.inputs)) {
            *o += row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>();
        }
        trace.inputs.push(a);
        trace.pre.push(out.clone());
        if l + 1 < specs.len() {
            out.iter_mut().for_each(|v| *v = leaky(*v, slope));
        }
        a = out;
    }
    a
}

/// Accumulates parameter gradients into `grads` and returns the gradient
/// with respect to the MLP input.
fn mlp_backward(
    params: &[f64],
    specs: &[DenseSpec],
    trace: &MlpTrace,
    grad_out: &[f64],
    slope: f64,
    grads: &mut [f64],
) -> Vec<f64> {
    let mut delta = grad_out.to_vec();
    for l in (0..specs.len()).rev() {
        let spec = specs[l];
        let input = &trace.inputs[l];
        {
            let (gw, gb) = grads[spec.offset..spec.offset + spec.len()].split_at_mut(spec.weight_len());
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                let row = &mut gw[o * spec.inputs..(o + 1) * spec.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
        }
        let w = &params[spec.offset..spec.bias_offset()];
        let mut back = vec![0.0; spec.inputs];
        for (d, row) in delta.iter().zip(w.chunks_exact(spec.inputs)) {
            for (b, wv) in back.iter_mut().zip(row) {
                *b += d * wv;
            }
        }
        if l > 0 {
            for (b, pre) in back.iter_mut().zip(&trace.pre[l - 1]) {
                if *pre <= 0.0 {
                    *b *= slope;
                }
            }
        }
        delta = back;
    }
    delta
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub reconstruction: Vec<f64>,
    pub bin_logits: Vec<f64>,
    pub offsets: Vec<f64>,
    pub latent: Vec<f64>,
}

/// Encoder-decoder with a yaw head on the leading part of the latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct YawNet {
    config: YawNetConfig,
    layout: ParamLayout,
    params: Vec<f64>,
}

/// Mean loss components over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub reconstruction: f64,
    pub bin: f64,
    pub offset: f64,
}

/// A training example: feature vector plus its ground-truth heading.
#[derive(Debug, Clone, PartialEq)]
pub struct YawSample {
    pub features: Vec<f64>,
    pub yaw: f64,
}

fn bce_with_logits(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl YawNet {
    /// Uniform fan-in initialization drawn from the config seed.
    pub fn init(config: YawNetConfig) -> Result<Self, YawError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for block in Block::ALL {
            let specs = layout.block(block);
            for (l, spec) in specs.iter().enumerate() {
                // He-uniform ahead of leaky activations, LeCun-uniform on outputs.
                let gain = if l + 1 < specs.len() { 6.0 } else { 3.0 };
                let limit = (gain / spec.inputs as f64).sqrt();
                for w in &mut params[spec.offset..spec.bias_offset()] {
                    *w = rng.random_range(-limit..limit);
                }
            }
        }
        Ok(Self { config, layout, params })
    }

    pub fn from_parts(config: YawNetConfig, params: Vec<f64>) -> Result<Self, YawError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(YawError::Shape { expected: layout.total, got: params.len() });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(YawError::NonFinite("parameters"));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &YawNetConfig {
        &self.config
    }

    pub fn param_layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_features(&self, features: &[f64]) -> Result<(), YawError> {
        if features.len() != self.config.feature_dim {
            return Err(YawError::Shape { expected: self.config.feature_dim, got: features.len() });
        }
        Ok(())
    }

    /// Yaw head applied to an arbitrary latent vector.
    pub fn head(&self, latent: &[f64]) -> Result<(Vec<f64>, Vec<f64>), YawError> {
        if latent.len() != self.config.latent_dim {
            return Err(YawError::Shape { expected: self.config.latent_dim, got: latent.len() });
        }
        let out = mlp_forward(
            &self.params,
            &self.layout.head,
            &latent[..self.config.yaw_latent_dim],
            self.config.leaky_slope,
            None,
        );
        let (logits, offsets) = out.split_at(self.config.bins);
        Ok((logits.to_vec(), offsets.to_vec()))
    }

    pub fn forward(&self, features: &[f64]) -> Result<ForwardOutput, YawError> {
        self.check_features(features)?;
        let slope = self.config.leaky_slope;
        let latent = mlp_forward(&self.params, &self.layout.encoder, features, slope, None);
        let reconstruction = mlp_forward(&self.params, &self.layout.decoder, &latent, slope, None);
        let (bin_logits, offsets) = self.head(&latent)?;
        Ok(ForwardOutput { reconstruction, bin_logits, offsets, latent })
    }

    /// Per-sample reconstruction loss (mean squared error over features).
    pub fn reconstruction_loss(&self, features: &[f64]) -> Result<f64, YawError> {
        let out = self.forward(features)?;
        Ok(mse(&out.reconstruction, features))
    }

    /// Weighted loss over `batch` and, when `grads` is given, its gradient
    /// (accumulated, so pass a zeroed buffer).
    pub fn loss_and_grad(
        &self,
        batch: &[&YawSample],
        targets: &[&YawTargets],
        mut grads: Option<&mut [f64]>,
    ) -> Result<LossComponents, YawError> {
        if batch.is_empty() {
            return Err(YawError::EmptyBatch);
        }
        let cfg = &self.config;
        let k = cfg.bins;
        let slope = cfg.leaky_slope;
        let w = &cfg.loss_weights;
        let n = batch.len() as f64;
        let rec_scale = 1.0 / (n * cfg.feature_dim as f64);
        let bin_scale = 1.0 / (n * k as f64);
        let members: usize = targets.iter().map(|t| t.membership.iter().filter(|&&m| m).count()).sum();
        let off_scale = if members > 0 { 1.0 / members as f64 } else { 0.0 };

        let mut sums = LossComponents::default();
        let mut enc_trace = MlpTrace::default();
        let mut dec_trace = MlpTrace::default();
        let mut head_trace = MlpTrace::default();
        for (sample, target) in batch.iter().zip(targets) {
            self.check_features(&sample.features)?;
            let latent = mlp_forward(&self.params, &self.layout.encoder, &sample.features, slope, Some(&mut enc_trace));
            let rec = mlp_forward(&self.params, &self.layout.decoder, &latent, slope, Some(&mut dec_trace));
            let head = mlp_forward(
                &self.params,
                &self.layout.head,
                &latent[..cfg.yaw_latent_dim],
                slope,
                Some(&mut head_trace),
            );

            let mut d_rec = vec![0.0; cfg.feature_dim];
            for (i, (r, x)) in rec.iter().zip(&sample.features).enumerate() {
                let e = r - x;
                sums.reconstruction += e * e;
                d_rec[i] = w.reconstruction * 2.0 * e * rec_scale;
            }
            let mut d_head = vec![0.0; 2 * k];
            for i in 0..k {
                let y = if target.membership[i] { 1.0 } else { 0.0 };
                let logit = head[i];
                sums.bin += bce_with_logits(logit, y);
                d_head[i] = w.bin * (sigmoid(logit) - y) * bin_scale;
                if target.membership[i] {
                    let e = head[k + i] - target.offsets[i];
                    sums.offset += e * e;
                    d_head[k + i] = w.offset * 2.0 * e * off_scale;
                }
            }

            if let Some(g) = grads.as_deref_mut() {
                let mut d_latent = mlp_backward(&self.params, &self.layout.decoder, &dec_trace, &d_rec, slope, g);
                let d_yaw = mlp_backward(&self.params, &self.layout.head, &head_trace, &d_head, slope, g);
                for (dl, dy) in d_latent.iter_mut().zip(&d_yaw) {
                    *dl += dy;
                }
                mlp_backward(&self.params, &self.layout.encoder, &enc_trace, &d_latent, slope, g);
            }
        }
        sums.reconstruction *= rec_scale;
        sums.bin *= bin_scale;
        sums.offset *= off_scale;
        sums.total = w.reconstruction * sums.reconstruction + w.bin * sums.bin + w.offset * sums.offset;
        Ok(sums)
    }
}

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// Weighted three-part loss: reconstruction MSE, per-bin binary
/// cross-entropy against multi-hot membership, and offset MSE over member
/// bins only.
pub fn total_loss(net: &YawNet, batch: &[YawSample]) -> Result<LossComponents, YawError> {
    let layout = net.config().layout()?;
    let targets: Vec<YawTargets> = batch.iter().map(|s| layout.encode(s.yaw)).collect();
    let samples: Vec<&YawSample> = batch.iter().collect();
    let target_refs: Vec<&YawTargets> = targets.iter().collect();
    net.loss_and_grad(&samples, &target_refs, None)
}

/// Loss and its gradient with respect to the flat parameter vector.
pub fn loss_gradient(net: &YawNet, batch: &[YawSample]) -> Result<(LossComponents, Vec<f64>), YawError> {
    let layout = net.config().layout()?;
    let targets: Vec<YawTargets> = batch.iter().map(|s| layout.encode(s.yaw)).collect();
    let samples: Vec<&YawSample> = batch.iter().collect();
    let target_refs: Vec<&YawTargets> = targets.iter().collect();
    let mut grads = vec![0.0; net.params().len()];
    let loss = net.loss_and_grad(&samples, &target_refs, Some(&mut grads))?;
    Ok((loss, grads))
}

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::YawError;
use crate::model::wrap;

/// `K` overlapping angular bins with centers at `-pi + (i + 0.5) * 2pi/K`.
///
/// Membership is half-open, `-half_width <= wrap(theta - center) <
/// half_width`, so that with `half_width = 2pi/K` every heading falls in
/// exactly two bins, including headings that sit exactly on a center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YawBinLayout {
    centers: Vec<f64>,
    half_width: f64,
}

/// Target encoding of one heading.
#[derive(Debug, Clone, PartialEq)]
pub struct YawTargets {
    pub membership: Vec<bool>,
    /// `wrap(theta - center_i)` for members, 0 elsewhere.
    pub offsets: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedYaw {
    pub theta: f64,
    pub chosen_bin: usize,
    pub bin_confidence: f64,
}

pub fn make_bins(k: usize, half_width: f64) -> Result<YawBinLayout, YawError> {
    if k < 2 {
        return Err(YawError::InvalidBins(format!("need at least 2 bins, got {k}")));
    }
    if !half_width.is_finite() || half_width < PI / k as f64 || half_width > PI {
        return Err(YawError::InvalidBins(format!(
            "half width {half_width} must lie in [pi/K, pi] to cover every heading"
        )));
    }
    let step = TAU / k as f64;
    let centers = (0..k).map(|i| -PI + (i as f64 + 0.5) * step).collect();
    Ok(YawBinLayout { centers, half_width })
}

impl YawBinLayout {
    /// `K` bins with the default two-fold overlap.
    pub fn with_bins(k: usize) -> Result<Self, YawError> {
        make_bins(k, TAU / k.max(1) as f64)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    fn is_member(&self, offset: f64) -> bool {
        -self.half_width <= offset && offset < self.half_width
    }

    pub fn membership(&self, theta: f64) -> Vec<bool> {
        self.centers.iter().map(|c| self.is_member(wrap(theta - c))).collect()
    }

    pub fn encode(&self, theta: f64) -> YawTargets {
        let theta = wrap(theta);
        let mut membership = Vec::with_capacity(self.len());
        let mut offsets = Vec::with_capacity(self.len());
        for c in &self.centers {
            let d = wrap(theta - c);
            let member = self.is_member(d);
            membership.push(member);
            offsets.push(if member { d } else { 0.0 });
        }
        YawTargets { membership, offsets }
    }

    /// Picks the highest-logit bin (lowest index on ties) and adds its clamped
    /// offset to the bin center.
    pub fn decode(&self, bin_logits: &[f64], offsets: &[f64]) -> Result<DecodedYaw, YawError> {
        let k = self.len();
        if bin_logits.len() != k || offsets.len() != k {
            return Err(YawError::Shape { expected: k, got: bin_logits.len().min(offsets.len()) });
        }
        if bin_logits.iter().chain(offsets).any(|v| !v.is_finite()) {
            return Err(YawError::NonFinite("decoder input"));
        }
        let mut best = 0;
        for (i, &l) in bin_logits.iter().enumerate() {
            if l > bin_logits[best] {
                best = i;
            }
        }
        let max = bin_logits[best];
        let denom: f64 = bin_logits.iter().map(|l| (l - max).exp()).sum();
        let offset = offsets[best].clamp(-self.half_width, self.half_width);
        Ok(DecodedYaw { theta: wrap(self.centers[best] + offset), chosen_bin: best, bin_confidence: 1.0 / denom })
    }
}

pub fn encode_yaw_targets(theta: f64, layout: &YawBinLayout) -> Result<YawTargets, YawError> {
    if !theta.is_finite() {
        return Err(YawError::NonFinite("theta"));
    }
    Ok(layout.encode(theta))
}

pub fn decode_yaw(bin_logits: &[f64], offsets: &[f64], layout: &YawBinLayout) -> Result<DecodedYaw, YawError> {
    layout.decode(bin_logits, offsets)
}

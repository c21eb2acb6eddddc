use serde::{Deserialize, Serialize};

use super::FrameResult;
use crate::model::{pose_error, wrap, HeliPose};
use crate::yaw::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameErrors {
    pub frame_id: u64,
    /// `None` when the frame had no solution.
    pub dx: Option<f64>,
    pub dy: Option<f64>,
    pub dyaw: Option<f64>,
    pub net_dyaw: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl AxisStats {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, p50: f64::NAN, p95: f64::NAN, max: f64::NAN };
        }
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            p50: percentile(values, 0.5),
            p95: percentile(values, 0.95),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub solved: usize,
    pub x: AxisStats,
    pub y: AxisStats,
    pub yaw: AxisStats,
    /// Fraction of all frames (unsolved count as misses) inside the
    /// accuracy envelope.
    pub within_envelope: f64,
    pub net_yaw_mae: Option<f64>,
    pub errors: Vec<FrameErrors>,
}

/// Nearest-rank percentile.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    quantile(values, q)
}

/// Fraction of `values` at or below each threshold.
pub fn error_cdf(values: &[f64], thresholds: &[f64]) -> Vec<(f64, f64)> {
    let n = values.len().max(1) as f64;
    thresholds.iter().map(|&t| (t, values.iter().filter(|&&v| v <= t).count() as f64 / n)).collect()
}

/// Compares results with ground truth frame by frame; `envelope` is the
/// `(x m, y m, yaw rad)` accuracy bound.
pub fn evaluate(truth: &[HeliPose], results: &[FrameResult], envelope: (f64, f64, f64)) -> EvalSummary {
    let errors: Vec<FrameErrors> = truth
        .iter()
        .zip(results)
        .map(|(gt, r)| {
            let e = r.pose.map(|p| pose_error(gt, &p));
            FrameErrors {
                frame_id: r.frame_id,
                dx: e.map(|e| e.dx),
                dy: e.map(|e| e.dy),
                dyaw: e.map(|e| e.dyaw),
                net_dyaw: r.net_yaw.map(|y| wrap(y - gt.yaw()).abs()),
            }
        })
        .collect();
    let axis = |f: fn(&FrameErrors) -> Option<f64>| errors.iter().filter_map(f).collect::<Vec<_>>();
    let (xs, ys, yaws) = (axis(|e| e.dx), axis(|e| e.dy), axis(|e| e.dyaw));
    let net = axis(|e| e.net_dyaw);
    let inside = errors
        .iter()
        .filter(|e| matches!((e.dx, e.dy, e.dyaw), (Some(x), Some(y), Some(w)) if x < envelope.0 && y < envelope.1 && w < envelope.2))
        .count();
    EvalSummary {
        frames: errors.len(),
        solved: xs.len(),
        x: AxisStats::of(&xs),
        y: AxisStats::of(&ys),
        yaw: AxisStats::of(&yaws),
        within_envelope: inside as f64 / errors.len().max(1) as f64,
        net_yaw_mae: (!net.is_empty()).then(|| net.iter().sum::<f64>() / net.len() as f64),
        errors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::Decision;

    fn result(id: u64, pose: Option<HeliPose>) -> FrameResult {
        FrameResult {
            frame_id: id,
            pose,
            smoothed: None,
            reproj_rms: None,
            decision: Decision::Red,
            yaw_agreement: false,
            net_in_distribution: false,
            net_yaw: None,
            keypoints_used: vec![],
            bbox: None,
            recalibrated: false,
            latency_ms: 0.0,
        }
    }

    #[test]
    fn unsolved_frames_count_against_envelope() {
        let gt = HeliPose::level(0.0, 0.0, 0.0, 0.0).unwrap();
        let near = HeliPose::level(0.01, -0.02, 0.0, 0.1).unwrap();
        let far = HeliPose::level(0.5, 0.0, 0.0, 0.0).unwrap();
        let s = evaluate(
            &[gt, gt, gt, gt],
            &[result(0, Some(near)), result(1, Some(far)), result(2, None), result(3, Some(gt))],
            (0.1524, 0.1524, 0.5),
        );
        assert_eq!(s.frames, 4);
        assert_eq!(s.solved, 3);
        assert_eq!(s.within_envelope, 0.5);
        assert_eq!(s.x.max, 0.5);
        assert!(s.net_yaw_mae.is_none());
    }

    #[test]
    fn cdf_counts() {
        let v = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(error_cdf(&v, &[0.0, 0.2, 1.0]), vec![(0.0, 0.0), (0.2, 0.5), (1.0, 1.0)]);
    }
}

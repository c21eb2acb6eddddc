use serde::{Deserialize, Serialize};

use crate::model::wrap;

/// Constant-gain position/velocity tracker for one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBeta {
    pub alpha: f64,
    pub beta: f64,
    /// Residuals and state are wrapped to `[-pi, pi)`.
    pub angular: bool,
    state: Option<(f64, f64)>,
}

impl AlphaBeta {
    pub fn new(alpha: f64, beta: f64, angular: bool) -> Self {
        Self { alpha, beta, angular, state: None }
    }

    pub fn value(&self) -> Option<f64> {
        self.state.map(|(x, _)| x)
    }

    pub fn velocity(&self) -> Option<f64> {
        self.state.map(|(_, v)| v)
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    /// Folds in measurement `z` taken `dt` seconds after the previous one.
    /// The first measurement initializes the state at rest.
    pub fn update(&mut self, z: f64, dt: f64) -> f64 {
        let (x, v) = match self.state {
            None => (if self.angular { wrap(z) } else { z }, 0.0),
            Some((x, v)) => {
                let predicted = x + v * dt;
                let r = if self.angular { wrap(z - predicted) } else { z - predicted };
                // Blended form so alpha = 1 reproduces the measurement exactly.
                let z_near = if self.angular { predicted + r } else { z };
                let mut x = (1.0 - self.alpha) * predicted + self.alpha * z_near;
                if self.angular {
                    x = wrap(x);
                }
                (x, v + self.beta * r / dt)
            }
        };
        self.state = Some((x, v));
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Independent alpha-beta filters on x, y and yaw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSmoother {
    pub x: AlphaBeta,
    pub y: AlphaBeta,
    pub yaw: AlphaBeta,
}

impl PoseSmoother {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            x: AlphaBeta::new(alpha, beta, false),
            y: AlphaBeta::new(alpha, beta, false),
            yaw: AlphaBeta::new(alpha, beta, true),
        }
    }

    pub fn smooth(&mut self, x: f64, y: f64, yaw: f64, dt: f64) -> SmoothedPose {
        SmoothedPose { x: self.x.update(x, dt), y: self.y.update(y, dt), yaw: self.yaw.update(yaw, dt) }
    }

    pub fn current(&self) -> Option<SmoothedPose> {
        Some(SmoothedPose { x: self.x.value()?, y: self.y.value()?, yaw: self.yaw.value()? })
    }

    pub fn reset(&mut self) {
        self.x.reset();
        self.y.reset();
        self.yaw.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_input_is_a_fixed_point() {
        let mut f = AlphaBeta::new(0.5, 0.1, false);
        for _ in 0..10 {
            f.update(2.5, 0.1);
        }
        assert!((f.value().unwrap() - 2.5).abs() < 1e-6);
        // Also from a disturbed start.
        let mut f = AlphaBeta::new(0.5, 0.1, false);
        f.update(0.0, 0.1);
        for _ in 0..200 {
            f.update(1.0, 0.1);
        }
        assert!((f.value().unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn yaw_residuals_wrap() {
        let mut f = AlphaBeta::new(0.5, 0.0, true);
        f.update(3.1, 0.1);
        let y = f.update(-3.1, 0.1);
        // Halfway along the short arc through pi, not through zero.
        assert!(y.abs() > 3.1, "{y}");
    }

    /// Straight-line recomputation of the recursion.
    fn replay(z: &[f64], alpha: f64, beta: f64, dt: f64) -> Vec<f64> {
        let mut out = vec![z[0]];
        let (mut x, mut v) = (z[0], 0.0);
        for &m in &z[1..] {
            let p = x + v * dt;
            x = p + alpha * (m - p);
            v += beta * (m - p) / dt;
            out.push(x);
        }
        out
    }

    #[test]
    fn matches_independent_replay() {
        let z: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin() + 0.01 * i as f64).collect();
        let mut f = AlphaBeta::new(0.5, 0.1, false);
        let got: Vec<f64> = z.iter().map(|&m| f.update(m, 0.1)).collect();
        for (a, b) in got.iter().zip(replay(&z, 0.5, 0.1, 0.1)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn unit_alpha_zero_beta_passes_through(z in prop::collection::vec(-100.0f64..100.0, 1..40)) {
            let mut f = AlphaBeta::new(1.0, 0.0, false);
            for &m in &z {
                prop_assert_eq!(f.update(m, 0.1), m);
            }
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::model::{wrap, DlaSpec};
use crate::yaw::YawEstimate;

/// Consecutive opposite raw results needed to flip the latch.
pub const HYSTERESIS_FRAMES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Green,
    Red,
}

/// Hysteresis latch over raw in/out results. Starts RED.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latch {
    state: Decision,
    opposing: usize,
    frames: usize,
}

impl Default for Latch {
    fn default() -> Self {
        Self::new(HYSTERESIS_FRAMES)
    }
}

impl Latch {
    pub fn new(frames: usize) -> Self {
        Self { state: Decision::Red, opposing: 0, frames: frames.max(1) }
    }

    pub fn state(&self) -> Decision {
        self.state
    }

    pub fn feed(&mut self, raw: Decision) -> Decision {
        if raw == self.state {
            self.opposing = 0;
        } else {
            self.opposing += 1;
            if self.opposing >= self.frames {
                self.state = raw;
                self.opposing = 0;
            }
        }
        self.state
    }

    /// Drops to RED immediately and forgets any pending streak.
    pub fn force_red(&mut self) {
        self.state = Decision::Red;
        self.opposing = 0;
    }
}

/// Latched GREEN/RED for an `(x, y, yaw)` pose; `None` (no solution) forces
/// RED.
pub fn dla_decision(pose: Option<(f64, f64, f64)>, dla: &DlaSpec, latch: &mut Latch) -> Decision {
    match pose {
        Some((x, y, yaw)) if x.is_finite() && y.is_finite() && yaw.is_finite() => {
            latch.feed(if dla.contains(x, y, yaw) { Decision::Green } else { Decision::Red })
        }
        _ => {
            latch.force_red();
            Decision::Red
        }
    }
}

/// Agreement between the geometric and learned headings. An
/// out-of-distribution network result never agrees.
pub fn cross_validate_yaw(yaw_pnp: f64, net: &YawEstimate, tau_agree: f64) -> bool {
    net.in_distribution && wrap(yaw_pnp - net.theta).abs() < tau_agree
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn est(theta: f64, in_distribution: bool) -> YawEstimate {
        YawEstimate { theta, chosen_bin: 0, bin_confidence: 1.0, recon_loss: 0.0, in_distribution }
    }

    fn green_latch(dla: &DlaSpec) -> Latch {
        let mut l = Latch::default();
        for _ in 0..3 {
            dla_decision(Some((0.0, 0.0, 0.0)), dla, &mut l);
        }
        assert_eq!(l.state(), Decision::Green);
        l
    }

    #[test]
    fn centered_pose_latches_green() {
        let dla = DlaSpec::default();
        let mut l = Latch::default();
        assert_eq!(dla_decision(Some((0.0, 0.0, 0.0)), &dla, &mut l), Decision::Red);
        assert_eq!(dla_decision(Some((0.0, 0.0, 0.0)), &dla, &mut l), Decision::Red);
        assert_eq!(dla_decision(Some((0.0, 0.0, 0.0)), &dla, &mut l), Decision::Green);
    }

    #[test]
    fn persistent_offset_flips_red_after_three() {
        let dla = DlaSpec::default();
        let mut l = green_latch(&dla);
        let out = Some((dla.tol_x + 0.05, 0.0, 0.0));
        assert_eq!(dla_decision(out, &dla, &mut l), Decision::Green);
        assert_eq!(dla_decision(out, &dla, &mut l), Decision::Green);
        assert_eq!(dla_decision(out, &dla, &mut l), Decision::Red);
    }

    #[test]
    fn single_blip_stays_green() {
        let dla = DlaSpec::default();
        let mut l = green_latch(&dla);
        for p in [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)] {
            assert_eq!(dla_decision(Some(p), &dla, &mut l), Decision::Green);
        }
    }

    #[test]
    fn no_solution_is_red_immediately() {
        let dla = DlaSpec::default();
        let mut l = green_latch(&dla);
        assert_eq!(dla_decision(None, &dla, &mut l), Decision::Red);
        assert_eq!(dla_decision(Some((f64::NAN, 0.0, 0.0)), &dla, &mut l), Decision::Red);
        assert_eq!(dla_decision(Some((0.0, 0.0, 0.0)), &dla, &mut l), Decision::Red);
    }

    #[test]
    fn yaw_cross_check_examples() {
        assert!(cross_validate_yaw(0.4, &est(0.4, true), 0.3));
        assert!(!cross_validate_yaw(0.0, &est(std::f64::consts::PI, true), 0.3));
        assert!(cross_validate_yaw(3.1, &est(-3.1, true), 0.3));
        assert!(!cross_validate_yaw(0.4, &est(0.4, false), 0.3));
    }

    proptest! {
        #[test]
        fn replay_is_bit_exact(raw in prop::collection::vec(prop::option::of(any::<bool>()), 0..200)) {
            let dla = DlaSpec::default();
            let poses: Vec<_> = raw.iter().map(|r| r.map(|inside| if inside { (0.0, 0.0, 0.0) } else { (1.0, 0.0, 0.0) })).collect();
            let run = || { let mut l = Latch::default(); poses.iter().map(|p| dla_decision(*p, &dla, &mut l)).collect::<Vec<_>>() };
            prop_assert_eq!(run(), run());
            // Every GREEN is preceded by at least three raw-inside frames.
            let decisions = run();
            for (i, d) in decisions.iter().enumerate() {
                if *d == Decision::Green {
                    prop_assert!(i >= 2);
                    prop_assert!(poses[i].is_some());
                }
            }
        }
    }
}

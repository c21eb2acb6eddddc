use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{frame_rng, simulate_frame, ScenarioConfig, Scene, SimError, SimFrame, TRAJECTORY_STREAM};
use crate::model::{wrap, HeliPose};

/// A timed point on the approach path (deck frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

/// Approach from forward-left, hover, translate over the landing area,
/// settle. Held at the last waypoint afterwards.
pub fn default_waypoints() -> Vec<Waypoint> {
    vec![
        Waypoint { t: 0.0, x: -3.0, y: 3.0, z: 1.5, yaw: 0.6 },
        Waypoint { t: 15.0, x: -1.5, y: 1.5, z: 1.4, yaw: 0.3 },
        Waypoint { t: 30.0, x: 0.0, y: 0.5, z: 1.0, yaw: 0.1 },
        Waypoint { t: 45.0, x: 0.0, y: 0.0, z: 0.0, yaw: 0.0 },
    ]
}

pub(super) fn validate_waypoints(wps: &[Waypoint]) -> Result<(), SimError> {
    if wps.is_empty() {
        return Err(SimError::InvalidConfig("trajectory needs at least one waypoint".into()));
    }
    for w in wps {
        if ![w.t, w.x, w.y, w.z, w.yaw].iter().all(|v| v.is_finite()) || w.z < 0.0 {
            return Err(SimError::InvalidConfig(format!("invalid waypoint {w:?}")));
        }
    }
    if wps.windows(2).any(|p| p[1].t <= p[0].t) {
        return Err(SimError::InvalidConfig("waypoint times must increase".into()));
    }
    Ok(())
}

/// Piecewise-cubic Hermite through the waypoints with zero tangents, so the
/// path comes to rest at each one. Returns `(x, y, z, yaw)`.
pub fn spline_pose(wps: &[Waypoint], t: f64) -> (f64, f64, f64, f64) {
    let first = wps[0];
    if t <= first.t {
        return (first.x, first.y, first.z, first.yaw);
    }
    for seg in wps.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if t < b.t {
            let s = (t - a.t) / (b.t - a.t);
            let h = s * s * (3.0 - 2.0 * s);
            let lerp = |p: f64, q: f64| p + (q - p) * h;
            return (lerp(a.x, b.x), lerp(a.y, b.y), lerp(a.z, b.z), wrap(a.yaw + wrap(b.yaw - a.yaw) * h));
        }
    }
    let last = wps[wps.len() - 1];
    (last.x, last.y, last.z, last.yaw)
}

// Per unit sea state: (amplitude, period s, phase rad) for x, y, z, roll,
// pitch, yaw.
const SEA_MOTION: [(f64, f64, f64); 6] =
    [(0.025, 9.0, 0.0), (0.035, 7.0, 1.1), (0.02, 6.0, 2.3), (0.004, 8.0, 0.4), (0.004, 5.0, 2.9), (0.008, 11.0, 1.7)];

/// Relative-motion offsets `[dx, dy, dz, droll, dpitch, dyaw]` induced by
/// ship motion. Fades out over the last half meter of descent.
pub fn sea_state_offsets(sea_state: f64, t: f64, z: f64) -> [f64; 6] {
    let envelope = (z / 0.5).clamp(0.0, 1.0);
    SEA_MOTION.map(|(amp, period, phase)| sea_state * envelope * amp * (TAU * t / period + phase).sin())
}

pub fn trajectory_pose(config: &ScenarioConfig, t: f64) -> Result<HeliPose, SimError> {
    let (x, y, z, yaw) = spline_pose(&config.waypoints, t);
    if config.sea_state == 0.0 {
        return Ok(HeliPose::level(x, y, z, yaw)?);
    }
    let d = sea_state_offsets(config.sea_state, t, z);
    Ok(HeliPose::new(x + d[0], y + d[1], z + d[2], d[3], d[4], yaw + d[5])?)
}

/// `duration_s * frame_rate` frames of the approach, frame `i` at
/// `t = i / frame_rate`.
pub fn gen_trajectory(config: &ScenarioConfig, scene: &Scene, duration_s: f64) -> Result<Vec<SimFrame>, SimError> {
    config.validate()?;
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(SimError::InvalidConfig(format!("duration must be positive, got {duration_s}")));
    }
    let n = (duration_s * config.frame_rate).round() as u64;
    (0..n).map(|i| trajectory_frame(config, scene, i)).collect()
}

/// Frame `frame_id` of the approach, at `t = frame_id / frame_rate`.
pub fn trajectory_frame(config: &ScenarioConfig, scene: &Scene, frame_id: u64) -> Result<SimFrame, SimError> {
    let pose = trajectory_pose(config, frame_id as f64 / config.frame_rate)?;
    let mut rng = frame_rng(config.seed, TRAJECTORY_STREAM, frame_id);
    Ok(simulate_frame(&pose, frame_id, scene, &config.noise, &mut rng))
}

//! JSON messages exchanged with operator clients.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraExtrinsics, GeometryError};
use crate::model::{BoundingBox, KeypointObservation};
use crate::sim::{NoisePreset, MAX_SEA_STATE};
use crate::tracker::{Decision, FrameResult};

pub const SCHEMA_VERSION: u32 = 1;
/// Largest accepted camera perturbation per axis, degrees.
pub const MAX_PERTURB_DEG: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("value out of range: {0}")]
    OutOfRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireKeypoint {
    pub name: String,
    pub u: f64,
    pub v: f64,
}

/// Scenario settings in force when the frame was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStatus {
    pub sea_state: f64,
    pub noise_preset: Option<NoisePreset>,
    pub paused: bool,
}

/// One published frame. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMessage {
    pub schema_version: u32,
    pub frame_id: u64,
    pub timestamp_ms: u64,
    pub decision: Decision,
    pub pose: Option<WirePose>,
    pub bbox: Option<BoundingBox>,
    pub keypoints: Vec<WireKeypoint>,
    pub yaw_agreement: bool,
    pub net_in_distribution: bool,
    pub reproj_rms: Option<f64>,
    pub latency_ms: f64,
    pub scenario: ScenarioStatus,
}

impl StreamMessage {
    /// Wire view of `result`; keypoints are the visible detections.
    pub fn from_result(
        result: &FrameResult,
        observations: &[KeypointObservation],
        timestamp_ms: u64,
        scenario: ScenarioStatus,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            frame_id: result.frame_id,
            timestamp_ms,
            decision: result.decision,
            pose: result.pose.map(|p| WirePose { x: p.x(), y: p.y(), yaw: p.yaw() }),
            bbox: result.bbox,
            keypoints: observations
                .iter()
                .filter(|o| o.visible && o.u.is_finite() && o.v.is_finite())
                .map(|o| WireKeypoint { name: o.name.clone(), u: o.u, v: o.v })
                .collect(),
            yaw_agreement: result.yaw_agreement,
            net_in_distribution: result.net_in_distribution,
            reproj_rms: result.reproj_rms.filter(|r| r.is_finite()),
            latency_ms: result.latency_ms,
            scenario,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stream message serializes")
    }

    pub fn parse(text: &str) -> Result<Self, WireError> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| WireError::Malformed(e.to_string()))?;
        if v.schema_version != SCHEMA_VERSION {
            return Err(WireError::SchemaVersion(v.schema_version));
        }
        serde_json::from_str(text).map_err(|e| WireError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPerturbation {
    pub droll: f64,
    pub dpitch: f64,
    pub dyaw: f64,
}

impl CameraPerturbation {
    /// Turns the camera about its own axes (roll about the optical axis,
    /// pitch about image x, yaw about image y), keeping its center fixed.
    pub fn apply(&self, extr: &CameraExtrinsics) -> Result<CameraExtrinsics, GeometryError> {
        let delta = Rotation3::from_axis_angle(&Vector3::z_axis(), self.droll.to_radians())
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.dpitch.to_radians())
            * Rotation3::from_axis_angle(&Vector3::y_axis(), self.dyaw.to_radians());
        let rotation = delta.matrix() * extr.rotation;
        CameraExtrinsics::new(rotation, -(rotation * extr.center()))
    }
}

/// Operator steering of the simulated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioCommand {
    SetSeaState(f64),
    SetNoisePreset(NoisePreset),
    PerturbCamera(CameraPerturbation),
    Pause,
    Resume,
    Restart,
}

impl ScenarioCommand {
    pub fn validate(&self) -> Result<(), WireError> {
        match *self {
            ScenarioCommand::SetSeaState(s) if !(0.0..=MAX_SEA_STATE).contains(&s) => {
                Err(WireError::OutOfRange(format!("sea state {s} not in [0, 6]")))
            }
            ScenarioCommand::PerturbCamera(p)
                if ![p.droll, p.dpitch, p.dyaw].iter().all(|d| d.is_finite() && d.abs() <= MAX_PERTURB_DEG) =>
            {
                Err(WireError::OutOfRange(format!("camera perturbation {p:?} exceeds {MAX_PERTURB_DEG} degrees")))
            }
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("command serializes")
    }

    pub fn parse(text: &str) -> Result<Self, WireError> {
        let cmd: ScenarioCommand = serde_json::from_str(text).map_err(|e| WireError::Malformed(e.to_string()))?;
        cmd.validate()?;
        Ok(cmd)
    }
}

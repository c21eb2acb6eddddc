//! Synthetic scene generation: pose sampling, skeleton and marking
//! projection through the camera, and a detector noise model.

mod dataset;
mod trajectory;

pub use dataset::{
    dataset_records, gen_dataset, parse_dataset, read_dataset, write_dataset, Dataset, DatasetHeader, DatasetPaths,
    DatasetRecord, Split, DATASET_FORMAT, DATASET_VERSION,
};
pub use trajectory::{
    default_waypoints, gen_trajectory, sea_state_offsets, spline_pose, trajectory_frame, trajectory_pose, Waypoint,
};

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{parse_camera_file, CalibrationError, MarkingMap, MarkingObservation};
use crate::geometry::{Camera, GeometryError};
use crate::model::{default_skeleton, BoundingBox, HeliPose, KeypointObservation, ModelError, Skeleton};

pub const BBOX_PAD: f64 = 0.05;
pub const MAX_SEA_STATE: f64 = 6.0;

pub const TRAIN_STREAM: u64 = 0;
pub const TEST_STREAM: u64 = 1;
pub const TRAJECTORY_STREAM: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Camera(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("i/o: {0}")]
    Io(String),
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

/// Half-open sampling interval `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min < self.max
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min <= v && v < self.max
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        rng.random_range(self.min..self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRanges {
    pub x: Interval,
    pub y: Interval,
    pub z: Interval,
    pub yaw: Interval,
    /// Roll and pitch are drawn from `[-jitter, jitter)`.
    pub roll_jitter: f64,
    pub pitch_jitter: f64,
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            x: Interval::new(-3.0, 3.0),
            y: Interval::new(-3.0, 3.0),
            z: Interval::new(0.5, 2.0),
            yaw: Interval::new(-PI, PI),
            roll_jitter: 0.05,
            pitch_jitter: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePreset {
    Day,
    Dusk,
    Night,
}

impl NoisePreset {
    pub const ALL: [NoisePreset; 3] = [NoisePreset::Day, NoisePreset::Dusk, NoisePreset::Night];

    pub fn model(self) -> NoiseModel {
        match self {
            NoisePreset::Day => NoiseModel { sigma_px: 1.0, dropout_p: 0.02 },
            NoisePreset::Dusk => NoiseModel { sigma_px: 2.0, dropout_p: 0.10 },
            NoisePreset::Night => NoiseModel { sigma_px: 4.0, dropout_p: 0.25 },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoisePreset::Day => "day",
            NoisePreset::Dusk => "dusk",
            NoisePreset::Night => "night",
        }
    }
}

impl std::str::FromStr for NoisePreset {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NoisePreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::InvalidConfig(format!("unknown noise preset `{s}`")))
    }
}

/// Stand-in for detector quality: i.i.d. Gaussian pixel noise plus random
/// keypoint dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_px: f64,
    pub dropout_p: f64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel { sigma_px: 0.0, dropout_p: 0.0 };

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.sigma_px.is_finite() && self.sigma_px >= 0.0) {
            return Err(SimError::InvalidConfig(format!("sigma_px must be >= 0, got {}", self.sigma_px)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(SimError::InvalidConfig(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub ranges: PoseRanges,
    pub noise: NoiseModel,
    /// `None` uses the bundled installation.
    pub camera_file: Option<PathBuf>,
    pub marking_file: Option<PathBuf>,
    pub seed: u64,
    pub frame_rate: f64,
    pub sea_state: f64,
    pub waypoints: Vec<Waypoint>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            ranges: PoseRanges::default(),
            noise: NoisePreset::Dusk.model(),
            camera_file: None,
            marking_file: None,
            seed: 0,
            frame_rate: 10.0,
            sea_state: 0.0,
            waypoints: default_waypoints(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let r = &self.ranges;
        for (name, i) in [("x", r.x), ("y", r.y), ("z", r.z), ("yaw", r.yaw)] {
            if !i.is_valid() {
                return Err(SimError::InvalidConfig(format!("{name} range is empty")));
            }
        }
        if r.yaw.min < -PI || r.yaw.max > PI {
            return Err(SimError::InvalidConfig("yaw range must lie within [-pi, pi]".into()));
        }
        for (name, j) in [("roll_jitter", r.roll_jitter), ("pitch_jitter", r.pitch_jitter)] {
            if !(j.is_finite() && (0.0..1.0).contains(&j)) {
                return Err(SimError::InvalidConfig(format!("{name} must be in [0, 1) rad")));
            }
        }
        self.noise.validate()?;
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(SimError::InvalidConfig("frame_rate must be positive".into()));
        }
        if !(0.0..=MAX_SEA_STATE).contains(&self.sea_state) {
            return Err(SimError::InvalidConfig(format!("sea_state must be in [0, 6], got {}", self.sea_state)));
        }
        trajectory::validate_waypoints(&self.waypoints)
    }
}

/// Everything a frame is rendered against.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub skeleton: Skeleton,
    pub camera: Camera,
    pub markings: MarkingMap,
}

impl Scene {
    pub fn bundled() -> Self {
        Self {
            skeleton: default_skeleton().expect("bundled skeleton is valid"),
            camera: crate::calibration::bundled_camera(),
            markings: MarkingMap::bundled(),
        }
    }

    /// Bundled assets, overridden by any files the config names.
    pub fn load(config: &ScenarioConfig) -> Result<Self, SimError> {
        let mut scene = Self::bundled();
        if let Some(path) = &config.camera_file {
            scene.camera = parse_camera_file(&std::fs::read_to_string(path)?)?;
        }
        if let Some(path) = &config.marking_file {
            scene.markings = MarkingMap::from_json(&std::fs::read_to_string(path)?)?;
        }
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.skeleton.validate()?;
        self.camera.intrinsics.validate()?;
        self.camera.extrinsics.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub frame_id: u64,
    pub ground_truth: HeliPose,
    pub observations: Vec<KeypointObservation>,
    pub markings: Vec<MarkingObservation>,
    /// `None` when no keypoint is visible.
    pub bbox: Option<BoundingBox>,
}

impl SimFrame {
    pub fn visible_count(&self) -> usize {
        self.observations.iter().filter(|o| o.visible).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bbox.is_none()
    }
}

/// Generator for frame `frame_id` of seed stream `stream`; every frame is a
/// pure function of these three numbers.
pub fn frame_rng(seed: u64, stream: u64, frame_id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&frame_id.to_le_bytes());
    key[24..].copy_from_slice(b"helideck");
    ChaCha8Rng::from_seed(key)
}

/// Draws `(dropped, du, dv)`; always consumes the same amount of randomness.
fn detector_noise(noise: &NoiseModel, rng: &mut impl Rng) -> (bool, f64, f64) {
    let dropped = rng.random::<f64>() < noise.dropout_p;
    let du: f64 = rng.sample(StandardNormal);
    let dv: f64 = rng.sample(StandardNormal);
    (dropped, noise.sigma_px * du, noise.sigma_px * dv)
}

/// Projects the skeleton at `pose` and the deck markings, then applies the
/// noise model. Keypoints that are dropped, behind the camera, or outside
/// the image are reported invisible at `(0, 0)`.
pub fn simulate_frame(
    pose: &HeliPose,
    frame_id: u64,
    scene: &Scene,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> SimFrame {
    let intr = &scene.camera.intrinsics;
    let observations: Vec<KeypointObservation> = scene
        .skeleton
        .keypoints
        .iter()
        .map(|kp| {
            let (dropped, du, dv) = detector_noise(noise, rng);
            let exact = scene.camera.project(&pose.transform_point(&kp.position()));
            match exact {
                Ok(uv) if !dropped && intr.contains(uv.x + du, uv.y + dv) => {
                    KeypointObservation { name: kp.name.clone(), u: uv.x + du, v: uv.y + dv, visible: true }
                }
                _ => KeypointObservation { name: kp.name.clone(), u: 0.0, v: 0.0, visible: false },
            }
        })
        .collect();
    let markings = scene
        .markings
        .markings
        .iter()
        .filter_map(|m| {
            let (dropped, du, dv) = detector_noise(noise, rng);
            let uv = scene.camera.project(&nalgebra::Vector3::new(m.x, m.y, 0.0)).ok()?;
            let (u, v) = (uv.x + du, uv.y + dv);
            (!dropped && intr.contains(u, v)).then(|| MarkingObservation { id: m.id.clone(), u, v })
        })
        .collect();
    let bbox = BoundingBox::padded_hull(observations.iter().filter(|o| o.visible).map(|o| (o.u, o.v)), BBOX_PAD);
    SimFrame { frame_id, ground_truth: *pose, observations, markings, bbox }
}

/// Pose drawn uniformly from the configured ranges.
pub fn sample_pose(ranges: &PoseRanges, rng: &mut impl Rng) -> Result<HeliPose, SimError> {
    let x = ranges.x.sample(rng);
    let y = ranges.y.sample(rng);
    let z = ranges.z.sample(rng);
    let yaw = ranges.yaw.sample(rng);
    let roll = jitter(ranges.roll_jitter, rng);
    let pitch = jitter(ranges.pitch_jitter, rng);
    Ok(HeliPose::new(x, y, z, roll, pitch, yaw)?)
}

fn jitter(j: f64, rng: &mut impl Rng) -> f64 {
    if j > 0.0 {
        rng.random_range(-j..j)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{deck_pose_from_camera, epnp_solve, Correspondence, GeometryError};
    use crate::model::pose_error;
    use nalgebra::Vector2;

    fn correspondences(frame: &SimFrame, scene: &Scene) -> Vec<Correspondence> {
        frame
            .observations
            .iter()
            .zip(&scene.skeleton.keypoints)
            .filter(|(o, _)| o.visible)
            .map(|(o, kp)| Correspondence::new(kp.position(), Vector2::new(o.u, o.v)))
            .collect()
    }

    #[test]
    fn noiseless_frame_is_exact_projection() {
        let scene = Scene::bundled();
        let pose = HeliPose::new(0.4, 0.2, 0.8, 0.01, -0.02, 0.7).unwrap();
        let frame = simulate_frame(&pose, 3, &scene, &NoiseModel::NONE, &mut frame_rng(1, 0, 3));
        for (o, kp) in frame.observations.iter().zip(&scene.skeleton.keypoints) {
            let uv = scene.camera.project(&pose.transform_point(&kp.position())).unwrap();
            if o.visible {
                assert_eq!((o.u, o.v), (uv.x, uv.y));
            } else {
                assert!(!scene.camera.intrinsics.contains(uv.x, uv.y));
            }
        }
        let visible: Vec<_> = frame.observations.iter().filter(|o| o.visible).collect();
        let tight = BoundingBox::padded_hull(visible.iter().map(|o| (o.u, o.v)), 0.0).unwrap();
        let b = frame.bbox.unwrap();
        assert!((b.width() - 1.1 * tight.width()).abs() < 1e-9);
        assert!((b.height() - 1.1 * tight.height()).abs() < 1e-9);
        assert!(visible.iter().all(|o| b.contains(o.u, o.v)));
        assert_eq!(frame.markings.len(), scene.markings.markings.len());
    }

    #[test]
    fn noiseless_frame_solves_to_ground_truth() {
        let scene = Scene::bundled();
        let pose = HeliPose::new(-1.0, 1.5, 1.2, 0.02, 0.01, -2.0).unwrap();
        let frame = simulate_frame(&pose, 0, &scene, &NoiseModel::NONE, &mut frame_rng(0, 0, 0));
        let sol = epnp_solve(&correspondences(&frame, &scene), &scene.camera.intrinsics).unwrap();
        let est = deck_pose_from_camera(&sol, &scene.camera.extrinsics).unwrap();
        let e = pose_error(&pose, &est);
        assert!(e.dx < 1e-8 && e.dy < 1e-8 && e.dyaw < 1e-9, "{e:?}");
    }

    #[test]
    fn frames_are_reproducible_from_seed_and_id() {
        let scene = Scene::bundled();
        let pose = HeliPose::level(0.0, 0.0, 1.0, 0.3).unwrap();
        let noise = NoisePreset::Night.model();
        let a = simulate_frame(&pose, 9, &scene, &noise, &mut frame_rng(5, 1, 9));
        let b = simulate_frame(&pose, 9, &scene, &noise, &mut frame_rng(5, 1, 9));
        assert_eq!(a, b);
        let c = simulate_frame(&pose, 9, &scene, &noise, &mut frame_rng(5, 2, 9));
        assert_ne!(a, c);
    }

    #[test]
    fn heavy_dropout_starves_the_solver() {
        let scene = Scene::bundled();
        let pose = HeliPose::level(0.0, 0.0, 1.0, 0.0).unwrap();
        let noise = NoiseModel { sigma_px: 1.0, dropout_p: 0.99 };
        let mut total = 0usize;
        let mut starved = 0usize;
        for id in 0..1000 {
            let frame = simulate_frame(&pose, id, &scene, &noise, &mut frame_rng(2, 0, id));
            let n = frame.visible_count();
            total += n;
            if n < 6 {
                starved += 1;
                let err = epnp_solve(&correspondences(&frame, &scene), &scene.camera.intrinsics).unwrap_err();
                assert!(matches!(err, GeometryError::NotEnoughPoints { .. } | GeometryError::Empty), "{err:?}");
            }
        }
        let in_view =
            simulate_frame(&pose, 0, &scene, &NoiseModel::NONE, &mut frame_rng(0, 0, 0)).visible_count() as f64;
        // Binomial 3-sigma band around in_view * 0.01 visible per frame.
        let mean = total as f64 / 1000.0;
        assert!((mean - 0.01 * in_view).abs() < 3.0 * (in_view * 0.01 * 0.99 / 1000.0).sqrt(), "mean {mean}");
        assert!(starved >= 990);
    }

    #[test]
    fn config_validation() {
        assert!(ScenarioConfig::default().validate().is_ok());
        let mut c = ScenarioConfig::default();
        c.noise.dropout_p = 1.0;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::default();
        c.noise.sigma_px = -0.1;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::default();
        c.ranges.z = Interval::new(1.0, 1.0);
        assert!(c.validate().is_err());
        let c = ScenarioConfig { sea_state: 6.5, ..ScenarioConfig::default() };
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::default();
        c.waypoints.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn presets_parse_and_validate() {
        for p in NoisePreset::ALL {
            assert_eq!(p.name().parse::<NoisePreset>().unwrap(), p);
            p.model().validate().unwrap();
        }
        assert!("noon".parse::<NoisePreset>().is_err());
        assert_eq!(NoisePreset::Dusk.model(), NoiseModel { sigma_px: 2.0, dropout_p: 0.10 });
    }

    #[test]
    fn out_of_view_pose_gives_empty_frame() {
        let scene = Scene::bundled();
        let pose = HeliPose::level(0.0, -20.0, 0.5, 0.0).unwrap();
        let frame = simulate_frame(&pose, 0, &scene, &NoiseModel::NONE, &mut frame_rng(0, 0, 0));
        assert!(frame.is_empty());
        assert_eq!(frame.visible_count(), 0);
        assert!(frame.observations.iter().all(|o| o.u == 0.0 && o.v == 0.0));
    }
}

//! Per-frame pipeline: keypoint association, PnP, smoothing, yaw
//! cross-check and the latched landing-area decision.

mod decision;
mod eval;
mod filter;

pub use decision::{cross_validate_yaw, dla_decision, Decision, Latch, HYSTERESIS_FRAMES};
pub use eval::{error_cdf, evaluate, percentile, AxisStats, EvalSummary, FrameErrors};
pub use filter::{AlphaBeta, PoseSmoother, SmoothedPose};

use std::time::Instant;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::calibration::{recalibrate, MarkingMap, MarkingObservation, RecalibrationGate};
use crate::geometry::{
    deck_pose_from_camera, epnp_solve, refine_pose_gn, Camera, CameraExtrinsics, Correspondence, GeometryError,
    RefineOptions,
};
use crate::model::{BoundingBox, DlaSpec, HeliPose, KeypointObservation, Skeleton};
use crate::sim::{SimFrame, BBOX_PAD};
use crate::yaw::{bbox_heading, deck_yaw, keypoint_features, YawEstimate, YawModel};

pub const MIN_KEYPOINTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau_agree: f64,
    pub hysteresis_frames: usize,
    pub frame_rate: f64,
    pub dla: DlaSpec,
    /// Re-estimate the camera from deck markings every N frames; 0 disables.
    pub recalibrate_every: u64,
    pub gate: RecalibrationGate,
    pub refine_iters: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.1,
            tau_agree: 0.3,
            hysteresis_frames: HYSTERESIS_FRAMES,
            frame_rate: 10.0,
            dla: DlaSpec::default(),
            recalibrate_every: 0,
            gate: RecalibrationGate::default(),
            refine_iters: RefineOptions::default().max_iters,
        }
    }
}

/// One frame of detector output.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub frame_id: u64,
    pub observations: &'a [KeypointObservation],
    pub markings: &'a [MarkingObservation],
    pub bbox: Option<BoundingBox>,
}

impl<'a> From<&'a SimFrame> for FrameInput<'a> {
    fn from(f: &'a SimFrame) -> Self {
        Self { frame_id: f.frame_id, observations: &f.observations, markings: &f.markings, bbox: f.bbox }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_id: u64,
    /// Unsmoothed PnP estimate; `None` is "no solution".
    pub pose: Option<HeliPose>,
    pub smoothed: Option<SmoothedPose>,
    pub reproj_rms: Option<f64>,
    pub decision: Decision,
    pub yaw_agreement: bool,
    pub net_in_distribution: bool,
    /// Deck-frame heading from the network.
    pub net_yaw: Option<f64>,
    pub keypoints_used: Vec<String>,
    pub bbox: Option<BoundingBox>,
    pub recalibrated: bool,
    pub latency_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    skeleton: Skeleton,
    camera: Camera,
    markings: MarkingMap,
    model: Option<YawModel>,
    smoother: PoseSmoother,
    latch: Latch,
    frames: u64,
}

impl Tracker {
    pub fn new(
        config: TrackerConfig,
        skeleton: Skeleton,
        camera: Camera,
        markings: MarkingMap,
        model: Option<YawModel>,
    ) -> Self {
        Self {
            smoother: PoseSmoother::new(config.alpha, config.beta),
            latch: Latch::new(config.hysteresis_frames),
            config,
            skeleton,
            camera,
            markings,
            model,
            frames: 0,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn extrinsics(&self) -> &CameraExtrinsics {
        &self.camera.extrinsics
    }

    pub fn set_extrinsics(&mut self, extrinsics: CameraExtrinsics) {
        self.camera.extrinsics = extrinsics;
    }

    pub fn latch(&self) -> &Latch {
        &self.latch
    }

    pub fn frames_processed(&self) -> u64 {
        self.frames
    }

    /// Clears filter, latch and frame counter; keeps the current camera.
    pub fn reset(&mut self) {
        self.smoother.reset();
        self.latch = Latch::new(self.config.hysteresis_frames);
        self.frames = 0;
    }

    /// Never fails: solver problems degrade to "no solution" and RED.
    pub fn process_frame(&mut self, input: FrameInput<'_>) -> FrameResult {
        let start = Instant::now();
        let dt = 1.0 / self.config.frame_rate;
        let recalibrated = self.maybe_recalibrate(input.markings);
        self.frames += 1;

        let (names, corrs) = self.associate(input.observations);
        let bbox = input
            .bbox
            .filter(|b| b.is_finite() && b.width() > 0.0 && b.height() > 0.0)
            .or_else(|| BoundingBox::padded_hull(corrs.iter().map(|c| (c.uv.x, c.uv.y)), BBOX_PAD));

        let solved = if corrs.len() >= MIN_KEYPOINTS { self.solve(&corrs).ok() } else { None };
        let smoothed = solved.map(|(pose, _)| self.smoother.smooth(pose.x(), pose.y(), pose.yaw(), dt));

        let net = bbox.and_then(|b| self.net_estimate(input.observations, &b));
        let yaw_agreement = match (solved, net) {
            (Some((pose, _)), Some(est)) => cross_validate_yaw(pose.yaw(), &est, self.config.tau_agree),
            _ => false,
        };
        let decision = dla_decision(smoothed.map(|s| (s.x, s.y, s.yaw)), &self.config.dla, &mut self.latch);

        FrameResult {
            frame_id: input.frame_id,
            pose: solved.map(|(p, _)| p),
            smoothed,
            reproj_rms: solved.map(|(_, rms)| rms),
            decision,
            yaw_agreement,
            net_in_distribution: net.is_some_and(|e| e.in_distribution),
            net_yaw: net.map(|e| e.theta),
            keypoints_used: if solved.is_some() { names } else { Vec::new() },
            bbox,
            recalibrated,
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }

    /// Visible, finite observations matched to skeleton points by name; the
    /// first observation of a name wins.
    fn associate(&self, observations: &[KeypointObservation]) -> (Vec<String>, Vec<Correspondence>) {
        let mut seen = [false; crate::model::SKELETON_LEN];
        let mut names = Vec::new();
        let mut corrs = Vec::new();
        for o in observations.iter().filter(|o| o.visible && o.u.is_finite() && o.v.is_finite()) {
            let Some(i) = self.skeleton.index_of(&o.name) else { continue };
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                continue;
            }
            names.push(o.name.clone());
            corrs.push(Correspondence::new(self.skeleton.keypoints[i].position(), Vector2::new(o.u, o.v)));
        }
        (names, corrs)
    }

    fn solve(&self, corrs: &[Correspondence]) -> Result<(HeliPose, f64), GeometryError> {
        let intr = &self.camera.intrinsics;
        let initial = epnp_solve(corrs, intr)?;
        let opts = RefineOptions { max_iters: self.config.refine_iters, ..RefineOptions::default() };
        let (refined, _) = refine_pose_gn(&initial, corrs, intr, &opts)?;
        let pose = deck_pose_from_camera(&refined, &self.camera.extrinsics)?;
        if !refined.reproj_rms.is_finite() {
            return Err(GeometryError::RankDeficient);
        }
        Ok((pose, refined.reproj_rms))
    }

    fn net_estimate(&self, observations: &[KeypointObservation], bbox: &BoundingBox) -> Option<YawEstimate> {
        let model = self.model.as_ref()?;
        let mut est = model.estimate(&keypoint_features(observations, bbox)).ok()?;
        est.theta = deck_yaw(est.theta, bbox_heading(&self.camera, bbox));
        Some(est)
    }

    fn maybe_recalibrate(&mut self, observations: &[MarkingObservation]) -> bool {
        let every = self.config.recalibrate_every;
        if every == 0 || self.frames % every != 0 {
            return false;
        }
        let known: Vec<MarkingObservation> = observations
            .iter()
            .filter(|o| o.u.is_finite() && o.v.is_finite() && self.markings.get(&o.id).is_some())
            .cloned()
            .collect();
        let Ok(markings) = self.markings.associate(&known) else { return false };
        match recalibrate(&markings, &self.camera.intrinsics, &self.camera.extrinsics, &self.config.gate) {
            Ok(outcome) if outcome.accepted() => {
                self.camera.extrinsics = outcome.extrinsics;
                true
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::pose_error;
    use crate::sim::{frame_rng, gen_trajectory, simulate_frame, NoiseModel, ScenarioConfig, Scene};
    use crate::yaw::YawCheckpoint;

    fn tracker(scene: &Scene, config: TrackerConfig) -> Tracker {
        let model = YawCheckpoint::bundled().model().ok();
        Tracker::new(config, scene.skeleton.clone(), scene.camera, scene.markings.clone(), model)
    }

    #[test]
    fn noiseless_centered_frame_goes_green() {
        let scene = Scene::bundled();
        let mut t = tracker(&scene, TrackerConfig::default());
        let pose = HeliPose::level(0.0, 0.0, 0.0, 0.0).unwrap();
        let frame = simulate_frame(&pose, 0, &scene, &NoiseModel::NONE, &mut frame_rng(0, 0, 0));
        let mut last = None;
        for _ in 0..3 {
            last = Some(t.process_frame((&frame).into()));
        }
        let r = last.unwrap();
        assert_eq!(r.decision, Decision::Green);
        assert!(r.reproj_rms.unwrap() < 1e-8);
        assert!(r.yaw_agreement, "net yaw {:?}", r.net_yaw);
        assert!(r.keypoints_used.len() >= MIN_KEYPOINTS);
    }

    #[test]
    fn five_keypoints_is_no_solution() {
        let scene = Scene::bundled();
        let mut t = tracker(&scene, TrackerConfig::default());
        let pose = HeliPose::level(0.0, 0.0, 0.5, 0.0).unwrap();
        let mut frame = simulate_frame(&pose, 0, &scene, &NoiseModel::NONE, &mut frame_rng(0, 0, 0));
        let mut kept = 0;
        for o in &mut frame.observations {
            if o.visible {
                kept += 1;
                o.visible = kept <= 5;
            }
        }
        let r = t.process_frame((&frame).into());
        assert!(r.pose.is_none() && r.reproj_rms.is_none());
        assert_eq!(r.decision, Decision::Red);
        assert!(r.keypoints_used.is_empty());
    }

    #[test]
    fn degenerate_input_never_panics() {
        let scene = Scene::bundled();
        let mut t = tracker(&scene, TrackerConfig { recalibrate_every: 1, ..TrackerConfig::default() });
        let nan = KeypointObservation { name: "nose".into(), u: f64::NAN, v: 1.0, visible: true };
        let junk = KeypointObservation { name: "???".into(), u: 1.0, v: 1.0, visible: true };
        let marks = [MarkingObservation { id: "M00".into(), u: f64::INFINITY, v: 0.0 }];
        let bad_box = BoundingBox { u0: f64::NAN, v0: 0.0, u1: 1.0, v1: 1.0 };
        let inputs: [(&[KeypointObservation], Option<BoundingBox>); 4] =
            [(&[], None), (std::slice::from_ref(&nan), Some(bad_box)), (&[junk], None), (&vec![nan.clone(); 19], None)];
        for (obs, bbox) in inputs {
            let r = t.process_frame(FrameInput { frame_id: 0, observations: obs, markings: &marks, bbox });
            assert_eq!(r.decision, Decision::Red);
            assert!(r.pose.is_none());
        }
        // Duplicated names are not double-counted.
        let pose = HeliPose::level(0.0, 0.0, 0.5, 0.0).unwrap();
        let frame = simulate_frame(&pose, 0, &scene, &NoiseModel::NONE, &mut frame_rng(0, 0, 0));
        let first = frame.observations.iter().find(|o| o.visible).unwrap().clone();
        let obs = vec![first; 10];
        let r = t.process_frame(FrameInput { frame_id: 1, observations: &obs, markings: &[], bbox: None });
        assert!(r.pose.is_none());
    }

    #[test]
    fn zero_noise_trajectory_is_exact() {
        let scene = Scene::bundled();
        let cfg = ScenarioConfig { noise: NoiseModel::NONE, ..ScenarioConfig::default() };
        let mut t = tracker(&scene, TrackerConfig::default());
        for f in gen_trajectory(&cfg, &scene, 60.0).unwrap() {
            let r = t.process_frame((&f).into());
            let e = pose_error(&f.ground_truth, &r.pose.unwrap());
            assert!(e.dx < 1e-5 && e.dy < 1e-5 && e.dyaw < 1e-7, "frame {}: {e:?}", f.frame_id);
        }
    }

    #[test]
    fn recalibration_follows_a_camera_bump() {
        let scene = Scene::bundled();
        let mut bumped = scene.clone();
        let r = nalgebra::Rotation3::from_euler_angles(1f64.to_radians(), 0.0, 0.0).into_inner();
        let rot = r * scene.camera.extrinsics.rotation;
        let center = scene.camera.extrinsics.center();
        bumped.camera.extrinsics = CameraExtrinsics::new(rot, -(rot * center)).unwrap();
        let mut t = tracker(&scene, TrackerConfig { recalibrate_every: 5, ..TrackerConfig::default() });
        let pose = HeliPose::level(0.2, 0.3, 0.0, 0.1).unwrap();
        let mut last = None;
        for id in 0..6 {
            let f = simulate_frame(&pose, id, &bumped, &NoiseModel::NONE, &mut frame_rng(0, 0, id));
            last = Some(t.process_frame((&f).into()));
        }
        let r = last.unwrap();
        let e = pose_error(&pose, &r.pose.unwrap());
        assert!(e.dx < 1e-6 && e.dy < 1e-6, "{e:?}");
        assert!(crate::model::rotation_angle_between(&t.extrinsics().rotation, &rot) < 1e-8);
    }
}

//! Headless trajectory runs and their results file.
//!
//! The file is JSON lines: a header, then one record per frame. Wall-clock
//! latency is left out so a fixed seed gives a byte-identical file.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use helideck::model::{BoundingBox, HeliPose};
use helideck::sim::{trajectory_frame, NoiseModel};
use helideck::tracker::{evaluate, Decision, EvalSummary, FrameInput, FrameResult, SmoothedPose};
use serde::{Deserialize, Serialize};

use crate::config::AppContext;

pub const DEMO_FORMAT: &str = "helideck-demo";
pub const DEMO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub frames: usize,
    pub frame_rate: f64,
    pub noise: NoiseModel,
    pub sea_state: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoFrame {
    pub frame_id: u64,
    pub ground_truth: HeliPose,
    pub pose: Option<HeliPose>,
    pub smoothed: Option<SmoothedPose>,
    pub reproj_rms: Option<f64>,
    pub decision: Decision,
    pub yaw_agreement: bool,
    pub net_in_distribution: bool,
    pub net_yaw: Option<f64>,
    pub keypoints_used: Vec<String>,
    pub bbox: Option<BoundingBox>,
    pub recalibrated: bool,
}

impl DemoFrame {
    pub fn new(ground_truth: HeliPose, r: &FrameResult) -> Self {
        Self {
            frame_id: r.frame_id,
            ground_truth,
            pose: r.pose,
            smoothed: r.smoothed,
            reproj_rms: r.reproj_rms,
            decision: r.decision,
            yaw_agreement: r.yaw_agreement,
            net_in_distribution: r.net_in_distribution,
            net_yaw: r.net_yaw,
            keypoints_used: r.keypoints_used.clone(),
            bbox: r.bbox,
            recalibrated: r.recalibrated,
        }
    }

    /// The tracker result, with zero latency.
    pub fn result(&self) -> FrameResult {
        FrameResult {
            frame_id: self.frame_id,
            pose: self.pose,
            smoothed: self.smoothed,
            reproj_rms: self.reproj_rms,
            decision: self.decision,
            yaw_agreement: self.yaw_agreement,
            net_in_distribution: self.net_in_distribution,
            net_yaw: self.net_yaw,
            keypoints_used: self.keypoints_used.clone(),
            bbox: self.bbox,
            recalibrated: self.recalibrated,
            latency_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoRun {
    pub header: DemoHeader,
    pub frames: Vec<DemoFrame>,
    /// Time spent inside the tracker only.
    pub tracker_time: Duration,
    pub latencies_ms: Vec<f64>,
}

impl DemoRun {
    pub fn fps(&self) -> f64 {
        self.frames.len() as f64 / self.tracker_time.as_secs_f64().max(1e-9)
    }

    /// `envelope` is the `(x m, y m, yaw rad)` accuracy bound.
    pub fn summary(&self, envelope: (f64, f64, f64)) -> EvalSummary {
        summarize(&self.frames, envelope)
    }

    pub fn transitions(&self) -> usize {
        decision_transitions(&self.frames)
    }
}

pub fn summarize(frames: &[DemoFrame], envelope: (f64, f64, f64)) -> EvalSummary {
    let truth: Vec<HeliPose> = frames.iter().map(|f| f.ground_truth).collect();
    let results: Vec<FrameResult> = frames.iter().map(DemoFrame::result).collect();
    evaluate(&truth, &results, envelope)
}

pub fn decision_transitions(frames: &[DemoFrame]) -> usize {
    frames.windows(2).filter(|w| w[0].decision != w[1].decision).count()
}

/// Runs `duration_s` seconds of the approach through a fresh tracker.
pub fn run_demo(ctx: &AppContext, duration_s: f64) -> Result<DemoRun> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        bail!("duration must be positive, got {duration_s}");
    }
    let config = &ctx.scenario;
    let n = (duration_s * config.frame_rate).round() as u64;
    let mut tracker = ctx.new_tracker();
    let mut frames = Vec::with_capacity(n as usize);
    let mut latencies_ms = Vec::with_capacity(n as usize);
    let mut tracker_time = Duration::ZERO;
    for id in 0..n {
        let frame = trajectory_frame(config, &ctx.scene, id).context("scenario generation failed")?;
        let result = tracker.process_frame(FrameInput::from(&frame));
        tracker_time += Duration::from_secs_f64(result.latency_ms / 1e3);
        latencies_ms.push(result.latency_ms);
        frames.push(DemoFrame::new(frame.ground_truth, &result));
    }
    let header = DemoHeader {
        format: DEMO_FORMAT.into(),
        version: DEMO_VERSION,
        seed: config.seed,
        frames: frames.len(),
        frame_rate: config.frame_rate,
        noise: config.noise,
        sea_state: config.sea_state,
    };
    Ok(DemoRun { header, frames, tracker_time, latencies_ms })
}

pub fn demo_text(header: &DemoHeader, frames: &[DemoFrame]) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for f in frames {
        out.push_str(&serde_json::to_string(f).expect("frame serializes"));
        out.push('\n');
    }
    out
}

pub fn write_demo(path: &Path, run: &DemoRun) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    std::fs::write(path, demo_text(&run.header, &run.frames))
        .with_context(|| format!("cannot write {}", path.display()))
}

pub fn parse_demo(text: &str) -> Result<(DemoHeader, Vec<DemoFrame>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().context("empty results file")?;
    let header: DemoHeader = serde_json::from_str(first).context("line 1: bad header")?;
    if header.format != DEMO_FORMAT {
        bail!("not a demo results file (format {:?})", header.format);
    }
    if header.version != DEMO_VERSION {
        bail!("unsupported results version {}", header.version);
    }
    let frames = lines
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}: bad frame record", i + 1)))
        .collect::<Result<Vec<DemoFrame>>>()?;
    if frames.len() != header.frames {
        bail!("header promises {} frames, found {}", header.frames, frames.len());
    }
    Ok((header, frames))
}

pub fn read_demo(path: &Path) -> Result<(DemoHeader, Vec<DemoFrame>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_demo(&text).with_context(|| format!("in {}", path.display()))
}

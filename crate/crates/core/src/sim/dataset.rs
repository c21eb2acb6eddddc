use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    frame_rng, sample_pose, simulate_frame, ScenarioConfig, Scene, SimError, SimFrame, TEST_STREAM, TRAIN_STREAM,
};
use crate::calibration::MarkingObservation;
use crate::geometry::Camera;
use crate::model::{BoundingBox, HeliPose, KeypointObservation};
use crate::yaw::{bbox_heading, keypoint_features, relative_yaw, YawSample};

pub const DATASET_FORMAT: &str = "helideck-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn stream(self) -> u64 {
        match self {
            Split::Train => TRAIN_STREAM,
            Split::Test => TEST_STREAM,
        }
    }
}

/// First line of every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub split: Split,
    pub count: usize,
    pub seed: u64,
    pub seed_stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub frame_id: u64,
    pub ground_truth: HeliPose,
    pub bbox: Option<BoundingBox>,
    pub keypoints: Vec<KeypointObservation>,
    pub markings: Vec<MarkingObservation>,
    pub seed_stream: u64,
}

impl DatasetRecord {
    pub fn from_frame(frame: SimFrame, seed_stream: u64) -> Self {
        Self {
            frame_id: frame.frame_id,
            ground_truth: frame.ground_truth,
            bbox: frame.bbox,
            keypoints: frame.observations,
            markings: frame.markings,
            seed_stream,
        }
    }

    /// Network input and viewpoint-relative yaw target; `None` for empty
    /// frames.
    pub fn yaw_sample(&self, camera: &Camera) -> Option<YawSample> {
        let bbox = self.bbox?;
        Some(YawSample {
            features: keypoint_features(&self.keypoints, &bbox),
            yaw: relative_yaw(self.ground_truth.yaw(), bbox_heading(camera, &bbox)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn yaw_samples(&self, camera: &Camera) -> Vec<YawSample> {
        self.records.iter().filter_map(|r| r.yaw_sample(camera)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub test: PathBuf,
}

/// `n` i.i.d. records from `split`'s seed stream.
pub fn dataset_records(config: &ScenarioConfig, scene: &Scene, split: Split, n: usize) -> Result<Dataset, SimError> {
    config.validate()?;
    let stream = split.stream();
    let records = (0..n as u64)
        .map(|i| {
            let mut rng = frame_rng(config.seed, stream, i);
            let pose = sample_pose(&config.ranges, &mut rng)?;
            Ok(DatasetRecord::from_frame(simulate_frame(&pose, i, scene, &config.noise, &mut rng), stream))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        split,
        count: n,
        seed: config.seed,
        seed_stream: stream,
    };
    Ok(Dataset { header, records })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), SimError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", json_line(&dataset.header))?;
    for r in &dataset.records {
        writeln!(w, "{}", json_line(r))?;
    }
    w.flush()?;
    Ok(())
}

fn json_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("dataset rows serialize")
}

pub fn read_dataset(path: &Path) -> Result<Dataset, SimError> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    parse_lines(lines.iter().map(String::as_str))
}

/// Parses the JSON-Lines text form.
pub fn parse_dataset(text: &str) -> Result<Dataset, SimError> {
    parse_lines(text.lines())
}

fn parse_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Result<Dataset, SimError> {
    let mut lines = lines.enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(SimError::Parse { line: 1, message: "missing header".into() })?;
    let header: DatasetHeader =
        serde_json::from_str(first).map_err(|e| SimError::Parse { line: 1, message: e.to_string() })?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(SimError::Parse {
            line: 1,
            message: format!("unsupported dataset {} v{}", header.format, header.version),
        });
    }
    let records = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| SimError::Parse { line: i + 1, message: e.to_string() }))
        .collect::<Result<Vec<DatasetRecord>, _>>()?;
    if records.len() != header.count {
        return Err(SimError::Parse {
            line: records.len() + 1,
            message: format!("header promises {} records, found {}", header.count, records.len()),
        });
    }
    Ok(Dataset { header, records })
}

/// Writes `train.jsonl` and `test.jsonl` under `out_dir`.
pub fn gen_dataset(
    config: &ScenarioConfig,
    scene: &Scene,
    n_train: usize,
    n_test: usize,
    out_dir: &Path,
) -> Result<DatasetPaths, SimError> {
    if n_train == 0 || n_test == 0 {
        return Err(SimError::InvalidConfig("dataset sizes must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let paths = DatasetPaths { train: out_dir.join("train.jsonl"), test: out_dir.join("test.jsonl") };
    write_dataset(&paths.train, &dataset_records(config, scene, Split::Train, n_train)?)?;
    write_dataset(&paths.test, &dataset_records(config, scene, Split::Test, n_test)?)?;
    Ok(paths)
}

//! Replays the checked-in fuzz seeds, and every truncation of them, through
//! the same parsers the fuzz targets drive.

use std::path::{Path, PathBuf};

use helideck::calibration::{parse_camera_file, MarkingMap};
use helideck::geometry::Camera;
use helideck::model::Skeleton;
use helideck::sim::parse_dataset;
use helideck::wire::{ScenarioCommand, StreamMessage};
use helideck::yaw::YawCheckpoint;
use helideck_cli::config::{AppConfig, Format};
use helideck_cli::demo::parse_demo;

fn corpus(target: &str) -> Vec<(PathBuf, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds for {target}");
    files.into_iter().map(|p| (p.clone(), std::fs::read_to_string(&p).unwrap())).collect()
}

/// Seeds must parse; truncations must not panic.
fn replay(target: &str, parse: impl Fn(&str) -> bool) {
    for (path, text) in corpus(target) {
        assert!(parse(&text), "seed {} does not parse", path.display());
        let step = (text.len() / 200).max(1);
        for cut in (0..text.len()).step_by(step).filter(|&c| text.is_char_boundary(c)) {
            parse(&text[..cut]);
        }
    }
}

#[test]
fn skeleton_seeds() {
    replay("skeleton", |t| Skeleton::from_json(t).is_ok());
}

#[test]
fn camera_file_seeds() {
    replay("camera_file", |t| parse_camera_file(t).is_ok());
}

#[test]
fn marking_map_seeds() {
    replay("marking_map", |t| MarkingMap::from_json(t).is_ok());
}

#[test]
fn checkpoint_seeds() {
    replay("checkpoint", |t| YawCheckpoint::from_json(t).and_then(|c| c.model()).is_ok());
}

#[test]
fn dataset_seeds() {
    replay("dataset", |t| parse_dataset(t).map(|d| d.yaw_samples(&Camera::pinned())).is_ok());
}

#[test]
fn stream_message_seeds() {
    replay("stream_message", |t| StreamMessage::parse(t).is_ok());
}

#[test]
fn scenario_command_seeds() {
    replay("scenario_command", |t| ScenarioCommand::parse(t).is_ok());
}

#[test]
fn config_seeds() {
    replay("config", |t| AppConfig::parse(t, Format::Toml).is_ok() || AppConfig::parse(t, Format::Json).is_ok());
}

#[test]
fn demo_results_seeds() {
    replay("demo_results", |t| parse_demo(t).is_ok());
}

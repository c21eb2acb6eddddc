//! Run configuration: one TOML or JSON document naming the artifact files
//! plus scenario, tracker and network settings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use helideck::model::Skeleton;
use helideck::sim::{ScenarioConfig, Scene};
use helideck::tracker::{Tracker, TrackerConfig};
use helideck::yaw::{YawCheckpoint, YawModel, YawNetConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// `None` uses the bundled skeleton.
    pub skeleton: Option<PathBuf>,
    /// `None` uses the bundled yaw checkpoint.
    pub checkpoint: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub tracker: TrackerConfig,
    pub yaw: YawNetConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl AppConfig {
    pub fn parse(text: &str, format: Format) -> Result<Self> {
        let config: AppConfig = match format {
            Format::Json => serde_json::from_str(text).context("invalid JSON config")?,
            Format::Toml => toml::from_str(text).context("invalid TOML config")?,
        };
        Ok(config)
    }

    /// Reads `path`; `.json` files are JSON, anything else TOML. Relative
    /// artifact paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Toml,
        };
        let mut config = Self::parse(&text, format).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.skeleton,
            &mut config.checkpoint,
            &mut config.scenario.camera_file,
            &mut config.scenario.marking_file,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// Loaded artifacts ready to drive a tracker.
#[derive(Debug, Clone)]
pub struct AppContext {
    pub scene: Scene,
    pub model: Option<YawModel>,
    pub scenario: ScenarioConfig,
    pub tracker: TrackerConfig,
}

impl AppContext {
    pub fn load(config: &AppConfig) -> Result<Self> {
        config.scenario.validate().context("invalid scenario config")?;
        let mut scene = Scene::load(&config.scenario).context("cannot load scene")?;
        if let Some(path) = &config.skeleton {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("cannot read skeleton {}", path.display()))?;
            scene.skeleton =
                Skeleton::from_json(&text).with_context(|| format!("invalid skeleton {}", path.display()))?;
        }
        let checkpoint = match &config.checkpoint {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
                YawCheckpoint::from_json(&text).with_context(|| format!("invalid checkpoint {}", path.display()))?
            }
            None => YawCheckpoint::bundled(),
        };
        let model = checkpoint.model().context("checkpoint does not build a model")?;
        let mut tracker = config.tracker;
        tracker.frame_rate = config.scenario.frame_rate;
        if !(tracker.alpha > 0.0 && tracker.alpha <= 1.0 && tracker.beta >= 0.0 && tracker.beta.is_finite()) {
            bail!("tracker gains must satisfy 0 < alpha <= 1 and beta >= 0");
        }
        tracker.dla.validate().context("invalid DLA")?;
        Ok(Self { scene, model: Some(model), scenario: config.scenario.clone(), tracker })
    }

    pub fn new_tracker(&self) -> Tracker {
        Tracker::new(
            self.tracker,
            self.scene.skeleton.clone(),
            self.scene.camera,
            self.scene.markings.clone(),
            self.model.clone(),
        )
    }
}

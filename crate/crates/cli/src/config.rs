//! Pipeline configuration, read from a TOML file. Every key is optional;
//! precedence is built-in default < config file < `GERMAP_CACHE_ROOT` (for
//! `paths.tiles`) < command-line flag.

use std::path::{Path, PathBuf};

use germap_core::counting::{CountConfig, CountMode};
use germap_core::scene_labels::SyntheticDatasetSpec;
use germap_core::segnet::{LossConfig, ModelConfig, TrainConfig};
use germap_core::Period;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds the synthetic data, the split and training unless a section
    /// sets its own.
    pub seed: u64,
    pub paths: Paths,
    pub fetch: FetchConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub loss: LossConfig,
    pub count: CountSection,
    pub analysis: AnalysisPaths,
    pub review: ReviewSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            paths: Paths::default(),
            fetch: FetchConfig::default(),
            synth: SynthConfig::default(),
            model: ModelConfig::tiny(),
            train: TrainSection::default(),
            loss: LossConfig::default(),
            count: CountSection::default(),
            analysis: AnalysisPaths::default(),
            review: ReviewSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Labeled tiles: `synth` and `rasterize` write here, `train` reads.
    pub data: PathBuf,
    /// Imagery cache: `fetch` writes here, `rasterize` and `predict` read.
    pub tiles: PathBuf,
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: "work/data".into(),
            tiles: "work/tiles".into(),
            checkpoints: "work/checkpoints".into(),
            outputs: "work/out".into(),
        }
    }
}

impl Paths {
    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoints.join("model.gseg")
    }
    pub fn predictions(&self) -> PathBuf {
        self.outputs.join("predictions")
    }
    pub fn detections(&self) -> PathBuf {
        self.outputs.join("detections.geojson")
    }
    pub fn verdicts(&self) -> PathBuf {
        self.outputs.join("verdicts.jsonl")
    }
    pub fn counts(&self) -> PathBuf {
        self.outputs.join("counts.csv")
    }
    pub fn split(&self) -> PathBuf {
        self.outputs.join("split.json")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.outputs.join("report")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchConfig {
    pub url_template: Option<String>,
    pub period: String,
    pub rate_limit: f64,
    pub max_in_flight: usize,
    pub zoom: u8,
    /// `[south, west, north, east]` in degrees.
    pub bbox: Option<[f64; 4]>,
    /// Optional static `Name: value` header.
    pub header: Option<String>,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig {
            url_template: None,
            period: "2022".into(),
            rate_limit: 8.0,
            max_in_flight: 8,
            zoom: 18,
            bbox: None,
            header: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub tiles: usize,
    pub min_gers: usize,
    pub max_gers: usize,
    pub max_confusers: usize,
    pub noise_level: f64,
    pub radius_jitter_px: f64,
    pub period: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let d = SyntheticDatasetSpec::default();
        SynthConfig {
            tiles: 200,
            min_gers: d.min_gers,
            max_gers: d.max_gers,
            max_confusers: d.max_confusers,
            noise_level: d.base.noise_level,
            radius_jitter_px: d.base.radius_jitter_px,
            period: d.base.period.to_string(),
        }
    }
}

impl SynthConfig {
    pub fn dataset_spec(&self, seed: u64) -> SyntheticDatasetSpec {
        let mut spec = SyntheticDatasetSpec {
            tiles: self.tiles,
            seed,
            min_gers: self.min_gers,
            max_gers: self.max_gers,
            max_confusers: self.max_confusers,
            ..Default::default()
        };
        spec.base.noise_level = self.noise_level;
        spec.base.radius_jitter_px = self.radius_jitter_px;
        spec.base.period = Period::new(self.period.clone());
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub train_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            epochs: t.epochs,
            batch_size: t.batch_size,
            eval_every: t.eval_every,
            train_fraction: 0.8,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            rng_seed: seed,
            eval_every: self.eval_every,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountSection {
    pub unit_area_m2: f64,
    pub min_blob_px: usize,
    pub mode: CountMode,
    /// Replace `unit_area_m2` by the mean area of accepted detections.
    pub calibrate: bool,
}

impl Default for CountSection {
    fn default() -> Self {
        let c = CountConfig::default();
        CountSection {
            unit_area_m2: c.unit_area_m2,
            min_blob_px: c.min_blob_px,
            mode: c.mode,
            calibrate: false,
        }
    }
}

impl CountSection {
    pub fn count_config(&self) -> CountConfig {
        CountConfig {
            unit_area_m2: self.unit_area_m2,
            min_blob_px: self.min_blob_px,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisPaths {
    /// Counts per period: either `period,ger_count` or the `count` output.
    pub counts: Option<PathBuf>,
    pub households: Option<PathBuf>,
    pub districts: Option<PathBuf>,
    pub deprivation: Option<PathBuf>,
    pub facilities: Option<PathBuf>,
    /// ESRI ASCII grid.
    pub dem: Option<PathBuf>,
}

impl Default for AnalysisPaths {
    fn default() -> Self {
        AnalysisPaths {
            counts: None,
            households: Some("fixtures/households.csv".into()),
            districts: Some("fixtures/districts.csv".into()),
            deprivation: Some("fixtures/deprivation.csv".into()),
            facilities: None,
            dem: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSection {
    pub port: u16,
    pub static_dir: Option<PathBuf>,
}

impl Default for ReviewSection {
    fn default() -> Self {
        ReviewSection {
            port: 8080,
            static_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path`, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => CliError::MissingInput {
                        path: p.into(),
                        what: "config file",
                    },
                    _ => CliError::Config(format!("{}: {e}", p.display())),
                })?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if let Err(e) = self.loss.validate() {
            return bad(format!("loss: {e}"));
        }
        if let Err(e) = self.train.train_config(self.seed).validate() {
            return bad(format!("train: {e}"));
        }
        if !(self.train.train_fraction > 0.0 && self.train.train_fraction < 1.0) {
            return bad("train.train_fraction must lie strictly between 0 and 1".into());
        }
        if !(self.count.unit_area_m2 > 0.0) {
            return bad("count.unit_area_m2 must be positive".into());
        }
        if self.synth.min_gers > self.synth.max_gers {
            return bad("synth.min_gers must not exceed synth.max_gers".into());
        }
        if !(0.0..=1.0).contains(&self.synth.noise_level) {
            return bad("synth.noise_level must lie in [0, 1]".into());
        }
        Ok(())
    }
}

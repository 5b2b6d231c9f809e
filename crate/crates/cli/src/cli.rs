use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use germap_core::metrics::Aggregation;
use germap_core::Period;
use germap_ingest::CACHE_ROOT_ENV;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::stages::{self, PredictInput};

#[derive(Debug, Parser)]
#[command(name = "germap", version, about = "Ger detection, counting and settlement analytics")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file. Missing keys take their defaults.
    #[arg(long, global = true, env = "GERMAP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Labeled tile directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Imagery cache root (also read from GERMAP_CACHE_ROOT).
    #[arg(long, global = true)]
    pub tiles: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long, global = true)]
    pub outputs: Option<PathBuf>,
    /// Rerun a stage even when its manifest says the outputs are current.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download imagery tiles for a bounding box into the cache.
    Fetch {
        #[arg(long)]
        url: Option<String>,
        /// south,west,north,east in degrees.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        bbox: Option<Vec<f64>>,
        #[arg(long)]
        zoom: Option<u8>,
        #[arg(long)]
        period: Option<String>,
    },
    /// Burn footprint polygons into masks for every cached tile of a period.
    Rasterize {
        #[arg(long)]
        footprints: PathBuf,
        #[arg(long)]
        period: String,
    },
    /// Generate a labeled synthetic dataset.
    Synth {
        #[arg(long)]
        count: Option<usize>,
        /// Output directory (defaults to the data directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the segmentation model on the labeled tiles.
    Train,
    /// Segment tiles and extract detections.
    Predict {
        /// Predict every cached tile of this period instead of the dataset.
        #[arg(long)]
        cache_period: Option<String>,
        /// Predict all dataset tiles, not just the held-out split.
        #[arg(long, conflicts_with = "cache_period")]
        all: bool,
    },
    /// Score predicted masks against labels.
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Dataset root holding `labels/`.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AggregationArg::Pooled)]
        aggregation: AggregationArg,
    },
    /// Apply the verdict log and write per-period counts.
    Count(ReviewInputs),
    /// Serve the review API (and static frontend, if configured).
    ServeReview {
        #[command(flatten)]
        inputs: ReviewInputs,
        #[arg(long)]
        port: Option<u16>,
        /// Directory of built frontend assets.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Zoom-15 grid of verified counts and their change.
    Aggregate(ReviewInputs),
    /// Slum ratios, deprivation shares and district correlation.
    Analyze {
        /// `period,ger_count` CSV or the output of `count`.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Data products behind the figures and tables.
    Report {
        #[command(flatten)]
        inputs: ReviewInputs,
        #[arg(long)]
        counts: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ReviewInputs {
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Verdict log (JSON lines). A missing log means no verdicts yet.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    Pooled,
    PerTile,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Pooled => Aggregation::Pooled,
            AggregationArg::PerTile => Aggregation::PerTileMean,
        }
    }
}

impl GlobalArgs {
    /// Config file, then the cache root from the environment, then flags.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(self.config.as_deref())?;
        if let Some(root) = std::env::var_os(CACHE_ROOT_ENV).filter(|v| !v.is_empty()) {
            cfg.paths.tiles = root.into();
        }
        let p = &mut cfg.paths;
        for (slot, flag) in [
            (&mut p.data, &self.data),
            (&mut p.tiles, &self.tiles),
            (&mut p.checkpoints, &self.checkpoints),
            (&mut p.outputs, &self.outputs),
        ] {
            if let Some(v) = flag {
                *slot = v.clone();
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

impl ReviewInputs {
    fn paths(&self, cfg: &PipelineConfig) -> (PathBuf, PathBuf) {
        (
            self.detections.clone().unwrap_or_else(|| cfg.paths.detections()),
            self.log.clone().unwrap_or_else(|| cfg.paths.verdicts()),
        )
    }
}

/// Runs one parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = cli.global.resolve()?;
    let force = cli.global.force;
    match cli.command {
        Command::Fetch { url, bbox, zoom, period } => {
            let f = &mut cfg.fetch;
            if url.is_some() {
                f.url_template = url;
            }
            if let Some(b) = bbox {
                let b: [f64; 4] = b
                    .try_into()
                    .map_err(|_| CliError::Config("--bbox takes four values: south,west,north,east".into()))?;
                f.bbox = Some(b);
            }
            if let Some(z) = zoom {
                f.zoom = z;
            }
            if let Some(p) = period {
                f.period = p;
            }
            cfg.validate()?;
            stages::fetch(&cfg)?;
        }
        Command::Rasterize { footprints, period } => {
            cfg.validate()?;
            stages::rasterize(&cfg, &footprints, &Period::new(period), force)?;
        }
        Command::Synth { count, out } => {
            if let Some(n) = count {
                cfg.synth.tiles = n;
            }
            if let Some(o) = out {
                cfg.paths.data = o;
            }
            cfg.validate()?;
            stages::synth(&cfg, force)?;
        }
        Command::Train => {
            cfg.validate()?;
            stages::train(&cfg, force)?;
        }
        Command::Predict { cache_period, all } => {
            cfg.validate()?;
            let input = match cache_period {
                Some(p) => PredictInput::Cache {
                    dir: cfg.paths.tiles.clone(),
                    period: Period::new(p),
                },
                None => PredictInput::Dataset {
                    dir: cfg.paths.data.clone(),
                    eval_only: !all,
                },
            };
            stages::predict(&cfg, &input, force)?;
        }
        Command::Evaluate {
            predictions,
            labels,
            aggregation,
        } => {
            let predictions = predictions.unwrap_or_else(|| cfg.paths.predictions());
            let labels = labels.unwrap_or_else(|| cfg.paths.data.clone());
            stages::evaluate(&cfg, &predictions, &labels, aggregation.into())?;
        }
        Command::Count(inputs) => {
            cfg.validate()?;
            let (d, l) = inputs.paths(&cfg);
            stages::count(&cfg, &d, &l)?;
        }
        Command::ServeReview {
            inputs,
            port,
            static_dir,
        } => {
            if let Some(p) = port {
                cfg.review.port = p;
            }
            if static_dir.is_some() {
                cfg.review.static_dir = static_dir;
            }
            cfg.validate()?;
            let (d, l) = inputs.paths(&cfg);
            let tiles = cfg.paths.tiles.clone();
            stages::serve_review(&cfg, &d, &tiles, &l)?;
        }
        Command::Aggregate(inputs) => {
            cfg.validate()?;
            let (d, l) = inputs.paths(&cfg);
            stages::aggregate(&cfg, &d, &l)?;
        }
        Command::Analyze { counts } => {
            if counts.is_some() {
                cfg.analysis.counts = counts;
            }
            stages::analyze(&cfg)?;
        }
        Command::Report { inputs, counts } => {
            if counts.is_some() {
                cfg.analysis.counts = counts;
            }
            let (d, l) = inputs.paths(&cfg);
            stages::report(&cfg, &d, &l)?;
        }
    }
    Ok(())
}

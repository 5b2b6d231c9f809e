//! One function per subcommand. Each takes the fully resolved configuration,
//! checks its inputs before doing any work, and writes a manifest next to
//! its outputs.

mod analyze;
mod data;
mod model;
mod review;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use germap_core::scene_labels::tile_path;
use germap_core::{Period, TileCoord};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::manifest::Manifest;

pub use analyze::{aggregate, analyze, report, AnalysisSummary};
pub use data::{fetch, rasterize, synth, TileTruth, TRUTH_FILE};
pub use model::{evaluate, predict, train, PredictInput, SplitFile, TrainSummary};
pub use review::{count, serve_review};

/// Whether a stage did work or found its previous outputs current.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ran,
    UpToDate,
}

pub(crate) fn require(path: &Path, what: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput { path: path.into(), what })
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::output(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, text).map_err(|e| CliError::output(path, e))
}

/// Runs `work` unless the manifest in `dir` is current (and `force` is off),
/// then records the new manifest.
pub(crate) fn run_stage<F>(dir: &Path, manifest: Manifest, force: bool, work: F) -> Result<Status>
where
    F: FnOnce() -> Result<()>,
{
    if !force && manifest.is_current(dir) {
        println!("{}: outputs are current; skipping (use --force to rerun)", manifest.stage);
        return Ok(Status::UpToDate);
    }
    work()?;
    manifest.write(dir)?;
    Ok(Status::Ran)
}

/// Every `<root>/<period>/<z>/<x>/<y>.png` in an imagery cache, sorted.
pub(crate) fn scan_cache(root: &Path, period: &Period) -> Result<Vec<TileCoord>> {
    let base = root.join(period.as_str());
    require(&base, "tile cache for period")?;
    let mut out = Vec::new();
    let read = |p: &Path| fs::read_dir(p).map_err(|e| CliError::BadInput(format!("{}: {e}", p.display())));
    for z in read(&base)? {
        let z = z.map_err(|e| CliError::BadInput(e.to_string()))?.path();
        let Some(zv) = name_num::<u8>(&z) else { continue };
        for x in read(&z)? {
            let x = x.map_err(|e| CliError::BadInput(e.to_string()))?.path();
            let Some(xv) = name_num::<u32>(&x) else { continue };
            for y in read(&x)? {
                let y = y.map_err(|e| CliError::BadInput(e.to_string()))?.path();
                if y.extension().and_then(|e| e.to_str()) != Some("png") {
                    continue;
                }
                let Some(yv) = y.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) else {
                    continue;
                };
                if let Ok(t) = TileCoord::new(zv, xv, yv) {
                    debug_assert_eq!(tile_path(root, period, t), y);
                    out.push(t);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

fn name_num<T: std::str::FromStr>(p: &Path) -> Option<T> {
    p.file_name()?.to_str()?.parse().ok()
}

/// `period/z/x/y`, used to identify tiles in split files.
pub fn tile_key(period: &Period, t: TileCoord) -> String {
    format!("{period}/{t}")
}

pub(crate) fn relative(paths: &[&str]) -> Vec<PathBuf> {
    paths.iter().map(PathBuf::from).collect()
}

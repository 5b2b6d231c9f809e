use std::path::Path;
use std::time::Duration;

use germap_core::raster::load_tile_image;
use germap_core::scene_labels::{generate_dataset, rasterize as rasterize_tile, tile_path, write_labeled_tiles, Disc, LabeledTile};
use germap_core::tile_pyramid::latlon_to_tile;
use germap_core::{GeoPoint, Period, TileCoord};
use germap_ingest::{fetch_tiles, read_footprints, FetchReport, TileRange, TileSource};
use serde::{Deserialize, Serialize};

use super::{relative, require, run_stage, scan_cache, write_json, Status};
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

/// Generator ground truth, written by `synth` next to the tiles.
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileTruth {
    pub period: Period,
    pub tile: TileCoord,
    pub gers: Vec<Disc>,
    pub confusers: Vec<Disc>,
}

/// Writes `cfg.synth.tiles` synthetic tiles, their masks, `manifest.csv` and
/// `truth.json` into `cfg.paths.data`. Output depends only on the settings
/// and the seed.
pub fn synth(cfg: &PipelineConfig, force: bool) -> Result<Status> {
    let out = &cfg.paths.data;
    let spec = cfg.synth.dataset_spec(cfg.seed);
    let manifest = Manifest::new("synth", &spec, &[], relative(&["manifest.csv", TRUTH_FILE]))?;
    run_stage(out, manifest, force, || {
        let scenes = generate_dataset(&spec)?;
        let truth: Vec<TileTruth> = scenes
            .iter()
            .map(|(t, s)| TileTruth {
                period: t.period.clone(),
                tile: t.coord,
                gers: s.gers.clone(),
                confusers: s.confusers.clone(),
            })
            .collect();
        let tiles: Vec<LabeledTile> = scenes.into_iter().map(|(t, _)| t).collect();
        write_labeled_tiles(out, &tiles)?;
        write_json(&out.join(TRUTH_FILE), &truth)?;
        let gers: usize = truth.iter().map(|t| t.gers.len()).sum();
        println!("synth: {} tiles, {gers} gers -> {}", tiles.len(), out.display());
        Ok(())
    })
}

/// Rasterizes footprints onto every cached tile of `period`, writing labeled
/// tiles into `cfg.paths.data`.
pub fn rasterize(cfg: &PipelineConfig, footprints: &Path, period: &Period, force: bool) -> Result<Status> {
    require(footprints, "footprints GeoJSON")?;
    let cache = &cfg.paths.tiles;
    let tiles = scan_cache(cache, period)?;
    if tiles.is_empty() {
        return Err(CliError::BadInput(format!("no cached tiles for period {period} under {}", cache.display())));
    }
    let out = &cfg.paths.data;
    let cache_period = cache.join(period.as_str());
    let manifest = Manifest::new("rasterize", &period, &[footprints, &cache_period], relative(&["manifest.csv"]))?;
    run_stage(out, manifest, force, || {
        let loaded = read_footprints(footprints, period)?;
        for e in &loaded.errors {
            tracing::warn!(feature = e.index, reason = %e.reason, "skipping footprint");
        }
        let fps: Vec<_> = loaded.items.into_iter().filter(|f| &f.period == period).collect();
        let mut labeled = Vec::with_capacity(tiles.len());
        for t in &tiles {
            labeled.push(LabeledTile {
                coord: *t,
                image: load_tile_image(&tile_path(cache, period, *t))?,
                mask: rasterize_tile(&fps, *t)?,
                period: period.clone(),
            });
        }
        write_labeled_tiles(out, &labeled)?;
        println!(
            "rasterize: {} footprints ({} rejected) onto {} tiles -> {}",
            fps.len(),
            loaded.errors.len(),
            labeled.len(),
            out.display()
        );
        Ok(())
    })
}

/// Tile range covering a `[south, west, north, east]` box.
pub fn bbox_range(bbox: [f64; 4], z: u8) -> Result<TileRange> {
    let [s, w, n, e] = bbox;
    if !(s < n && w < e) {
        return Err(CliError::Config("fetch.bbox must be [south, west, north, east]".into()));
    }
    let pt = |lat, lon| GeoPoint::new(lat, lon).map_err(|e| CliError::Config(format!("fetch.bbox: {e}")));
    let nw = latlon_to_tile(pt(n, w)?, z)?;
    let se = latlon_to_tile(pt(s, e)?, z)?;
    Ok(TileRange {
        z,
        x_min: nw.x,
        x_max: se.x,
        y_min: nw.y,
        y_max: se.y,
    })
}

/// Downloads the configured box into the tile cache. Partial failures are
/// listed in `<outputs>/fetch_report.json` and make the command exit with a
/// dedicated code after all other tiles are stored.
pub fn fetch(cfg: &PipelineConfig) -> Result<FetchReport> {
    let f = &cfg.fetch;
    let url = f
        .url_template
        .clone()
        .ok_or_else(|| CliError::Config("fetch.url_template (or --url) is required".into()))?;
    let bbox = f
        .bbox
        .ok_or_else(|| CliError::Config("fetch.bbox (or --bbox) is required".into()))?;
    let range = bbox_range(bbox, f.zoom)?;
    let mut source = TileSource::new(url, Period::new(f.period.clone()), f.rate_limit, &cfg.paths.tiles)?;
    source.max_in_flight = f.max_in_flight;
    if let Some(h) = &f.header {
        let (k, v) = h
            .split_once(':')
            .ok_or_else(|| CliError::Config("fetch.header must look like `Name: value`".into()))?;
        source.header = Some((k.trim().to_string(), v.trim().to_string()));
    }
    source.validate()?;
    let tiles = range.tiles();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let report = rt.block_on(async {
        tokio::time::timeout(Duration::from_secs(24 * 3600), fetch_tiles(&source, &tiles)).await
    });
    let report = report.map_err(|_| CliError::Internal("fetch timed out".into()))??;
    let report_path = cfg.paths.outputs.join("fetch_report.json");
    write_json(&report_path, &report)?;
    let manifest = Manifest::new("fetch", &cfg.fetch, &[], relative(&["fetch_report.json"]))?;
    manifest.write(&cfg.paths.outputs)?;
    println!(
        "fetch: {} requested, {} fetched, {} cached, {} failed",
        report.requested, report.fetched, report.cached_hits, report.failed
    );
    if report.failed > 0 {
        return Err(CliError::FetchIncomplete {
            failed: report.failed,
            requested: report.requested,
            report: report_path,
        });
    }
    Ok(report)
}

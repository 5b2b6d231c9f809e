use std::net::SocketAddr;
use std::path::Path;

use germap_core::counting::{calibrate_unit_area, count_all_periods, load_detections, read_verdict_log, write_counts_csv, CountResult};
use germap_review::ReviewConfig;

use super::{create_file, require};
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

/// Applies the verdict log to the detections and writes `counts.csv`. With
/// `count.calibrate`, the unit area is the mean area of accepted detections.
pub fn count(cfg: &PipelineConfig, detections: &Path, log: &Path) -> Result<Vec<CountResult>> {
    require(detections, "detections GeoJSON")?;
    let dets = load_detections(detections)?;
    let records = read_verdict_log(log)?;
    let mut cc = cfg.count.count_config();
    if cfg.count.calibrate {
        cc.unit_area_m2 = calibrate_unit_area(&dets, &records)
            .map_err(|e| CliError::BadInput(format!("cannot calibrate unit area: {e}")))?;
    }
    let results = count_all_periods(&dets, &records, &cc)?;
    let out = &cfg.paths.outputs;
    write_counts_csv(&results, create_file(&cfg.paths.counts())?)?;
    let mut inputs: Vec<&Path> = vec![detections];
    if log.exists() {
        inputs.push(log);
    }
    Manifest::new("count", &cfg.count, &inputs, vec!["counts.csv".into()])?.write(out)?;
    for r in &results {
        println!(
            "count: period {}: raw {}, verified {} (unit {:.2} m2, {} verdicts)",
            r.period,
            r.raw_count,
            r.verified_count,
            r.avg_ger_area_m2,
            records.len()
        );
    }
    Ok(results)
}

pub fn serve_review(cfg: &PipelineConfig, detections: &Path, tiles: &Path, log: &Path) -> Result<()> {
    require(detections, "detections GeoJSON")?;
    require(tiles, "tile cache")?;
    if let Some(s) = &cfg.review.static_dir {
        require(s, "static asset directory")?;
    }
    let config = ReviewConfig {
        detections: detections.into(),
        tiles: tiles.into(),
        log: log.into(),
        static_dir: cfg.review.static_dir.clone(),
        count: cfg.count.count_config(),
    };
    let addr = SocketAddr::from(([127, 0, 0, 1], cfg.review.port));
    println!("serve-review: http://{addr}/");
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    rt.block_on(germap_review::serve(config, addr)).map_err(|e| match e {
        germap_review::ReviewError::Core(c) => c.into(),
        other => CliError::Service(other.to_string()),
    })
}

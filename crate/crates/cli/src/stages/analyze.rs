use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use germap_core::analysis::{
    aggregate_to_grid, deprivation_share, district_correlation, grid_to_geojson, households_by_year, households_per_ger,
    period_deltas, ratio_series, sensitivity_bound, slum_ratio, write_grid_csv, write_period_report, write_ratio_report,
    GridCellStats, GridInput, PeriodCount, PeriodDelta, RatioRow, SensitivityBound, REPORTED_HOUSEHOLDS_PER_GER,
};
use germap_core::counting::{apply_verdicts, load_detections, read_verdict_log, resolve_verdicts, Detection, Verdict, VerdictRecord};
use germap_core::geo_access::{indicator_rows, write_indicators_csv, CategoryTable, DemGrid};
use germap_core::{Period, TileCoord};
use germap_ingest::{read_deprivation_csv, read_district_csv, read_facilities, read_household_csv};
use serde::Serialize;

use super::{create_file, require, write_json};
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub series: Vec<PeriodCount>,
    pub deltas: Vec<PeriodDelta>,
    pub census_year: i32,
    pub households_in_gers: u64,
    pub households_per_ger: f64,
    /// Published figure, kept for comparison only.
    pub reported_households_per_ger: f64,
    pub census_slum_ratio: f64,
    pub ratios: Vec<RatioRow>,
    pub sensitivity: Option<SensitivityBound>,
    pub deprivation_shares: BTreeMap<String, f64>,
    pub district_correlation: Option<f64>,
}

fn opt_path<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("analysis.{key} is required")))
}

/// Reads a per-period count series from either `period,ger_count` or the
/// `count` output (`verified_count` is used).
pub fn read_series(path: &Path) -> Result<Vec<PeriodCount>> {
    require(path, "counts CSV")?;
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let period_col = col("period").ok_or_else(|| CliError::BadInput(format!("{}: missing column `period`", path.display())))?;
    let count_col = col("ger_count").or_else(|| col("verified_count")).ok_or_else(|| {
        CliError::BadInput(format!("{}: need a `ger_count` or `verified_count` column", path.display()))
    })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))?;
        let count = rec[count_col]
            .trim()
            .parse()
            .map_err(|_| CliError::BadInput(format!("{}: row {}: bad count {:?}", path.display(), i + 2, &rec[count_col])))?;
        out.push(PeriodCount {
            period: Period::new(rec[period_col].trim()),
            ger_count: count,
        });
    }
    out.sort_by(|a, b| a.period.cmp(&b.period));
    Ok(out)
}

fn series_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.analysis.counts.clone().unwrap_or_else(|| cfg.paths.counts())
}

fn summarize(cfg: &PipelineConfig) -> Result<AnalysisSummary> {
    let a = &cfg.analysis;
    let series = read_series(&series_path(cfg))?;
    let deltas = period_deltas(&series)?;
    let households = read_household_csv(opt_path(&a.households, "households")?)?;
    let by_year = households_by_year(&households);
    let (census_year, total, in_gers) = by_year
        .iter()
        .rev()
        .find_map(|(y, (t, g))| g.map(|g| (*y, *t, g)))
        .ok_or_else(|| CliError::BadInput("households CSV has no year with households_in_gers".into()))?;
    let census_count = series
        .iter()
        .find(|p| p.period.year() == Some(census_year))
        .ok_or_else(|| CliError::BadInput(format!("no ger count for census year {census_year}")))?;
    let hpg = households_per_ger(in_gers, census_count.ger_count)?;
    let totals: BTreeMap<i32, u64> = by_year.iter().map(|(y, (t, _))| (*y, *t)).collect();
    let ratios = ratio_series(&series, &totals, hpg)?;
    let sensitivity = ratios.iter().rev().find_map(|r| r.slum_ratio).map(sensitivity_bound);
    let mut deprivation_shares = BTreeMap::new();
    if let Some(p) = &a.deprivation {
        let table = read_deprivation_csv(p)?;
        for ind in table.indicators() {
            deprivation_shares.insert(ind.to_string(), deprivation_share(&table, ind)?);
        }
    }
    let district_correlation = match &a.districts {
        Some(p) => Some(district_correlation(&read_district_csv(p)?)?),
        None => None,
    };
    Ok(AnalysisSummary {
        series,
        deltas,
        census_year,
        households_in_gers: in_gers,
        households_per_ger: hpg,
        reported_households_per_ger: REPORTED_HOUSEHOLDS_PER_GER,
        census_slum_ratio: slum_ratio(in_gers as f64, total as f64)?,
        ratios,
        sensitivity,
        deprivation_shares,
        district_correlation,
    })
}

fn analysis_inputs(cfg: &PipelineConfig) -> Vec<PathBuf> {
    let a = &cfg.analysis;
    let mut v = vec![series_path(cfg)];
    v.extend([&a.households, &a.districts, &a.deprivation].into_iter().flatten().cloned());
    v
}

/// Period series, slum ratios, deprivation shares and the district
/// correlation, written to `<outputs>/analysis/`.
pub fn analyze(cfg: &PipelineConfig) -> Result<AnalysisSummary> {
    let inputs = analysis_inputs(cfg);
    for p in &inputs {
        require(p, "analysis input")?;
    }
    let s = summarize(cfg)?;
    let dir = cfg.paths.outputs.join("analysis");
    write_period_report(&s.series, create_file(&dir.join("period_report.csv"))?)?;
    write_ratio_report(&s.ratios, create_file(&dir.join("ratio_report.csv"))?)?;
    let mut w = csv::Writer::from_writer(create_file(&dir.join("deprivation.csv"))?);
    w.write_record(["indicator", "slum_share"]).map_err(csv_err)?;
    for (k, v) in &s.deprivation_shares {
        w.write_record([k.as_str(), &v.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::output(dir.join("deprivation.csv"), e))?;
    write_json(&dir.join("summary.json"), &s)?;
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    Manifest::new(
        "analyze",
        &cfg.analysis,
        &refs,
        ["period_report.csv", "ratio_report.csv", "deprivation.csv", "summary.json"].map(PathBuf::from).to_vec(),
    )?
    .write(&dir)?;
    println!(
        "analyze: {} periods, households per ger {:.4} (published {}), census ratio {:.4}",
        s.series.len(),
        s.households_per_ger,
        REPORTED_HOUSEHOLDS_PER_GER,
        s.census_slum_ratio
    );
    for r in &s.ratios {
        if let Some(x) = r.slum_ratio {
            println!("analyze: {} slum ratio {:.4}", r.year, x);
        }
    }
    Ok(s)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Internal(e.to_string())
}

/// Verified count per (tile, period), each computed by the counting module
/// on that tile's detections.
fn per_tile_counts(dets: &[Detection], log: &[VerdictRecord], cfg: &PipelineConfig) -> Result<Vec<GridInput>> {
    let mut groups: BTreeMap<(Period, TileCoord), Vec<Detection>> = BTreeMap::new();
    for d in dets {
        groups.entry((d.period.clone(), d.tile)).or_default().push(d.clone());
    }
    let cc = cfg.count.count_config();
    groups
        .into_iter()
        .map(|((period, tile), group)| {
            let ids: HashSet<&str> = group.iter().map(|d| d.id.as_str()).collect();
            let sub: Vec<VerdictRecord> = log.iter().filter(|r| ids.contains(r.detection_id.as_str())).cloned().collect();
            let r = apply_verdicts(&period, &group, &sub, &cc)?;
            Ok(GridInput {
                tile,
                period,
                count: r.verified_count,
            })
        })
        .collect()
}

fn grid(cfg: &PipelineConfig, detections: &Path, log: &Path) -> Result<Vec<GridCellStats>> {
    require(detections, "detections GeoJSON")?;
    let dets = load_detections(detections)?;
    let records = read_verdict_log(log)?;
    Ok(aggregate_to_grid(&per_tile_counts(&dets, &records, cfg)?)?)
}

/// Zoom-15 grid of verified counts per period with first-to-last deltas:
/// `<outputs>/grid.csv` and `<outputs>/grid.geojson`.
pub fn aggregate(cfg: &PipelineConfig, detections: &Path, log: &Path) -> Result<Vec<GridCellStats>> {
    let stats = grid(cfg, detections, log)?;
    let out = &cfg.paths.outputs;
    write_grid_csv(&stats, create_file(&out.join("grid.csv"))?)?;
    write_json(&out.join("grid.geojson"), &grid_to_geojson(&stats))?;
    let mut inputs: Vec<&Path> = vec![detections];
    if log.exists() {
        inputs.push(log);
    }
    Manifest::new("aggregate", &cfg.count, &inputs, ["grid.csv", "grid.geojson"].map(PathBuf::from).to_vec())?
        .write(out)?;
    println!("aggregate: {} grid cells", stats.len());
    Ok(stats)
}

/// Data products for the figures and tables: `series.csv`, `ratios.csv`,
/// `indicators.csv` (needs `analysis.facilities` and detections) and
/// `grid_delta.geojson` (needs detections), under `<outputs>/report/`.
pub fn report(cfg: &PipelineConfig, detections: &Path, log: &Path) -> Result<Vec<PathBuf>> {
    for p in analysis_inputs(cfg) {
        require(&p, "analysis input")?;
    }
    let s = summarize(cfg)?;
    let dir = cfg.paths.report_dir();
    let mut written = vec![dir.join("series.csv"), dir.join("ratios.csv")];
    write_period_report(&s.series, create_file(&written[0])?)?;
    write_ratio_report(&s.ratios, create_file(&written[1])?)?;
    if detections.exists() {
        let stats = grid(cfg, detections, log)?;
        let p = dir.join("grid_delta.geojson");
        write_json(&p, &grid_to_geojson(&stats))?;
        written.push(p);
        if let Some(fac_path) = &cfg.analysis.facilities {
            let p = dir.join("indicators.csv");
            write_indicators(cfg, fac_path, detections, log, &p)?;
            written.push(p);
        } else {
            tracing::warn!("analysis.facilities not set; skipping indicators.csv");
        }
    } else {
        tracing::warn!(path = %detections.display(), "no detections; skipping grid and indicator products");
    }
    for p in &written {
        println!("report: wrote {}", p.display());
    }
    Ok(written)
}

fn write_indicators(cfg: &PipelineConfig, facilities: &Path, detections: &Path, log: &Path, out: &Path) -> Result<()> {
    require(facilities, "facilities GeoJSON")?;
    let table = CategoryTable::default();
    let loaded = read_facilities(facilities, &table)?;
    for e in &loaded.errors {
        tracing::warn!(feature = e.index, reason = %e.reason, "skipping facility");
    }
    let dem = match &cfg.analysis.dem {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|_| CliError::MissingInput {
                path: p.clone(),
                what: "DEM grid",
            })?;
            Some(DemGrid::read_ascii(std::io::BufReader::new(f))?)
        }
        None => None,
    };
    let dets = load_detections(detections)?;
    let state = resolve_verdicts(&dets, &read_verdict_log(log)?)?;
    let mut by_period: BTreeMap<Period, Vec<_>> = BTreeMap::new();
    for d in &dets {
        if state[&d.id] != Verdict::Rejected {
            by_period.entry(d.period.clone()).or_default().push(d.centroid);
        }
    }
    let mut rows = Vec::new();
    for (period, gers) in &by_period {
        rows.extend(indicator_rows(period, gers, &loaded.items, dem.as_ref(), &table)?);
    }
    write_indicators_csv(&rows, create_file(out)?)?;
    Ok(())
}

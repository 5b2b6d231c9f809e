//! Downstream statistics: grid change maps, period series, household
//! calibration and slum ratios, deprivation shares and correlation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::period::Period;
use crate::tile_pyramid::{grid_cell_of, tile_to_bbox, TileCoord};

/// Tolerance on per-indicator share sums (census figures are rounded).
pub const SHARE_SUM_TOLERANCE: f64 = 0.005;

/// Ger-dwelling ratio of the urban sub-districts outside the study area,
/// reported as an upper sensitivity bound.
pub const OTHER_URBAN_GER_RATIO: f64 = 0.330;

// ---------------------------------------------------------------------------
// Grid change maps

/// A counted object located on a zoom-18 tile.
#[derive(Debug, Clone, PartialEq)]
pub struct GridInput {
    pub tile: TileCoord,
    pub period: Period,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCellStats {
    /// Zoom-15 cell.
    pub cell: TileCoord,
    pub counts_by_period: BTreeMap<Period, u64>,
    /// Last period minus first period.
    pub delta: i64,
}

/// Per-cell counts for every period seen in `items`. Cells without any
/// objects in any period are omitted; within a listed cell every period has
/// an entry.
pub fn aggregate_to_grid(items: &[GridInput]) -> Result<Vec<GridCellStats>> {
    let periods: BTreeSet<&Period> = items.iter().map(|i| &i.period).collect();
    let mut cells: BTreeMap<TileCoord, BTreeMap<Period, u64>> = BTreeMap::new();
    for it in items {
        let cell = grid_cell_of(it.tile)?.coord;
        let row = cells
            .entry(cell)
            .or_insert_with(|| periods.iter().map(|p| ((*p).clone(), 0)).collect());
        *row.get_mut(&it.period).expect("period seeded") += it.count;
    }
    let (first, last) = (periods.first(), periods.last());
    Ok(cells
        .into_iter()
        .map(|(cell, counts)| {
            let delta = match (first, last) {
                (Some(f), Some(l)) => counts[*l] as i64 - counts[*f] as i64,
                _ => 0,
            };
            GridCellStats {
                cell,
                counts_by_period: counts,
                delta,
            }
        })
        .collect())
}

/// Cell polygons with counts and delta as GeoJSON.
pub fn grid_to_geojson(stats: &[GridCellStats]) -> Value {
    let features: Vec<Value> = stats
        .iter()
        .map(|s| {
            let b = tile_to_bbox(s.cell);
            let ring = [[b.west, b.south], [b.east, b.south], [b.east, b.north], [b.west, b.north], [b.west, b.south]];
            json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "cell": s.cell.to_string(),
                    "area_km2": b.area_km2(),
                    "counts": s.counts_by_period,
                    "delta": s.delta,
                },
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

/// `cell,<period>...,delta`
pub fn write_grid_csv<W: Write>(stats: &[GridCellStats], out: W) -> Result<()> {
    let periods: BTreeSet<&Period> = stats.iter().flat_map(|s| s.counts_by_period.keys()).collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["cell".to_string()];
    header.extend(periods.iter().map(|p| p.to_string()));
    header.push("delta".into());
    w.write_record(&header)?;
    for s in stats {
        let mut row = vec![s.cell.to_string()];
        row.extend(periods.iter().map(|p| s.counts_by_period.get(*p).copied().unwrap_or(0).to_string()));
        row.push(s.delta.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<grid csv>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Period series

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodCount {
    pub period: Period,
    pub ger_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodDelta {
    pub from: Period,
    pub to: Period,
    pub delta: i64,
}

/// Consecutive differences of a chronologically ordered series.
pub fn period_deltas(series: &[PeriodCount]) -> Result<Vec<PeriodDelta>> {
    if series.windows(2).any(|w| w[0].period >= w[1].period) {
        return Err(Error::invalid("series", "periods must be strictly increasing"));
    }
    Ok(series
        .windows(2)
        .map(|w| PeriodDelta {
            from: w[0].period.clone(),
            to: w[1].period.clone(),
            delta: w[1].ger_count as i64 - w[0].ger_count as i64,
        })
        .collect())
}

/// `period,ger_count,delta_from_previous`
pub fn write_period_report<W: Write>(series: &[PeriodCount], out: W) -> Result<()> {
    let deltas = period_deltas(series)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["period", "ger_count", "delta_from_previous"])?;
    for (i, p) in series.iter().enumerate() {
        let d = if i == 0 { String::new() } else { deltas[i - 1].delta.to_string() };
        w.write_record([p.period.to_string(), p.ger_count.to_string(), d])?;
    }
    w.flush().map_err(|e| Error::io("<period report>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Households

/// One row of the households CSV
/// (`year,sub_district,households_total,households_in_gers`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdRecord {
    pub year: i32,
    pub sub_district: String,
    pub households_total: u64,
    #[serde(default)]
    pub households_in_gers: Option<u64>,
}

pub fn read_households_csv<R: Read>(input: R) -> Result<Vec<HouseholdRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Record {
                line: i + 2,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Households summed over sub-districts, by calendar year.
pub fn households_by_year(records: &[HouseholdRecord]) -> BTreeMap<i32, (u64, Option<u64>)> {
    let mut out: BTreeMap<i32, (u64, Option<u64>)> = BTreeMap::new();
    for r in records {
        let e = out.entry(r.year).or_insert((0, Some(0)));
        e.0 += r.households_total;
        e.1 = match (e.1, r.households_in_gers) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
    }
    out
}

/// Household statistics are compiled in December, so imagery from year `Y`
/// is matched with statistics of year `Y − 1`.
pub const HOUSEHOLD_LAG_YEARS: i32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignedHouseholds {
    pub image_year: i32,
    pub household_year: i32,
    /// `None` marks a gap: no statistics for `household_year`.
    pub households_total: Option<u64>,
}

pub fn align_households(by_year: &BTreeMap<i32, u64>, image_years: &[i32]) -> Vec<AlignedHouseholds> {
    if by_year.is_empty() {
        return Vec::new();
    }
    image_years
        .iter()
        .map(|&y| AlignedHouseholds {
            image_year: y,
            household_year: y - HOUSEHOLD_LAG_YEARS,
            households_total: by_year.get(&(y - HOUSEHOLD_LAG_YEARS)).copied(),
        })
        .collect()
}

/// Inverse of [`align_households`]: statistics keyed by their own year.
pub fn unalign_households(aligned: &[AlignedHouseholds]) -> BTreeMap<i32, u64> {
    aligned
        .iter()
        .filter_map(|a| a.households_total.map(|h| (a.image_year - HOUSEHOLD_LAG_YEARS, h)))
        .collect()
}

/// Published households-per-ger figure. It does not follow from the published
/// inputs: 91,249 households in gers over 86,925 detected gers is 1.0497.
/// Kept for reference only; [`households_per_ger`] is always computed.
pub const REPORTED_HOUSEHOLDS_PER_GER: f64 = 1.026;

pub fn households_per_ger(households_in_gers: u64, detected_gers: u64) -> Result<f64> {
    if detected_gers == 0 {
        return Err(Error::invalid("detected_gers", "must be positive"));
    }
    Ok(households_in_gers as f64 / detected_gers as f64)
}

pub fn slum_ratio(ger_households: f64, total_households: f64) -> Result<f64> {
    if !(total_households > 0.0) {
        return Err(Error::invalid("total_households", "must be positive"));
    }
    if !(ger_households >= 0.0) {
        return Err(Error::invalid("ger_households", "must be non-negative"));
    }
    Ok(ger_households / total_households)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub year: i32,
    pub ger_count: u64,
    pub ger_households_est: f64,
    pub total_households: Option<u64>,
    pub slum_ratio: Option<f64>,
}

/// Estimated ger households (`households_per_ger × count`) over the aligned
/// household total, per image year.
pub fn ratio_series(series: &[PeriodCount], households: &BTreeMap<i32, u64>, hpg: f64) -> Result<Vec<RatioRow>> {
    series
        .iter()
        .map(|p| {
            let year = p
                .period
                .year()
                .ok_or_else(|| Error::invalid("period", format!("no year in {}", p.period)))?;
            let est = hpg * p.ger_count as f64;
            let total = households.get(&(year - HOUSEHOLD_LAG_YEARS)).copied();
            let ratio = total.map(|t| slum_ratio(est, t as f64)).transpose()?;
            Ok(RatioRow {
                year,
                ger_count: p.ger_count,
                ger_households_est: est,
                total_households: total,
                slum_ratio: ratio,
            })
        })
        .collect()
}

/// `year,ger_count,ger_households_est,total_households,slum_ratio`
pub fn write_ratio_report<W: Write>(rows: &[RatioRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<ratio report>", e))?;
    Ok(())
}

/// Range for the national slum ratio: the study-area estimate, and the
/// higher ratio observed in the remaining urban sub-districts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityBound {
    pub study_area: f64,
    pub other_urban: f64,
}

pub fn sensitivity_bound(study_area_ratio: f64) -> SensitivityBound {
    SensitivityBound {
        study_area: study_area_ratio,
        other_urban: OTHER_URBAN_GER_RATIO,
    }
}

// ---------------------------------------------------------------------------
// Deprivation table

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeprivationRow {
    pub indicator: String,
    pub category: String,
    /// Fraction of ger households.
    pub share: f64,
    /// `true` when the category counts as a slum condition.
    pub slum: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeprivationTable {
    rows: Vec<DeprivationRow>,
}

#[derive(Deserialize)]
struct RawDeprivationRow {
    indicator: String,
    category: String,
    share: f64,
    slum_condition: String,
}

impl DeprivationTable {
    /// Checks that shares lie in `[0, 1]` and sum to 1 within tolerance per
    /// indicator.
    pub fn new(rows: Vec<DeprivationRow>) -> Result<Self> {
        let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
        for r in &rows {
            if !(0.0..=1.0).contains(&r.share) {
                return Err(Error::invalid("share", format!("{} / {}: {}", r.indicator, r.category, r.share)));
            }
            *sums.entry(&r.indicator).or_default() += r.share;
        }
        for (ind, s) in sums {
            if (s - 1.0).abs() > SHARE_SUM_TOLERANCE {
                return Err(Error::invalid("share", format!("shares of {ind} sum to {s:.4}")));
            }
        }
        Ok(DeprivationTable { rows })
    }

    /// CSV `indicator,category,share,slum_condition` with `O`/`X` flags.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, r) in csv::Reader::from_reader(input).deserialize::<RawDeprivationRow>().enumerate() {
            let line = i + 2;
            let r = r.map_err(|e| Error::Record { line, reason: e.to_string() })?;
            let slum = match r.slum_condition.trim() {
                "O" | "o" => true,
                "X" | "x" => false,
                other => {
                    return Err(Error::Record {
                        line,
                        reason: format!("slum_condition must be O or X, got {other:?}"),
                    })
                }
            };
            rows.push(DeprivationRow {
                indicator: r.indicator,
                category: r.category,
                share: r.share,
                slum,
            });
        }
        Self::new(rows)
    }

    pub fn rows(&self) -> &[DeprivationRow] {
        &self.rows
    }

    pub fn indicators(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.indicator.as_str()).collect()
    }
}

/// Share of households whose category for `indicator` is a slum condition.
pub fn deprivation_share(table: &DeprivationTable, indicator: &str) -> Result<f64> {
    let rows: Vec<&DeprivationRow> = table.rows.iter().filter(|r| r.indicator == indicator).collect();
    if rows.is_empty() {
        return Err(Error::invalid("indicator", format!("{indicator:?} not in table")));
    }
    // fold from +0.0: an empty f64 sum is -0.0
    Ok(rows.iter().filter(|r| r.slum).fold(0.0, |acc, r| acc + r.share))
}

// ---------------------------------------------------------------------------
// Correlation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictPair {
    pub district: String,
    pub ger_ratio: f64,
    pub poverty_headcount: f64,
}

pub fn read_districts_csv<R: Read>(input: R) -> Result<Vec<DistrictPair>> {
    let rows: Vec<DistrictPair> = csv::Reader::from_reader(input)
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Record {
                line: i + 2,
                reason: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    for (i, r) in rows.iter().enumerate() {
        if !(0.0..=1.0).contains(&r.ger_ratio) || !(0.0..=1.0).contains(&r.poverty_headcount) {
            return Err(Error::Record {
                line: i + 2,
                reason: "ratios must lie in [0, 1]".into(),
            });
        }
    }
    Ok(rows)
}

/// Sample Pearson correlation (two-pass).
pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::invalid("pairs", format!("need at least 3, got {}", pairs.len())));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain("correlation undefined for zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn district_correlation(pairs: &[DistrictPair]) -> Result<f64> {
    let xy: Vec<(f64, f64)> = pairs.iter().map(|p| (p.ger_ratio, p.poverty_headcount)).collect();
    pearson(&xy)
}

//! Marginalization indicators for a set of ger locations: straight-line
//! distance to the nearest facility of each category, and elevation and
//! slope from a DEM.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::period::Period;
use crate::tile_pyramid::GeoPoint;

/// Mean Earth radius for great-circle distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacilityCategory {
    CityCenter,
    MainRoad,
    BusStation,
    Education,
    Medical,
    PublicAmenity,
    Marketplace,
    Industrial,
}

impl FacilityCategory {
    pub const ALL: [FacilityCategory; 8] = [
        FacilityCategory::CityCenter,
        FacilityCategory::MainRoad,
        FacilityCategory::BusStation,
        FacilityCategory::Education,
        FacilityCategory::Medical,
        FacilityCategory::PublicAmenity,
        FacilityCategory::Marketplace,
        FacilityCategory::Industrial,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FacilityCategory::CityCenter => "city_center",
            FacilityCategory::MainRoad => "main_road",
            FacilityCategory::BusStation => "bus_station",
            FacilityCategory::Education => "education",
            FacilityCategory::Medical => "medical",
            FacilityCategory::PublicAmenity => "public_amenity",
            FacilityCategory::Marketplace => "marketplace",
            FacilityCategory::Industrial => "industrial",
        }
    }
}

impl fmt::Display for FacilityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FacilityCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid("category", format!("unknown facility category {s:?}")))
    }
}

/// Maps free-form source tags (e.g. OSM classes) to categories. Tags are
/// compared case-insensitively with `_` and spaces treated alike.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTable {
    map: BTreeMap<String, FacilityCategory>,
}

fn normalize_tag(tag: &str) -> String {
    tag.trim().to_lowercase().replace('_', " ")
}

impl Default for CategoryTable {
    fn default() -> Self {
        use FacilityCategory::*;
        let pairs: &[(&str, FacilityCategory)] = &[
            ("Sükhbaatar Square", CityCenter),
            ("Sukhbaatar Square", CityCenter),
            ("primary", MainRoad),
            ("secondary", MainRoad),
            ("tertiary", MainRoad),
            ("trunk", MainRoad),
            ("bus station", BusStation),
            ("bus stop", BusStation),
            ("college", Education),
            ("school", Education),
            ("university", Education),
            ("dentist", Medical),
            ("doctors", Medical),
            ("hospital", Medical),
            ("pharmacy", Medical),
            ("community center", PublicAmenity),
            ("community centre", PublicAmenity),
            ("fire station", PublicAmenity),
            ("police", PublicAmenity),
            ("public building", PublicAmenity),
            ("post office", PublicAmenity),
            ("town hall", PublicAmenity),
            ("department store", Marketplace),
            ("convenience", Marketplace),
            ("mall", Marketplace),
            ("market place", Marketplace),
            ("marketplace", Marketplace),
            ("supermarket", Marketplace),
            ("industrial", Industrial),
        ];
        Self::from_pairs(pairs.iter().map(|(t, c)| (t.to_string(), *c)))
    }
}

impl CategoryTable {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, FacilityCategory)>) -> Self {
        CategoryTable {
            map: pairs.into_iter().map(|(t, c)| (normalize_tag(&t), c)).collect(),
        }
    }

    pub fn classify(&self, source_class: &str) -> Option<FacilityCategory> {
        self.map.get(&normalize_tag(source_class)).copied()
    }

    /// Source tags mapped to `category`, for the `class` output column.
    pub fn classes_of(&self, category: FacilityCategory) -> Vec<&str> {
        self.map
            .iter()
            .filter(|(_, c)| **c == category)
            .map(|(t, _)| t.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityPoint {
    pub location: GeoPoint,
    pub category: FacilityCategory,
    pub source_class: String,
}

/// Facilities sorted by latitude. A query walks outward from its own
/// latitude and stops once the latitude gap alone exceeds the best distance
/// found, which is exact because `haversine ≥ R·|Δφ|`.
#[derive(Debug, Clone)]
pub struct FacilityIndex {
    points: Vec<GeoPoint>,
}

impl FacilityIndex {
    pub fn new(points: impl IntoIterator<Item = GeoPoint>) -> Self {
        let mut points: Vec<GeoPoint> = points.into_iter().collect();
        points.sort_by(|a, b| a.lat.total_cmp(&b.lat));
        FacilityIndex { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nearest_distance(&self, q: GeoPoint) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let start = self.points.partition_point(|p| p.lat < q.lat);
        let mut best = f64::INFINITY;
        // shrink the bound slightly so rounding can never prune the true nearest
        let gap = |p: &GeoPoint| EARTH_RADIUS_M * (p.lat - q.lat).abs().to_radians() * (1.0 - 1e-12);
        let (mut lo, mut hi) = (start, start);
        loop {
            let down = lo.checked_sub(1).map(|i| &self.points[i]).filter(|p| gap(p) <= best);
            let up = self.points.get(hi).filter(|p| gap(p) <= best);
            if down.is_none() && up.is_none() {
                break;
            }
            if let Some(p) = down {
                best = best.min(haversine(q, *p));
                lo -= 1;
            }
            if let Some(p) = up {
                best = best.min(haversine(q, *p));
                hi += 1;
            }
        }
        Some(best)
    }
}

/// Exact linear-scan nearest distance.
pub fn nearest_distance(q: GeoPoint, facilities: &[GeoPoint]) -> Option<f64> {
    facilities.iter().map(|f| haversine(q, *f)).min_by(f64::total_cmp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    #[default]
    LinearScan,
    LatitudeIndex,
}

/// Mean over gers of the distance to the closest facility of `category`.
pub fn mean_nearest_distance(
    gers: &[GeoPoint],
    facilities: &[FacilityPoint],
    category: FacilityCategory,
    mode: SearchMode,
) -> Result<f64> {
    if gers.is_empty() {
        return Err(Error::Empty("ger locations"));
    }
    let pts: Vec<GeoPoint> = facilities
        .iter()
        .filter(|f| f.category == category)
        .map(|f| f.location)
        .collect();
    if pts.is_empty() {
        return Err(Error::invalid("category", format!("no facilities of category {category}")));
    }
    let total: f64 = match mode {
        SearchMode::LinearScan => gers.iter().map(|g| nearest_distance(*g, &pts).expect("non-empty")).sum(),
        SearchMode::LatitudeIndex => {
            let idx = FacilityIndex::new(pts);
            gers.iter().map(|g| idx.nearest_distance(*g).expect("non-empty")).sum()
        }
    };
    Ok(total / gers.len() as f64)
}

// ---------------------------------------------------------------------------
// DEM

/// Regular lat/lon elevation grid. Row 0 is the southernmost row.
#[derive(Debug, Clone, PartialEq)]
pub struct DemGrid {
    /// Center of the lower-left cell.
    pub origin: GeoPoint,
    /// Cell size in degrees.
    pub cell_size: f64,
    pub nrows: usize,
    pub ncols: usize,
    values: Vec<f64>,
    pub nodata: Option<f64>,
}

impl DemGrid {
    /// `values` are row-major from the south row upward.
    pub fn new(origin: GeoPoint, cell_size: f64, nrows: usize, ncols: usize, values: Vec<f64>, nodata: Option<f64>) -> Result<Self> {
        if !(cell_size > 0.0) {
            return Err(Error::invalid("cell_size", "must be positive"));
        }
        if nrows == 0 || ncols == 0 || values.len() != nrows * ncols {
            return Err(Error::ShapeMismatch {
                expected: format!("{nrows}x{ncols} values"),
                got: values.len().to_string(),
            });
        }
        Ok(DemGrid {
            origin,
            cell_size,
            nrows,
            ncols,
            values,
            nodata,
        })
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[row * self.ncols + col];
        match self.nodata {
            Some(nd) if v == nd => None,
            _ => Some(v),
        }
    }

    /// Parses an ESRI ASCII grid. Both `xllcorner`/`yllcorner` and
    /// `xllcenter`/`yllcenter` headers are accepted.
    pub fn read_ascii<R: BufRead>(input: R) -> Result<Self> {
        let mut header: BTreeMap<String, f64> = BTreeMap::new();
        let mut data: Vec<f64> = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<dem>", e))?;
            let mut tokens = line.split_whitespace().peekable();
            let Some(first) = tokens.peek() else { continue };
            if first.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) && data.is_empty() {
                let key = tokens.next().unwrap().to_ascii_lowercase();
                let val = tokens
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Record { line: i + 1, reason: format!("bad header value for {key}") })?;
                header.insert(key, val);
                continue;
            }
            for t in tokens {
                data.push(t.parse().map_err(|_| Error::Record {
                    line: i + 1,
                    reason: format!("bad elevation {t:?}"),
                })?);
            }
        }
        let get = |k: &str| header.get(k).copied().ok_or_else(|| Error::Record { line: 0, reason: format!("missing header {k}") });
        let ncols = get("ncols")? as usize;
        let nrows = get("nrows")? as usize;
        let cell = get("cellsize")?;
        let (x0, y0) = match (header.get("xllcenter"), header.get("yllcenter")) {
            (Some(&x), Some(&y)) => (x, y),
            _ => (get("xllcorner")? + cell / 2.0, get("yllcorner")? + cell / 2.0),
        };
        let nodata = header.get("nodata_value").copied();
        if data.len() != nrows * ncols {
            return Err(Error::ShapeMismatch {
                expected: format!("{nrows}x{ncols} values"),
                got: data.len().to_string(),
            });
        }
        // file rows run north to south
        let mut values = Vec::with_capacity(data.len());
        for r in (0..nrows).rev() {
            values.extend_from_slice(&data[r * ncols..(r + 1) * ncols]);
        }
        DemGrid::new(GeoPoint::new(y0, x0)?, cell, nrows, ncols, values, nodata)
    }

    fn fractional_index(&self, p: GeoPoint) -> (f64, f64) {
        (
            (p.lat - self.origin.lat) / self.cell_size,
            (p.lon - self.origin.lon) / self.cell_size,
        )
    }
}

/// Bilinear interpolation between the four surrounding cell centers.
pub fn sample_elevation(dem: &DemGrid, p: GeoPoint) -> Result<f64> {
    let (fr, fc) = dem.fractional_index(p);
    let eps = 1e-9;
    let max_r = (dem.nrows - 1) as f64;
    let max_c = (dem.ncols - 1) as f64;
    if fr < -eps || fc < -eps || fr > max_r + eps || fc > max_c + eps {
        return Err(Error::Domain(format!("({}, {}) outside the DEM", p.lat, p.lon)));
    }
    let (fr, fc) = (fr.clamp(0.0, max_r), fc.clamp(0.0, max_c));
    let r0 = (fr.floor() as usize).min(dem.nrows.saturating_sub(2));
    let c0 = (fc.floor() as usize).min(dem.ncols.saturating_sub(2));
    let r1 = (r0 + 1).min(dem.nrows - 1);
    let c1 = (c0 + 1).min(dem.ncols - 1);
    let (ty, tx) = (fr - r0 as f64, fc - c0 as f64);
    let v = |r, c| {
        dem.value(r, c)
            .ok_or_else(|| Error::Domain(format!("nodata near ({}, {})", p.lat, p.lon)))
    };
    let (a, b, c, d) = (v(r0, c0)?, v(r0, c1)?, v(r1, c0)?, v(r1, c1)?);
    let south = a + (b - a) * tx;
    let north = c + (d - c) * tx;
    Ok(south + (north - south) * ty)
}

/// Slope from central differences one cell either side of `p` on the
/// bilinear surface; degrees of longitude are scaled by `cos(lat)` at `p`.
pub fn slope_degrees(dem: &DemGrid, p: GeoPoint) -> Result<f64> {
    let h = dem.cell_size;
    let at = |dlat: f64, dlon: f64| -> Result<f64> {
        let q = GeoPoint {
            lat: p.lat + dlat,
            lon: p.lon + dlon,
        };
        sample_elevation(dem, q).map_err(|_| Error::Domain(format!("({}, {}) lacks a full neighbourhood", p.lat, p.lon)))
    };
    let m_per_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let dzdx = (at(0.0, h)? - at(0.0, -h)?) / (2.0 * h * m_per_deg * p.lat.to_radians().cos());
    let dzdy = (at(h, 0.0)? - at(-h, 0.0)?) / (2.0 * h * m_per_deg);
    Ok(dzdx.hypot(dzdy).atan().to_degrees())
}

// ---------------------------------------------------------------------------
// Indicator table

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRow {
    pub indicator: String,
    pub period: Period,
    pub value: f64,
    pub class: String,
}

/// Mean elevation, mean slope and one mean nearest distance per category
/// present in `facilities`.
pub fn indicator_rows(
    period: &Period,
    gers: &[GeoPoint],
    facilities: &[FacilityPoint],
    dem: Option<&DemGrid>,
    table: &CategoryTable,
) -> Result<Vec<IndicatorRow>> {
    if gers.is_empty() {
        return Err(Error::Empty("ger locations"));
    }
    let mut rows = Vec::new();
    if let Some(dem) = dem {
        let n = gers.len() as f64;
        let elev = gers.iter().map(|g| sample_elevation(dem, *g)).sum::<Result<f64>>()? / n;
        let slope = gers.iter().map(|g| slope_degrees(dem, *g)).sum::<Result<f64>>()? / n;
        rows.push(IndicatorRow {
            indicator: "elevation_m".into(),
            period: period.clone(),
            value: elev,
            class: String::new(),
        });
        rows.push(IndicatorRow {
            indicator: "inclination_deg".into(),
            period: period.clone(),
            value: slope,
            class: String::new(),
        });
    }
    for cat in FacilityCategory::ALL {
        if !facilities.iter().any(|f| f.category == cat) {
            continue;
        }
        rows.push(IndicatorRow {
            indicator: format!("distance_{cat}_m"),
            period: period.clone(),
            value: mean_nearest_distance(gers, facilities, cat, SearchMode::LatitudeIndex)?,
            class: table.classes_of(cat).join(", "),
        });
    }
    Ok(rows)
}

/// `indicator,period,value,class`
pub fn write_indicators_csv<W: Write>(rows: &[IndicatorRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<indicators>", e))?;
    Ok(())
}

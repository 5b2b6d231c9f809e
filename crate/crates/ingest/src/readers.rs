//! File readers that check the schema up front and name the offending column
//! or feature, so a bad input fails with a message that points at the fix.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::str::FromStr;

use geojson::{feature::Id, Feature, GeoJson, Value};
use germap_core::analysis::{
    read_districts_csv as parse_districts, read_households_csv as parse_households, DeprivationTable, DistrictPair,
    HouseholdRecord,
};
use germap_core::geo_access::{CategoryTable, FacilityCategory, FacilityPoint};
use germap_core::scene_labels::Footprint;
use germap_core::{GeoPoint, Period};
use serde::Serialize;

use crate::error::{IngestError, Result};

/// A per-feature problem that did not stop the rest of the file loading.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureError {
    /// Zero-based position in the feature collection.
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub items: Vec<T>,
    pub errors: Vec<FeatureError>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| IngestError::io(path, e))
}

fn read_features(path: &Path) -> Result<Vec<Feature>> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let gj = GeoJson::from_str(&text).map_err(|e| IngestError::GeoJson {
        path: path.into(),
        reason: e.to_string(),
    })?;
    Ok(match gj {
        GeoJson::FeatureCollection(fc) => fc.features,
        GeoJson::Feature(f) => vec![f],
        GeoJson::Geometry(g) => vec![Feature {
            geometry: Some(g),
            ..Default::default()
        }],
    })
}

fn feature_id(f: &Feature, index: usize) -> String {
    match (&f.id, f.property("id")) {
        (Some(Id::String(s)), _) => s.clone(),
        (Some(Id::Number(n)), _) => n.to_string(),
        (None, Some(serde_json::Value::String(s))) => s.clone(),
        (None, Some(serde_json::Value::Number(n))) => n.to_string(),
        _ => format!("feature-{index}"),
    }
}

fn position(p: &[f64]) -> std::result::Result<GeoPoint, String> {
    if p.len() < 2 {
        return Err(format!("position has {} coordinates", p.len()));
    }
    // GeoJSON order is lon, lat
    GeoPoint::new(p[1], p[0]).map_err(|e| e.to_string())
}

fn ring(r: &[Vec<f64>]) -> std::result::Result<Vec<GeoPoint>, String> {
    r.iter().map(|p| position(p)).collect()
}

/// Reads digitized ger outlines. Each Polygon yields one footprint (holes are
/// ignored) and each MultiPolygon part yields one, with `#k` appended to the
/// id. A `period` property overrides `default_period`.
pub fn read_footprints(path: &Path, default_period: &Period) -> Result<Loaded<Footprint>> {
    let features = read_features(path)?;
    let mut out = Loaded {
        items: Vec::new(),
        errors: Vec::new(),
    };
    for (index, f) in features.iter().enumerate() {
        let mut fail = |reason: String| out.errors.push(FeatureError { index, reason });
        let period = match f.property("period") {
            None | Some(serde_json::Value::Null) => default_period.clone(),
            Some(serde_json::Value::String(s)) => Period::new(s.clone()),
            Some(serde_json::Value::Number(n)) => Period::new(n.to_string()),
            Some(other) => {
                fail(format!("period must be a string, got {other}"));
                continue;
            }
        };
        let id = feature_id(f, index);
        let rings: Vec<(String, &Vec<Vec<f64>>)> = match f.geometry.as_ref().map(|g| &g.value) {
            Some(Value::Polygon(rings)) => match rings.first() {
                Some(outer) => vec![(id.clone(), outer)],
                None => {
                    fail("polygon has no rings".into());
                    continue;
                }
            },
            Some(Value::MultiPolygon(polys)) => polys
                .iter()
                .enumerate()
                .filter_map(|(k, p)| p.first().map(|outer| (format!("{id}#{k}"), outer)))
                .collect(),
            Some(other) => {
                fail(format!("expected Polygon or MultiPolygon, got {}", other.type_name()));
                continue;
            }
            None => {
                fail("feature has no geometry".into());
                continue;
            }
        };
        for (fid, r) in rings {
            match ring(r).and_then(|pts| Footprint::new(fid, pts, period.clone()).map_err(|e| e.to_string())) {
                Ok(fp) => out.items.push(fp),
                Err(reason) => fail(reason),
            }
        }
    }
    Ok(out)
}

/// Reads facilities. Points are used as is; lines and polygons are reduced to
/// the mean of their vertices. The category comes from a `category` property
/// when present, otherwise from mapping `source_class` (or `fclass`, or
/// `amenity`) through `table`. Features that map to no category are reported.
pub fn read_facilities(path: &Path, table: &CategoryTable) -> Result<Loaded<FacilityPoint>> {
    let features = read_features(path)?;
    let mut out = Loaded {
        items: Vec::new(),
        errors: Vec::new(),
    };
    for (index, f) in features.iter().enumerate() {
        let mut fail = |reason: String| out.errors.push(FeatureError { index, reason });
        let location = match f.geometry.as_ref().map(|g| &g.value) {
            Some(v) => match representative_point(v) {
                Ok(p) => p,
                Err(e) => {
                    fail(e);
                    continue;
                }
            },
            None => {
                fail("feature has no geometry".into());
                continue;
            }
        };
        let source_class = ["source_class", "fclass", "amenity"]
            .iter()
            .find_map(|k| f.property(k).and_then(|v| v.as_str()))
            .unwrap_or("")
            .to_string();
        let category = match f.property("category").and_then(|v| v.as_str()) {
            Some(c) => match FacilityCategory::from_str(c) {
                Ok(c) => c,
                Err(e) => {
                    fail(e.to_string());
                    continue;
                }
            },
            None => match table.classify(&source_class) {
                Some(c) => c,
                None => {
                    fail(format!("class {source_class:?} maps to no facility category"));
                    continue;
                }
            },
        };
        out.items.push(FacilityPoint {
            location,
            category,
            source_class,
        });
    }
    Ok(out)
}

fn representative_point(v: &Value) -> std::result::Result<GeoPoint, String> {
    let mut verts: Vec<&Vec<f64>> = Vec::new();
    match v {
        Value::Point(p) => return position(p),
        Value::MultiPoint(ps) | Value::LineString(ps) => verts.extend(ps),
        Value::MultiLineString(ls) => ls.iter().for_each(|l| verts.extend(l)),
        Value::Polygon(rings) => {
            if let Some(outer) = rings.first() {
                // skip the closing vertex so it is not counted twice
                verts.extend(&outer[..outer.len().saturating_sub(1)]);
            }
        }
        Value::MultiPolygon(polys) => {
            for outer in polys.iter().filter_map(|p| p.first()) {
                verts.extend(&outer[..outer.len().saturating_sub(1)]);
            }
        }
        Value::GeometryCollection(_) => return Err("geometry collections are not supported".into()),
    }
    if verts.is_empty() {
        return Err("geometry has no vertices".into());
    }
    let pts = verts.iter().map(|p| position(p)).collect::<std::result::Result<Vec<_>, _>>()?;
    let n = pts.len() as f64;
    let lat = pts.iter().map(|p| p.lat).sum::<f64>() / n;
    let lon = pts.iter().map(|p| p.lon).sum::<f64>() / n;
    GeoPoint::new(lat, lon).map_err(|e| e.to_string())
}

fn require_columns(path: &Path, required: &[&str]) -> Result<()> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| IngestError::Schema {
        path: path.into(),
        column: String::new(),
        reason: e.to_string(),
    })?;
    for col in required {
        if !headers.iter().any(|h| h.trim() == *col) {
            return Err(IngestError::Schema {
                path: path.into(),
                column: col.to_string(),
                reason: format!("missing; header is {:?}", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
    }
    Ok(())
}

fn row_error(path: &Path, e: germap_core::Error) -> IngestError {
    match e {
        germap_core::Error::Record { line, reason } => IngestError::Row {
            path: path.into(),
            row: line,
            reason,
        },
        other => other.into(),
    }
}

/// `year,sub_district,households_total[,households_in_gers]`
pub fn read_household_csv(path: &Path) -> Result<Vec<HouseholdRecord>> {
    require_columns(path, &["year", "sub_district", "households_total"])?;
    parse_households(open(path)?).map_err(|e| row_error(path, e))
}

/// `district,ger_ratio,poverty_headcount`
pub fn read_district_csv(path: &Path) -> Result<Vec<DistrictPair>> {
    require_columns(path, &["district", "ger_ratio", "poverty_headcount"])?;
    parse_districts(open(path)?).map_err(|e| row_error(path, e))
}

/// `indicator,category,share,slum_condition` with `O`/`X` flags.
pub fn read_deprivation_csv(path: &Path) -> Result<DeprivationTable> {
    require_columns(path, &["indicator", "category", "share", "slum_condition"])?;
    DeprivationTable::read_csv(open(path)?).map_err(|e| row_error(path, e))
}

//! From predicted masks to ger counts.
//!
//! Blobs are 8-connected components. The default count divides the pooled
//! area of all kept blobs by a unit ger area and rounds half-up; reviewers can
//! reject blobs or override a blob's contribution with an exact count.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::period::Period;
use crate::raster::{ensure_parent, Mask};
use crate::tile_pyramid::{tile_resolution, GeoPoint, TileCoord};

/// Average ger footprint used to turn area into a count.
pub const DEFAULT_UNIT_AREA_M2: f64 = 61.0;
/// Blobs smaller than this are treated as speckle.
pub const DEFAULT_MIN_BLOB_PX: usize = 20;

/// One 8-connected component of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub pixel_count: usize,
    /// Mean of pixel centers, in tile pixel coordinates.
    pub centroid_px: (f64, f64),
    /// `[x_min, y_min, x_max, y_max]`, inclusive.
    pub bbox_px: [u32; 4],
    /// Member pixels with a 4-neighbour outside the blob, in scan order.
    pub outline: Vec<[u32; 2]>,
}

/// Components in scan order of their first pixel; blobs below `min_blob_px`
/// are dropped.
pub fn connected_components(mask: &Mask, min_blob_px: usize) -> Vec<Blob> {
    let (w, h) = (mask.width(), mask.height());
    let data = mask.as_slice();
    let mut label = vec![u32::MAX; w * h];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();
    let mut members = Vec::new();
    for start in 0..w * h {
        if data[start] == 0 || label[start] != u32::MAX {
            continue;
        }
        let id = blobs.len() as u32;
        label[start] = id;
        stack.push(start);
        members.clear();
        while let Some(i) = stack.pop() {
            members.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if data[j] != 0 && label[j] == u32::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        members.sort_unstable();
        blobs.push(summarize(&members, w, h, data));
    }
    blobs.retain(|b| b.pixel_count >= min_blob_px);
    blobs
}

fn summarize(members: &[usize], w: usize, h: usize, data: &[u8]) -> Blob {
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut bbox = [u32::MAX, u32::MAX, 0, 0];
    let mut outline = Vec::new();
    for &i in members {
        let (x, y) = (i % w, i / w);
        sx += x as f64 + 0.5;
        sy += y as f64 + 0.5;
        bbox = [bbox[0].min(x as u32), bbox[1].min(y as u32), bbox[2].max(x as u32), bbox[3].max(y as u32)];
        let edge = x == 0
            || y == 0
            || x + 1 == w
            || y + 1 == h
            || data[i - 1] == 0
            || data[i + 1] == 0
            || data[i - w] == 0
            || data[i + w] == 0;
        if edge {
            outline.push([x as u32, y as u32]);
        }
    }
    let n = members.len() as f64;
    Blob {
        pixel_count: members.len(),
        centroid_px: (sx / n, sy / n),
        bbox_px: bbox,
        outline,
    }
}

/// Review state of a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Verdict {
    #[default]
    Pending,
    Accepted,
    Rejected,
    /// The blob holds exactly this many gers.
    Recounted(u32),
}

impl Verdict {
    pub fn status(&self) -> &'static str {
        match self {
            Verdict::Pending => "pending",
            Verdict::Accepted => "accepted",
            Verdict::Rejected => "rejected",
            Verdict::Recounted(_) => "recounted",
        }
    }

    pub fn count(&self) -> Option<u32> {
        match self {
            Verdict::Recounted(n) => Some(*n),
            _ => None,
        }
    }

    fn from_parts(status: &str, count: Option<u32>) -> Result<Self> {
        Ok(match (status, count) {
            ("pending", _) => Verdict::Pending,
            ("accepted", _) => Verdict::Accepted,
            ("rejected", _) => Verdict::Rejected,
            ("recounted", Some(n)) if n >= 1 => Verdict::Recounted(n),
            _ => return Err(Error::invalid("verdict", format!("bad verdict {status:?} / {count:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub id: String,
    pub tile: TileCoord,
    pub period: Period,
    pub pixel_count: usize,
    pub area_m2: f64,
    pub centroid: GeoPoint,
    pub bbox_px: [u32; 4],
    pub outline: Vec<[u32; 2]>,
    pub verdict: Verdict,
}

pub fn detection_id(period: &Period, tile: TileCoord, index: usize) -> String {
    format!("{}-{}-{}-{}-{index}", period, tile.z, tile.x, tile.y)
}

/// Components of a predicted tile mask as geolocated detections.
pub fn detect(mask: &Mask, tile: TileCoord, period: &Period, min_blob_px: usize) -> Vec<Detection> {
    let res = tile_resolution(tile);
    connected_components(mask, min_blob_px)
        .into_iter()
        .enumerate()
        .map(|(k, b)| Detection {
            id: detection_id(period, tile, k),
            tile,
            period: period.clone(),
            pixel_count: b.pixel_count,
            area_m2: b.pixel_count as f64 * res * res,
            centroid: tile.pixel_to_geo(b.centroid_px.0, b.centroid_px.1),
            bbox_px: b.bbox_px,
            outline: b.outline,
            verdict: Verdict::Pending,
        })
        .collect()
}

/// Mean area of the given detections.
pub fn estimate_avg_area(detections: &[&Detection]) -> Result<f64> {
    if detections.is_empty() {
        return Err(Error::Empty("accepted detections"));
    }
    Ok(detections.iter().map(|d| d.area_m2).sum::<f64>() / detections.len() as f64)
}

/// `round_half_up(total / unit)`.
pub fn area_to_count(total_area_m2: f64, unit_area_m2: f64) -> Result<u64> {
    if !(unit_area_m2 > 0.0) || !unit_area_m2.is_finite() {
        return Err(Error::invalid("unit_area_m2", "must be positive"));
    }
    if !(total_area_m2 >= 0.0) || !total_area_m2.is_finite() {
        return Err(Error::invalid("total_area_m2", "must be finite and non-negative"));
    }
    Ok((total_area_m2 / unit_area_m2 + 0.5).floor() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Pool the area of all kept blobs, then divide once.
    #[default]
    Global,
    /// Round each kept blob separately, at least 1 per blob.
    PerBlob,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountConfig {
    pub unit_area_m2: f64,
    pub min_blob_px: usize,
    pub mode: CountMode,
}

impl Default for CountConfig {
    fn default() -> Self {
        CountConfig {
            unit_area_m2: DEFAULT_UNIT_AREA_M2,
            min_blob_px: DEFAULT_MIN_BLOB_PX,
            mode: CountMode::Global,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accept,
    Reject,
    SetCount,
}

/// One line of the verdict log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub detection_id: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
}

impl VerdictRecord {
    pub fn verdict(&self) -> Result<Verdict> {
        match (self.action, self.count) {
            (Action::Accept, _) => Ok(Verdict::Accepted),
            (Action::Reject, _) => Ok(Verdict::Rejected),
            (Action::SetCount, Some(n)) if n >= 1 => Ok(Verdict::Recounted(n)),
            (Action::SetCount, c) => Err(Error::invalid("count", format!("set_count needs count >= 1, got {c:?}"))),
        }
    }
}

/// Latest verdict per detection id. Every id must exist in `detections`.
pub fn resolve_verdicts(detections: &[Detection], log: &[VerdictRecord]) -> Result<HashMap<String, Verdict>> {
    let known: HashMap<&str, Verdict> = detections.iter().map(|d| (d.id.as_str(), d.verdict)).collect();
    let mut state: HashMap<String, Verdict> = HashMap::new();
    for r in log {
        if !known.contains_key(r.detection_id.as_str()) {
            return Err(Error::UnknownDetection(r.detection_id.clone()));
        }
        state.insert(r.detection_id.clone(), r.verdict()?);
    }
    for d in detections {
        state.entry(d.id.clone()).or_insert(d.verdict);
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountResult {
    pub period: Period,
    pub raw_count: u64,
    pub verified_count: u64,
    pub avg_ger_area_m2: f64,
}

/// Counts for one period after applying the verdict log.
///
/// Rejected blobs contribute nothing, recounted blobs contribute exactly their
/// count, and the remaining (pending or accepted) blobs are converted by
/// area. `raw_count` applies the same area rule to every blob, ignoring
/// verdicts.
pub fn apply_verdicts(
    period: &Period,
    detections: &[Detection],
    log: &[VerdictRecord],
    cfg: &CountConfig,
) -> Result<CountResult> {
    let state = resolve_verdicts(detections, log)?;
    let unit = cfg.unit_area_m2;
    let in_period: Vec<&Detection> = detections.iter().filter(|d| &d.period == period).collect();
    let by_area = |areas: &mut dyn Iterator<Item = f64>| -> Result<u64> {
        match cfg.mode {
            CountMode::Global => area_to_count(areas.sum(), unit),
            CountMode::PerBlob => areas.map(|a| area_to_count(a, unit).map(|c| c.max(1))).sum(),
        }
    };
    let raw_count = by_area(&mut in_period.iter().map(|d| d.area_m2))?;
    let mut fixed = 0u64;
    let mut kept = Vec::new();
    for d in &in_period {
        match state[&d.id] {
            Verdict::Rejected => {}
            Verdict::Recounted(n) => fixed += n as u64,
            Verdict::Pending | Verdict::Accepted => kept.push(d.area_m2),
        }
    }
    let verified_count = by_area(&mut kept.into_iter())? + fixed;
    Ok(CountResult {
        period: period.clone(),
        raw_count,
        verified_count,
        avg_ger_area_m2: unit,
    })
}

/// Mean area of the detections whose latest verdict is `accepted`.
pub fn calibrate_unit_area(detections: &[Detection], log: &[VerdictRecord]) -> Result<f64> {
    let state = resolve_verdicts(detections, log)?;
    let accepted: Vec<&Detection> = detections
        .iter()
        .filter(|d| state[&d.id] == Verdict::Accepted)
        .collect();
    estimate_avg_area(&accepted)
}

/// One result per period present in `detections`, in period order.
pub fn count_all_periods(detections: &[Detection], log: &[VerdictRecord], cfg: &CountConfig) -> Result<Vec<CountResult>> {
    let periods: BTreeMap<&Period, ()> = detections.iter().map(|d| (&d.period, ())).collect();
    periods
        .into_keys()
        .map(|p| apply_verdicts(p, detections, log, cfg))
        .collect()
}

// ---------------------------------------------------------------------------
// File formats

/// `period,raw_count,verified_count,avg_ger_area_m2`
pub fn write_counts_csv<W: Write>(results: &[CountResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<counts>", e))?;
    Ok(())
}

pub fn read_counts_csv<R: Read>(input: R) -> Result<Vec<CountResult>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DetectionProps {
    id: String,
    period: Period,
    area_m2: f64,
    pixel_count: usize,
    verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    verdict_count: Option<u32>,
    tile: String,
    bbox_px: [u32; 4],
    #[serde(default)]
    outline: Vec<[u32; 2]>,
}

impl Detection {
    /// GeoJSON Feature with a Point centroid.
    pub fn to_feature(&self) -> Value {
        let props = DetectionProps {
            id: self.id.clone(),
            period: self.period.clone(),
            area_m2: self.area_m2,
            pixel_count: self.pixel_count,
            verdict: self.verdict.status().into(),
            verdict_count: self.verdict.count(),
            tile: self.tile.to_string(),
            bbox_px: self.bbox_px,
            outline: self.outline.clone(),
        };
        json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [self.centroid.lon, self.centroid.lat]},
            "properties": props,
        })
    }

    pub fn from_feature(f: &Value) -> Result<Self> {
        let bad = |why: &str| Error::Geometry(why.to_string());
        if f.get("type").and_then(Value::as_str) != Some("Feature") {
            return Err(bad("not a Feature"));
        }
        let geom = f.get("geometry").ok_or_else(|| bad("missing geometry"))?;
        if geom.get("type").and_then(Value::as_str) != Some("Point") {
            return Err(bad("detection geometry must be a Point"));
        }
        let coords: [f64; 2] = serde_json::from_value(geom.get("coordinates").cloned().unwrap_or(Value::Null))?;
        let props: DetectionProps = serde_json::from_value(f.get("properties").cloned().unwrap_or(Value::Null))?;
        let tile = parse_tile(&props.tile)?;
        Ok(Detection {
            id: props.id,
            tile,
            period: props.period,
            pixel_count: props.pixel_count,
            area_m2: props.area_m2,
            centroid: GeoPoint::new(coords[1], coords[0])?,
            bbox_px: props.bbox_px,
            outline: props.outline,
            verdict: Verdict::from_parts(&props.verdict, props.verdict_count)?,
        })
    }
}

/// Parses `z/x/y`.
pub fn parse_tile(s: &str) -> Result<TileCoord> {
    let parts: Vec<&str> = s.split('/').collect();
    let bad = || Error::invalid("tile", format!("expected z/x/y, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let z = parts[0].parse().map_err(|_| bad())?;
    let x = parts[1].parse().map_err(|_| bad())?;
    let y = parts[2].parse().map_err(|_| bad())?;
    TileCoord::new(z, x, y)
}

pub fn detections_to_geojson(detections: &[Detection]) -> Value {
    json!({
        "type": "FeatureCollection",
        "features": detections.iter().map(Detection::to_feature).collect::<Vec<_>>(),
    })
}

pub fn detections_from_geojson(v: &Value) -> Result<Vec<Detection>> {
    let features = v
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Geometry("expected a FeatureCollection".into()))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| Detection::from_feature(f).map_err(|e| Error::Record { line: i, reason: e.to_string() }))
        .collect()
}

pub fn save_detections(detections: &[Detection], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_vec(&detections_to_geojson(detections))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_reader(BufReader::new(f))?;
    detections_from_geojson(&v)
}

/// Parses a JSON-lines verdict log. A malformed final line without a
/// trailing newline is an interrupted write and is ignored; malformed lines
/// elsewhere are errors.
pub fn parse_verdict_log<R: Read>(input: R) -> Result<Vec<VerdictRecord>> {
    let mut reader = BufReader::new(input);
    let mut out = Vec::new();
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(|e| Error::io("<verdict log>", e))?;
        if read == 0 {
            break;
        }
        n += 1;
        let complete = line.ends_with('\n');
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str::<VerdictRecord>(text) {
            Ok(r) => out.push(r),
            Err(_) if !complete => break,
            Err(e) => {
                return Err(Error::Record {
                    line: n,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Reads a verdict log; a missing file is an empty log.
pub fn read_verdict_log(path: &Path) -> Result<Vec<VerdictRecord>> {
    match File::open(path) {
        Ok(f) => parse_verdict_log(f),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Append-only writer; every record is flushed to disk before returning.
#[derive(Debug)]
pub struct VerdictLog {
    file: File,
    path: std::path::PathBuf,
}

impl VerdictLog {
    pub fn open(path: &Path) -> Result<Self> {
        ensure_parent(path)?;
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        // a torn final line was never acknowledged; drop it so the next
        // record starts on a fresh line
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            file.set_len(keep as u64).map_err(|e| Error::io(path, e))?;
        }
        Ok(VerdictLog {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, record: &VerdictRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| Error::io(&self.path, e))
    }
}

//! Concurrent XYZ tile downloads into `<cache>/<period>/<z>/<x>/<y>.png`.
//!
//! Tiles already in the cache are never requested again. Responses are
//! decoded and re-encoded as PNG, then written atomically through a temporary
//! file in the destination directory. Cache files that do not decode to a
//! 256×256 image are moved aside to `<cache>/quarantine/` and fetched anew.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use germap_core::raster::load_tile_image;
use germap_core::scene_labels::tile_path;
use germap_core::tile_pyramid::TILE_SIZE;
use germap_core::{Period, TileCoord};
use image::ImageFormat;
use reqwest::StatusCode;
use serde::Serialize;
use tokio::sync::{Mutex, Semaphore};
use tokio::task::JoinSet;
use tokio::time::Instant;

use crate::error::{IngestError, Result};

/// Overrides the cache root when set.
pub const CACHE_ROOT_ENV: &str = "GERMAP_CACHE_ROOT";

pub fn cache_root_from_env(default: impl Into<PathBuf>) -> PathBuf {
    std::env::var_os(CACHE_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| default.into())
}

#[derive(Debug, Clone)]
pub struct TileSource {
    /// URL with `{z}`, `{x}` and `{y}` placeholders, in any order.
    pub url_template: String,
    pub period: Period,
    /// Requests per second.
    pub rate_limit: f64,
    pub cache_root: PathBuf,
    pub max_in_flight: usize,
    pub attempts: u32,
    /// Delay before the first retry; doubles with each further retry.
    pub backoff: Duration,
    /// Optional static header, e.g. an API key.
    pub header: Option<(String, String)>,
}

impl TileSource {
    pub fn new(url_template: impl Into<String>, period: Period, rate_limit: f64, cache_root: impl Into<PathBuf>) -> Result<Self> {
        let src = TileSource {
            url_template: url_template.into(),
            period,
            rate_limit,
            cache_root: cache_root.into(),
            max_in_flight: 8,
            attempts: 3,
            backoff: Duration::from_millis(250),
            header: None,
        };
        src.validate()?;
        Ok(src)
    }

    pub fn validate(&self) -> Result<()> {
        for p in ["{z}", "{x}", "{y}"] {
            if !self.url_template.contains(p) {
                return Err(IngestError::Source(format!("url template lacks {p}")));
            }
        }
        if !(self.rate_limit > 0.0) || !self.rate_limit.is_finite() {
            return Err(IngestError::Source("rate limit must be positive".into()));
        }
        if self.max_in_flight == 0 || self.attempts == 0 {
            return Err(IngestError::Source("max_in_flight and attempts must be positive".into()));
        }
        Ok(())
    }

    pub fn url_for(&self, t: TileCoord) -> String {
        self.url_template
            .replace("{z}", &t.z.to_string())
            .replace("{x}", &t.x.to_string())
            .replace("{y}", &t.y.to_string())
    }

    pub fn cache_path(&self, t: TileCoord) -> PathBuf {
        tile_path(&self.cache_root, &self.period, t)
    }

    fn quarantine_path(&self, t: TileCoord) -> PathBuf {
        tile_path(&self.cache_root.join("quarantine"), &self.period, t)
    }
}

/// Inclusive rectangle of tiles at one zoom level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileRange {
    pub z: u8,
    pub x_min: u32,
    pub x_max: u32,
    pub y_min: u32,
    pub y_max: u32,
}

impl TileRange {
    pub fn tiles(&self) -> Vec<TileCoord> {
        let mut out = Vec::new();
        for x in self.x_min..=self.x_max {
            for y in self.y_min..=self.y_max {
                out.push(TileCoord { z: self.z, x, y });
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        if self.x_max < self.x_min || self.y_max < self.y_min {
            return 0;
        }
        ((self.x_max - self.x_min + 1) as usize) * ((self.y_max - self.y_min + 1) as usize)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FetchReport {
    pub requested: usize,
    pub fetched: usize,
    pub cached_hits: usize,
    pub failed: usize,
    /// `(tile, reason)`, sorted by tile.
    pub failures: Vec<(TileCoord, String)>,
    /// Cache files moved aside because they did not decode.
    pub quarantined: Vec<PathBuf>,
}

impl FetchReport {
    pub fn is_consistent(&self) -> bool {
        self.requested == self.fetched + self.cached_hits + self.failed && self.failed == self.failures.len()
    }
}

/// Refills at `rate` tokens per second up to a burst of one second's worth.
struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        TokenBucket {
            rate,
            capacity,
            state: Mutex::new((1.0, Instant::now())),
        }
    }

    async fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().await;
                let now = Instant::now();
                let refill = now.duration_since(s.1).as_secs_f64() * self.rate;
                s.0 = (s.0 + refill).min(self.capacity);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - s.0) / self.rate)
            };
            tokio::time::sleep(wait).await;
        }
    }
}

enum Outcome {
    Fetched,
    Cached,
    Failed(String),
}

enum Attempt {
    Transient(String),
    Permanent(String),
}

/// Downloads every tile not already cached. Per-tile failures are recorded in
/// the report and never abort the batch.
pub async fn fetch_tiles(source: &TileSource, tiles: &[TileCoord]) -> Result<FetchReport> {
    source.validate()?;
    let mut builder = reqwest::Client::builder().timeout(Duration::from_secs(30));
    if let Some((k, v)) = &source.header {
        let mut headers = reqwest::header::HeaderMap::new();
        let name = reqwest::header::HeaderName::from_bytes(k.as_bytes())
            .map_err(|e| IngestError::Source(format!("header name: {e}")))?;
        let value = reqwest::header::HeaderValue::from_str(v).map_err(|e| IngestError::Source(format!("header value: {e}")))?;
        headers.insert(name, value);
        builder = builder.default_headers(headers);
    }
    let client = builder.build()?;
    let source = Arc::new(source.clone());
    let bucket = Arc::new(TokenBucket::new(source.rate_limit));
    let window = Arc::new(Semaphore::new(source.max_in_flight));
    let mut report = FetchReport {
        requested: tiles.len(),
        ..Default::default()
    };

    let mut set = JoinSet::new();
    for &t in tiles {
        let path = source.cache_path(t);
        match cached_state(&path) {
            CacheState::Valid => {
                report.cached_hits += 1;
                continue;
            }
            CacheState::Corrupt(reason) => {
                let q = source.quarantine_path(t);
                quarantine(&path, &q)?;
                tracing::warn!(tile = %t, %reason, "quarantined cache file");
                report.quarantined.push(q);
            }
            CacheState::Missing => {}
        }
        let (client, source, bucket, window) = (client.clone(), source.clone(), bucket.clone(), window.clone());
        set.spawn(async move {
            let _permit = window.acquire_owned().await.expect("semaphore never closed");
            (t, fetch_one(&client, &source, &bucket, t).await)
        });
    }
    while let Some(joined) = set.join_next().await {
        let (t, outcome) = joined.map_err(|e| IngestError::Source(format!("fetch task panicked: {e}")))?;
        match outcome {
            Outcome::Fetched => report.fetched += 1,
            Outcome::Cached => report.cached_hits += 1,
            Outcome::Failed(reason) => {
                report.failed += 1;
                report.failures.push((t, reason));
            }
        }
    }
    report.failures.sort_by_key(|(t, _)| *t);
    Ok(report)
}

enum CacheState {
    Missing,
    Valid,
    Corrupt(String),
}

fn cached_state(path: &Path) -> CacheState {
    if !path.exists() {
        return CacheState::Missing;
    }
    match load_tile_image(path) {
        Ok(_) => CacheState::Valid,
        Err(e) => CacheState::Corrupt(e.to_string()),
    }
}

fn quarantine(from: &Path, to: &Path) -> Result<()> {
    if let Some(dir) = to.parent() {
        std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    }
    std::fs::rename(from, to).map_err(|e| IngestError::io(from, e))
}

async fn fetch_one(client: &reqwest::Client, source: &TileSource, bucket: &TokenBucket, t: TileCoord) -> Outcome {
    let url = source.url_for(t);
    let mut last = String::new();
    for attempt in 0..source.attempts {
        if attempt > 0 {
            tokio::time::sleep(source.backoff * 2u32.pow(attempt - 1)).await;
        }
        bucket.acquire().await;
        match try_fetch(client, &url).await {
            Ok(bytes) => {
                let path = source.cache_path(t);
                // another run may have completed this tile meanwhile
                if matches!(cached_state(&path), CacheState::Valid) {
                    return Outcome::Cached;
                }
                return match tokio::task::spawn_blocking(move || store_png(&bytes, &path)).await {
                    Ok(Ok(())) => Outcome::Fetched,
                    Ok(Err(e)) => Outcome::Failed(e),
                    Err(e) => Outcome::Failed(format!("writer task failed: {e}")),
                };
            }
            Err(Attempt::Permanent(why)) => return Outcome::Failed(why),
            Err(Attempt::Transient(why)) => {
                tracing::debug!(tile = %t, attempt, %why, "retrying");
                last = why;
            }
        }
    }
    Outcome::Failed(format!("gave up after {} attempts: {last}", source.attempts))
}

async fn try_fetch(client: &reqwest::Client, url: &str) -> std::result::Result<Vec<u8>, Attempt> {
    let resp = client
        .get(url)
        .send()
        .await
        .map_err(|e| Attempt::Transient(format!("request failed: {e}")))?;
    let status = resp.status();
    if status.is_success() {
        return resp
            .bytes()
            .await
            .map(|b| b.to_vec())
            .map_err(|e| Attempt::Transient(format!("body: {e}")));
    }
    let why = format!("HTTP {}", status.as_u16());
    if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS || status == StatusCode::REQUEST_TIMEOUT {
        Err(Attempt::Transient(why))
    } else {
        Err(Attempt::Permanent(why))
    }
}

/// Decodes any supported format and writes a PNG atomically.
fn store_png(bytes: &[u8], path: &Path) -> std::result::Result<(), String> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| format!("undecodable tile: {e}"))?
        .into_rgb8();
    if img.dimensions() != (TILE_SIZE, TILE_SIZE) {
        return Err(format!("tile is {}x{}, expected {TILE_SIZE}x{TILE_SIZE}", img.width(), img.height()));
    }
    let dir = path.parent().ok_or("cache path has no parent")?;
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    img.write_to(&mut std::io::BufWriter::new(tmp.as_file()), ImageFormat::Png)
        .map_err(|e| format!("encode: {e}"))?;
    tmp.as_file().sync_all().map_err(|e| format!("sync: {e}"))?;
    tmp.persist(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

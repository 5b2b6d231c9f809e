use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use germap_core::{Period, TileCoord};
use germap_ingest::{fetch_tiles, TileRange, TileSource};
use image::{ImageFormat, RgbImage};

const BROKEN_X: u32 = 1003;

#[derive(Default)]
struct Mock {
    hits: Mutex<HashMap<(u32, u32), usize>>,
    total: AtomicUsize,
}

fn encode(img: &RgbImage, fmt: ImageFormat) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, fmt).unwrap();
    buf.into_inner()
}

// Tile (BROKEN_X, *) is permanently 404. Tile y = 1 answers 503 on its first
// request. Even x values are served as JPEG to exercise transcoding.
async fn tile(State(m): State<Arc<Mock>>, UrlPath((z, y, x)): UrlPath<(u8, u32, u32)>) -> Response {
    m.total.fetch_add(1, Ordering::SeqCst);
    let n = {
        let mut hits = m.hits.lock().unwrap();
        let e = hits.entry((x, y)).or_default();
        *e += 1;
        *e
    };
    if z != 18 || x == BROKEN_X {
        return (StatusCode::NOT_FOUND, "no such tile").into_response();
    }
    if y == 1 && n == 1 {
        return (StatusCode::SERVICE_UNAVAILABLE, "busy").into_response();
    }
    let img = RgbImage::from_pixel(256, 256, image::Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
    let (fmt, ct) = if x % 2 == 0 {
        (ImageFormat::Jpeg, "image/jpeg")
    } else {
        (ImageFormat::Png, "image/png")
    };
    ([(header::CONTENT_TYPE, ct)], Bytes::from(encode(&img, fmt))).into_response()
}

async fn serve() -> (String, Arc<Mock>) {
    let mock = Arc::new(Mock::default());
    let app = Router::new()
        .route("/tiles/{z}/{y}/{x}", get(tile))
        .with_state(mock.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/tiles/{{z}}/{{y}}/{{x}}"), mock)
}

fn source(url: &str, cache: &Path) -> TileSource {
    let mut s = TileSource::new(url, Period::new("2022"), 200.0, cache).unwrap();
    s.backoff = Duration::from_millis(5);
    s
}

fn ten_tiles() -> Vec<TileCoord> {
    TileRange {
        z: 18,
        x_min: 1000,
        x_max: 1004,
        y_min: 0,
        y_max: 1,
    }
    .tiles()
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[tokio::test]
async fn broken_column_fails_in_every_row() {
    let (url, mock) = serve().await;
    let dir = tempfile::tempdir().unwrap();
    let src = source(&url, dir.path());
    let tiles = ten_tiles();
    let r = fetch_tiles(&src, &tiles).await.unwrap();
    assert_eq!((r.requested, r.fetched, r.cached_hits, r.failed), (10, 8, 0, 2));
    // both y rows of the broken column fail
    let failed: Vec<TileCoord> = r.failures.iter().map(|f| f.0).collect();
    assert_eq!(
        failed,
        vec![TileCoord { z: 18, x: BROKEN_X, y: 0 }, TileCoord { z: 18, x: BROKEN_X, y: 1 }]
    );
    assert!(r.failures[0].1.contains("404"));
    // permanent errors are not retried
    assert_eq!(mock.hits.lock().unwrap()[&(BROKEN_X, 0)], 1);
    assert!(r.is_consistent());
}

#[tokio::test]
async fn exactly_one_failing_tile_is_named() {
    let (url, _mock) = serve().await;
    let dir = tempfile::tempdir().unwrap();
    let src = source(&url, dir.path());
    let tiles: Vec<TileCoord> = (0..10).map(|i| TileCoord { z: 18, x: 995 + i, y: 0 }).collect();
    assert!(tiles.iter().any(|t| t.x == BROKEN_X));
    let r = fetch_tiles(&src, &tiles).await.unwrap();
    assert_eq!((r.failed, r.fetched), (1, 9));
    assert_eq!(r.failures[0].0, TileCoord { z: 18, x: BROKEN_X, y: 0 });
}

#[tokio::test]
async fn transient_errors_are_retried() {
    let (url, mock) = serve().await;
    let dir = tempfile::tempdir().unwrap();
    let src = source(&url, dir.path());
    let t = TileCoord { z: 18, x: 1001, y: 1 };
    let r = fetch_tiles(&src, &[t]).await.unwrap();
    assert_eq!(r.fetched, 1);
    assert_eq!(mock.hits.lock().unwrap()[&(1001, 1)], 2);
}

#[tokio::test]
async fn retries_stop_after_three_attempts() {
    let dir = tempfile::tempdir().unwrap();
    // nothing listens on port 9 on loopback
    let src = source("http://127.0.0.1:9/{z}/{x}/{y}", dir.path());
    let r = fetch_tiles(&src, &[TileCoord { z: 18, x: 1, y: 1 }]).await.unwrap();
    assert_eq!(r.failed, 1);
    assert!(r.failures[0].1.contains("3 attempts"), "{}", r.failures[0].1);
}

#[tokio::test]
async fn second_run_fetches_nothing_and_leaves_cache_unchanged() {
    let (url, mock) = serve().await;
    let dir = tempfile::tempdir().unwrap();
    let src = source(&url, dir.path());
    let tiles = ten_tiles();
    fetch_tiles(&src, &tiles).await.unwrap();
    let before = snapshot(dir.path());
    let requests = mock.total.load(Ordering::SeqCst);

    let r = fetch_tiles(&src, &tiles).await.unwrap();
    assert_eq!((r.fetched, r.cached_hits, r.failed), (0, 8, 2));
    assert_eq!(snapshot(dir.path()), before);
    // only the two broken tiles are asked for again
    assert_eq!(mock.total.load(Ordering::SeqCst) - requests, 2);
}

#[tokio::test]
async fn fully_cached_region_and_empty_region() {
    let (url, _mock) = serve().await;
    let dir = tempfile::tempdir().unwrap();
    let src = source(&url, dir.path());
    let tiles: Vec<TileCoord> = ten_tiles().into_iter().filter(|t| t.x != BROKEN_X).collect();
    fetch_tiles(&src, &tiles).await.unwrap();
    let r = fetch_tiles(&src, &tiles).await.unwrap();
    assert_eq!((r.fetched, r.cached_hits, r.requested), (0, 8, 8));

    let empty = fetch_tiles(&src, &[]).await.unwrap();
    assert_eq!(empty, Default::default());
}

#[tokio::test]
async fn cache_holds_png_at_expected_path() {
    let (url, _mock) = serve().await;
    let dir = tempfile::tempdir().unwrap();
    let src = source(&url, dir.path());
    // even x is served as JPEG
    let t = TileCoord { z: 18, x: 1000, y: 0 };
    fetch_tiles(&src, &[t]).await.unwrap();
    let path = dir.path().join("2022/18/1000/0.png");
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(image::guess_format(&bytes).unwrap(), ImageFormat::Png);
    let img = image::load_from_memory(&bytes).unwrap();
    assert_eq!((img.width(), img.height()), (256, 256));
}

#[tokio::test]
async fn corrupt_cache_file_is_quarantined_and_refetched() {
    let (url, _mock) = serve().await;
    let dir = tempfile::tempdir().unwrap();
    let src = source(&url, dir.path());
    let t = TileCoord { z: 18, x: 1001, y: 0 };
    let path = src.cache_path(t);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(&path, b"not a png").unwrap();

    let r = fetch_tiles(&src, &[t]).await.unwrap();
    assert_eq!(r.fetched, 1);
    assert_eq!(r.quarantined.len(), 1);
    assert_eq!(std::fs::read(&r.quarantined[0]).unwrap(), b"not a png");
    assert!(image::open(&path).is_ok());
}

#[tokio::test]
async fn wrong_size_tile_is_a_failure() {
    async fn small() -> impl IntoResponse {
        encode(&RgbImage::new(128, 128), ImageFormat::Png)
    }
    let app = Router::new().route("/{z}/{x}/{y}", get(small));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    let dir = tempfile::tempdir().unwrap();
    let src = source(&format!("http://{addr}/{{z}}/{{x}}/{{y}}"), dir.path());
    let r = fetch_tiles(&src, &[TileCoord { z: 18, x: 3, y: 4 }]).await.unwrap();
    assert_eq!(r.failed, 1);
    assert!(r.failures[0].1.contains("128x128"));
    assert!(!src.cache_path(TileCoord { z: 18, x: 3, y: 4 }).exists());
}

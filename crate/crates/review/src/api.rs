use std::path::Path;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use germap_core::counting::{area_to_count, Action, CountResult, Detection, Verdict};
use germap_core::scene_labels::tile_path;
use germap_core::{Period, TileCoord};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::state::{ReviewState, VerdictError};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 1000;

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueueItem {
    pub id: String,
    /// `z/x/y`
    pub tile: String,
    pub period: Period,
    pub area_m2: f64,
    pub pixel_count: usize,
    /// Area over the unit ger area, rounded half up, at least 1.
    pub suggested_count: u64,
    pub status: String,
    /// Set only for recounted detections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
}

impl ReviewQueueItem {
    fn new(d: &Detection, verdict: Verdict, unit_area_m2: f64) -> Self {
        ReviewQueueItem {
            id: d.id.clone(),
            tile: d.tile.to_string(),
            period: d.period.clone(),
            area_m2: d.area_m2,
            pixel_count: d.pixel_count,
            suggested_count: area_to_count(d.area_m2, unit_area_m2).unwrap_or(0).max(1),
            status: verdict.status().to_string(),
            count: verdict.count(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct QueueQuery {
    pub period: Option<String>,
    pub status: Option<String>,
    pub limit: Option<usize>,
    /// One-based.
    pub page: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuePage {
    pub page: usize,
    pub limit: usize,
    pub total: usize,
    pub pages: usize,
    pub items: Vec<ReviewQueueItem>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct VerdictRequest {
    pub detection_id: String,
    pub action: Action,
    #[serde(default)]
    pub count: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub recounted: usize,
    pub current_verified_count: u64,
    pub raw_count: u64,
    pub by_period: Vec<CountResult>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PeriodQuery {
    pub period: Option<String>,
}

const STATUSES: [&str; 4] = ["pending", "accepted", "rejected", "recounted"];

/// Builds the API router. When `static_dir` is given, its files are served
/// for every path outside `/api`.
pub fn router(state: ReviewState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/tile/{period}/{z}/{x}/{y}", get(tile))
        .route("/api/detections/{id}", get(detection))
        .route("/api/verdict", post(verdict))
        .route("/api/progress", get(progress))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn known_period(state: &ReviewState, period: &Option<String>) -> ApiResult<Option<Period>> {
    match period {
        None => Ok(None),
        Some(p) => {
            let p = Period::new(p.clone());
            if state.read(|s| s.periods.contains(&p)) {
                Ok(Some(p))
            } else {
                Err(not_found(format!("unknown period {p}")))
            }
        }
    }
}

async fn queue(State(state): State<ReviewState>, Query(q): Query<QueueQuery>) -> ApiResult<Json<QueuePage>> {
    let period = known_period(&state, &q.period)?;
    if let Some(st) = &q.status {
        if !STATUSES.contains(&st.as_str()) {
            return Err(bad_request(format!("status must be one of {}", STATUSES.join(", "))));
        }
    }
    let limit = q.limit.unwrap_or(DEFAULT_PAGE_SIZE);
    if limit == 0 || limit > MAX_PAGE_SIZE {
        return Err(bad_request(format!("limit must be in 1..={MAX_PAGE_SIZE}")));
    }
    let page = q.page.unwrap_or(1);
    if page == 0 {
        return Err(bad_request("page is one-based"));
    }
    let unit = state.count_config().unit_area_m2;
    let mut items: Vec<ReviewQueueItem> = state.read(|s| {
        s.detections
            .iter()
            .filter(|d| period.as_ref().is_none_or(|p| &d.period == p))
            .map(|d| ReviewQueueItem::new(d, s.verdicts[&d.id], unit))
            .filter(|it| q.status.as_ref().is_none_or(|st| &it.status == st))
            .collect()
    });
    items.sort_by(|a, b| b.area_m2.total_cmp(&a.area_m2).then_with(|| a.id.cmp(&b.id)));
    let total = items.len();
    let items = items.into_iter().skip((page - 1) * limit).take(limit).collect();
    Ok(Json(QueuePage {
        page,
        limit,
        total,
        pages: total.div_ceil(limit),
        items,
    }))
}

async fn tile(
    State(state): State<ReviewState>,
    UrlPath((period, z, x, y)): UrlPath<(String, u8, u32, String)>,
) -> ApiResult<Response> {
    let y: u32 = y
        .trim_end_matches(".png")
        .parse()
        .map_err(|_| bad_request(format!("bad tile row {y:?}")))?;
    let coord = TileCoord::new(z, x, y).map_err(|e| bad_request(e.to_string()))?;
    let path = tile_path(&state.tiles, &Period::new(period.clone()), coord);
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(not_found(format!("tile {coord} for period {period} is not cached")))
        }
        Err(e) => Err(internal(e)),
    }
}

async fn detection(State(state): State<ReviewState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<serde_json::Value>> {
    state
        .read(|s| {
            s.index.get(&id).map(|&i| {
                let mut d = s.detections[i].clone();
                d.verdict = s.verdicts[&id];
                d.to_feature()
            })
        })
        .map(Json)
        .ok_or_else(|| not_found(format!("unknown detection {id}")))
}

async fn verdict(State(state): State<ReviewState>, Json(req): Json<VerdictRequest>) -> ApiResult<Json<ReviewQueueItem>> {
    let unit = state.count_config().unit_area_m2;
    let writer = state.clone();
    let result = tokio::task::spawn_blocking(move || writer.record(&req.detection_id, req.action, req.count))
        .await
        .map_err(internal)?;
    match result {
        Ok(d) => Ok(Json(ReviewQueueItem::new(&d, d.verdict, unit))),
        Err(VerdictError::UnknownId(id)) => Err(not_found(format!("unknown detection {id}"))),
        Err(VerdictError::Invalid(why)) => Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, why)),
        Err(VerdictError::Storage(e)) => Err(internal(e)),
    }
}

async fn progress(State(state): State<ReviewState>, Query(q): Query<PeriodQuery>) -> ApiResult<Json<ProgressReport>> {
    let period = known_period(&state, &q.period)?;
    let (mut pending, mut accepted, mut rejected, mut recounted) = (0, 0, 0, 0);
    state.read(|s| {
        for d in s.detections.iter().filter(|d| period.as_ref().is_none_or(|p| &d.period == p)) {
            match s.verdicts[&d.id] {
                Verdict::Pending => pending += 1,
                Verdict::Accepted => accepted += 1,
                Verdict::Rejected => rejected += 1,
                Verdict::Recounted(_) => recounted += 1,
            }
        }
    });
    let by_period: Vec<CountResult> = state
        .counts()
        .map_err(internal)?
        .into_iter()
        .filter(|c| period.as_ref().is_none_or(|p| &c.period == p))
        .collect();
    Ok(Json(ProgressReport {
        pending,
        accepted,
        rejected,
        recounted,
        current_verified_count: by_period.iter().map(|c| c.verified_count).sum(),
        raw_count: by_period.iter().map(|c| c.raw_count).sum(),
        by_period,
    }))
}

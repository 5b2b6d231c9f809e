//! Review service: a small JSON API over a detections file and its verdict
//! log. Verdicts go to the same append-only log that `germap count` reads,
//! and every count the service reports comes from the counting module, so the
//! service and the batch CLI always agree.
//!
//! | Method | Path | Result |
//! |--------|------|--------|
//! | GET | `/api/queue?period=&status=&limit=&page=` | page of queue items |
//! | GET | `/api/tile/{period}/{z}/{x}/{y}` | cached tile, `image/png` |
//! | GET | `/api/detections/{id}` | detection as a GeoJSON Feature |
//! | POST | `/api/verdict` | updated queue item |
//! | GET | `/api/progress?period=` | status tallies and verified count |

mod api;
mod state;

use std::net::SocketAddr;
use std::path::PathBuf;

use germap_core::counting::CountConfig;

pub use api::{router, ProgressReport, QueuePage, QueueQuery, ReviewQueueItem, VerdictRequest};
pub use state::ReviewState;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error(transparent)]
    Core(#[from] germap_core::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

pub type Result<T> = std::result::Result<T, ReviewError>;

#[derive(Debug, Clone)]
pub struct ReviewConfig {
    pub detections: PathBuf,
    pub tiles: PathBuf,
    pub log: PathBuf,
    /// Directory of frontend assets, served at `/`.
    pub static_dir: Option<PathBuf>,
    pub count: CountConfig,
}

/// Loads state (replaying the log) and serves until the process ends.
pub async fn serve(config: ReviewConfig, addr: SocketAddr) -> Result<()> {
    let state = ReviewState::load(&config)?;
    let app = router(state, config.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ReviewError::Bind { addr, source })?;
    tracing::info!(%addr, "review service listening");
    axum::serve(listener, app).await.map_err(ReviewError::Serve)
}

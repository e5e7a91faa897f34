//! JSON-over-HTTP facade for ranking, evidence attribution and auditing.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/rank` | rank all answers for a cloze query; opens a session |
//! | POST | `/explain` | Shapley attribution for one answer in a session |
//! | POST | `/audit` | rescore with evidence slots replaced by NULL |
//! | GET | `/answers/{id}/evidence` | raw top-k hits for one answer |
//! | GET | `/corpus/stats` | index counts, split sizes, index checksum |
//! | GET | `/health` | liveness |
//!
//! Errors are `{"code", "message"}` with status 400, 404, 422 or 503.

pub mod api;
pub mod error;
pub mod sessions;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::routing::{get, post};
use axum::Router;
use r2e_core::pipeline::{ArtifactLayout, InferenceConfig, R2eConfig, R2eSystem};

pub use error::{ApiError, ErrorBody};
pub use sessions::{Session, SessionStore};

/// Shared handler state. Models are immutable; only sessions change.
#[derive(Clone)]
pub struct AppState {
    pub system: Option<Arc<R2eSystem<f64>>>,
    pub defaults: InferenceConfig,
    pub sessions: Arc<SessionStore>,
}

impl AppState {
    pub fn new(system: Option<R2eSystem<f64>>, defaults: InferenceConfig, session_ttl: Duration) -> Self {
        Self {
            system: system.map(Arc::new),
            defaults,
            sessions: Arc::new(SessionStore::new(session_ttl)),
        }
    }

    /// Loads the artifacts named by `cfg`. A missing or unreadable artifact
    /// is logged and the service answers model routes with 503.
    pub fn from_config(cfg: &R2eConfig) -> Self {
        let layout = ArtifactLayout::new(&cfg.paths.artifacts);
        let system = match R2eSystem::load(&layout) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("serving without models: {e}");
                None
            }
        };
        Self::new(system, cfg.inference.clone(), Duration::from_secs(cfg.server.session_ttl_secs))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(api::health))
        .route("/rank", post(api::rank))
        .route("/explain", post(api::explain))
        .route("/audit", post(api::audit))
        .route("/answers/{id}/evidence", get(api::evidence))
        .route("/corpus/stats", get(api::corpus_stats))
        .with_state(state)
}

/// Binds `bind` and serves until the process is stopped.
pub async fn serve(state: AppState, bind: &str) -> std::io::Result<()> {
    let addr: SocketAddr = bind
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bind address `{bind}`: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

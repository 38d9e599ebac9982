//! The HTTP JSON API.
//!
//! Writes go through one `JudgmentLog` behind a mutex; after each write the
//! new aggregates are published as an immutable snapshot that readers clone
//! an `Arc` of.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use stepdiff::features::level_id;
use stepdiff::rng::derive_seed;
use stepdiff::sm::Song;
use thiserror::Error;
use tower_http::services::ServeDir;

use crate::preview::{level_info, LevelInfo};
use crate::score::{score_sources, ScoreReport};
use crate::select::{select_pairs, CandidatePair, SelectError, Source};
use crate::store::{Aggregates, Choice, JudgmentLog, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("none of the selected pairs has charts for both levels")]
    NoPreviews,
    #[error("annotator token must not be empty")]
    MissingAnnotator,
}

/// Opaque id under which a pair is shown to annotators. Level ids carry the
/// chart's position in its file, which hints at its difficulty.
pub fn public_pair_id(pair_id: &str) -> String {
    format!("{:016x}", derive_seed(0, "pair", pair_id))
}

/// The fixed part of a session: sources, selected pairs and their charts.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub sources: Vec<Source>,
    pub pairs: Vec<CandidatePair>,
    public_ids: BTreeMap<String, usize>,
    levels: BTreeMap<String, LevelInfo>,
}

impl Catalog {
    /// Selects up to `budget` contested pairs among levels of `songs`
    /// (given with their song ids). Pairs with a level missing from `songs`
    /// are skipped.
    pub fn build(sources: Vec<Source>, songs: &[(String, Song)], budget: usize) -> Result<Self, ServiceError> {
        let mut levels = BTreeMap::new();
        for (id, song) in songs {
            for (index, level) in song.levels.iter().enumerate() {
                levels.insert(level_id(id, index), level_info(level, song));
            }
        }
        let pairs: Vec<CandidatePair> = select_pairs(&sources, usize::MAX)?
            .into_iter()
            .filter(|p| {
                let shown = levels.contains_key(&p.a) && levels.contains_key(&p.b);
                if !shown {
                    log::warn!("skipping pair {}: chart not found", p.pair_id);
                }
                shown
            })
            .take(budget)
            .collect();
        if pairs.is_empty() {
            return Err(ServiceError::NoPreviews);
        }
        let public_ids = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| (public_pair_id(&p.pair_id), i))
            .collect();
        levels.retain(|id, _| pairs.iter().any(|p| &p.a == id || &p.b == id));
        Ok(Self {
            sources,
            pairs,
            public_ids,
            levels,
        })
    }

    pub fn pair_by_public_id(&self, public_id: &str) -> Option<&CandidatePair> {
        self.public_ids.get(public_id).map(|&i| &self.pairs[i])
    }

    pub fn level(&self, level_id: &str) -> Option<&LevelInfo> {
        self.levels.get(level_id)
    }
}

pub struct AppState {
    catalog: Arc<Catalog>,
    view: RwLock<Arc<Aggregates>>,
    writer: Mutex<JudgmentLog>,
}

impl AppState {
    /// Opens (or creates) the judgment log at `log_path` for `catalog`.
    pub fn open(catalog: Catalog, log_path: &Path) -> Result<Arc<Self>, ServiceError> {
        let log = JudgmentLog::open(log_path, catalog.pairs.iter().map(|p| p.pair_id.clone()).collect())?;
        Ok(Arc::new(Self {
            view: RwLock::new(Arc::new(log.aggregates().clone())),
            catalog: Arc::new(catalog),
            writer: Mutex::new(log),
        }))
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    /// The latest published aggregates.
    pub fn aggregates(&self) -> Arc<Aggregates> {
        self.view.read().expect("view lock poisoned").clone()
    }

    /// The pair `annotator` should judge next: among pairs they have not
    /// judged, the one with the fewest votes, most contested first.
    pub fn next_pair(&self, annotator: &str) -> Option<&CandidatePair> {
        let view = self.aggregates();
        self.catalog
            .pairs
            .iter()
            .filter(|p| !view.judged_by(annotator, &p.pair_id))
            .min_by_key(|p| {
                view.judgments
                    .get(&p.pair_id)
                    .map_or(0, |j| j.votes_a_harder + j.votes_b_harder)
            })
    }

    pub fn submit(&self, request: &JudgmentRequest) -> Result<JudgmentResponse, ServiceError> {
        if request.annotator.is_empty() {
            return Err(ServiceError::MissingAnnotator);
        }
        let pair = self
            .catalog
            .pair_by_public_id(&request.pair_id)
            .ok_or_else(|| StoreError::UnknownPair(request.pair_id.clone()))?;
        let mut log = self.writer.lock().expect("writer lock poisoned");
        let judgment = log.record(&pair.pair_id, request.choice, &request.annotator, &request.nonce)?;
        *self.view.write().expect("view lock poisoned") = Arc::new(log.aggregates().clone());
        Ok(JudgmentResponse {
            pair_id: request.pair_id.clone(),
            votes_a_harder: judgment.votes_a_harder,
            votes_b_harder: judgment.votes_b_harder,
            r_a_harder: judgment.r_a_harder,
        })
    }

    pub fn scores(&self) -> Result<ScoreReport, ServiceError> {
        let view = self.aggregates();
        Ok(score_sources(&self.catalog.sources, &self.catalog.pairs, &view.judgments)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextPair {
    pub pair_id: String,
    pub level_a: LevelInfo,
    pub level_b: LevelInfo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRequest {
    pub pair_id: String,
    pub choice: Choice,
    pub annotator: String,
    pub nonce: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentResponse {
    pub pair_id: String,
    pub votes_a_harder: u64,
    pub votes_b_harder: u64,
    pub r_a_harder: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub pairs: usize,
    pub judged_pairs: usize,
    pub votes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ServiceError::Store(StoreError::UnknownPair(_)) => (StatusCode::NOT_FOUND, "unknown_pair"),
            ServiceError::Store(StoreError::DuplicateSubmission { .. }) => (StatusCode::CONFLICT, "duplicate_submission"),
            ServiceError::Store(StoreError::NoJudgments) => (StatusCode::CONFLICT, "no_judgments"),
            ServiceError::MissingAnnotator => (StatusCode::BAD_REQUEST, "missing_annotator"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = ErrorBody {
            error: kind.to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    #[serde(default)]
    annotator: String,
}

async fn next_pair(State(state): State<Arc<AppState>>, Query(query): Query<NextQuery>) -> Result<Response, ServiceError> {
    if query.annotator.is_empty() {
        return Err(ServiceError::MissingAnnotator);
    }
    let Some(pair) = state.next_pair(&query.annotator) else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let catalog = state.catalog();
    let level = |id: &str| catalog.level(id).cloned().expect("catalog pairs have previews");
    Ok(Json(NextPair {
        pair_id: public_pair_id(&pair.pair_id),
        level_a: level(&pair.a),
        level_b: level(&pair.b),
    })
    .into_response())
}

async fn submit(
    State(state): State<Arc<AppState>>,
    Json(request): Json<JudgmentRequest>,
) -> Result<Json<JudgmentResponse>, ServiceError> {
    tokio::task::spawn_blocking(move || state.submit(&request))
        .await
        .expect("judgment writer panicked")
        .map(Json)
}

async fn scores(State(state): State<Arc<AppState>>) -> Result<Json<ScoreReport>, ServiceError> {
    state.scores().map(Json)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let view = state.aggregates();
    Json(Health {
        status: "ok".to_string(),
        pairs: state.catalog().pairs.len(),
        judged_pairs: view.judgments.len(),
        votes: view.events,
    })
}

/// The API routes, plus static files from `static_dir` for every other path.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/pairs/next", get(next_pair))
        .route("/api/judgments", post(submit))
        .route("/api/scores", get(scores))
        .route("/api/health", get(health))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves the API on `addr` until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}

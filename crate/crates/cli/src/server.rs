//! HTTP label-assist service over a finished pipeline run.
//!
//! ```text
//! GET  /api/tracklets/next?n=4   next unlabelled tracklet with Top-n candidates (204 when done)
//! GET  /api/identities           enrolled identities with exemplar URLs
//! POST /api/labels               append a LabelRecord
//! GET  /api/metrics?n=4          label count and suggestion hit-rates
//! GET  /crops/...                crop images from the run's data directory
//! GET  /...                      UI bundle, when one is configured
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::Context;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use herdid_core::pipeline::{load_suggestions, Suggestions, TrackletSuggestion};
use herdid_core::IdentityId;
use serde::{Deserialize, Serialize};
use tower_http::services::{ServeDir, ServeFile};

use crate::labels::{LabelRecord, LabelStore};

pub const DEFAULT_N: usize = 4;
pub const DEFAULT_PORT: u16 = 8080;
const METRIC_NS: [usize; 5] = [1, 2, 4, 8, 16];

pub struct AppState {
    run_dir: PathBuf,
    suggestions: Suggestions,
    index: HashMap<u64, usize>,
    enrolled: BTreeSet<IdentityId>,
    exemplars: HashMap<IdentityId, Vec<String>>,
    labels: Mutex<LabelStore>,
}

impl AppState {
    /// Loads the suggestions of the run in `run_dir` and replays the label
    /// file at `labels_path`.
    pub fn load(run_dir: &Path, labels_path: &Path) -> anyhow::Result<Self> {
        let suggestions = load_suggestions(run_dir)
            .with_context(|| format!("{} does not hold a finished run", run_dir.display()))?;
        let index = suggestions
            .tracklets
            .iter()
            .enumerate()
            .map(|(i, t)| (t.tracklet_id, i))
            .collect();
        let enrolled = suggestions.identities.iter().map(|i| i.identity).collect();
        let exemplars = suggestions
            .identities
            .iter()
            .map(|i| (i.identity, i.exemplars.iter().map(|p| crop_url(p)).collect()))
            .collect();
        Ok(Self {
            run_dir: run_dir.to_path_buf(),
            suggestions,
            index,
            enrolled,
            exemplars,
            labels: Mutex::new(LabelStore::open(labels_path)?),
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    fn store(&self) -> std::sync::MutexGuard<'_, LabelStore> {
        // A panic while holding the lock cannot leave a half-written record
        // in memory, so a poisoned lock is still usable.
        self.labels.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn candidates(&self, t: &TrackletSuggestion, n: usize) -> Vec<CandidateView> {
        t.candidates
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, c)| CandidateView {
                rank: i + 1,
                identity: c.identity,
                confidence: c.confidence,
                exemplars: self.exemplars.get(&c.identity).cloned().unwrap_or_default(),
            })
            .collect()
    }
}

/// Run artifacts live under `data/`, which is served at `/crops`.
fn crop_url(rel: &str) -> String {
    format!("/crops/{}", rel.strip_prefix("data/").unwrap_or(rel))
}

pub fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let crops = ServeDir::new(state.run_dir.join("data"));
    let mut app = Router::new()
        .route("/api/tracklets/next", get(next_tracklet))
        .route("/api/identities", get(identities))
        .route("/api/labels", post(post_label).get(list_labels))
        .route("/api/metrics", get(metrics))
        .nest_service("/crops", crops)
        .with_state(state);
    if let Some(ui) = ui_dir {
        app = app.fallback_service(ServeDir::new(ui).fallback(ServeFile::new(ui.join("index.html"))));
    }
    app
}

pub async fn serve(state: Arc<AppState>, ui_dir: Option<PathBuf>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let app = router(state, ui_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn unprocessable(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::UNPROCESSABLE_ENTITY, msg.into())
}

#[derive(Debug, Deserialize)]
pub struct NQuery {
    n: Option<usize>,
}

impl NQuery {
    fn n(&self) -> Result<usize, ApiError> {
        match self.n {
            Some(0) => Err(ApiError(StatusCode::BAD_REQUEST, "n must be >= 1".into())),
            Some(n) => Ok(n),
            None => Ok(DEFAULT_N),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub rank: usize,
    pub identity: IdentityId,
    pub confidence: f64,
    pub exemplars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTracklet {
    pub tracklet_id: u64,
    pub video_id: String,
    pub crops: Vec<String>,
    pub n: usize,
    pub candidates: Vec<CandidateView>,
    /// Candidates available if `n` is expanded.
    pub total_candidates: usize,
    /// Unlabelled tracklets including this one.
    pub remaining: usize,
}

async fn next_tracklet(State(st): State<Arc<AppState>>, Query(q): Query<NQuery>) -> Result<Response, ApiError> {
    let n = q.n()?;
    let store = st.store();
    let mut open = st.suggestions.tracklets.iter().filter(|t| !store.is_labelled(t.tracklet_id));
    let Some(t) = open.next() else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let body = NextTracklet {
        tracklet_id: t.tracklet_id,
        video_id: t.video_id.clone(),
        crops: t.crops.iter().map(|p| crop_url(p)).collect(),
        n,
        candidates: st.candidates(t, n),
        total_candidates: t.candidates.len(),
        remaining: 1 + open.count(),
    };
    Ok(Json(body).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityView {
    pub identity: IdentityId,
    pub exemplars: Vec<String>,
}

async fn identities(State(st): State<Arc<AppState>>) -> Json<Vec<IdentityView>> {
    Json(
        st.enrolled
            .iter()
            .map(|&identity| IdentityView {
                identity,
                exemplars: st.exemplars.get(&identity).cloned().unwrap_or_default(),
            })
            .collect(),
    )
}

async fn post_label(
    State(st): State<Arc<AppState>>,
    Json(rec): Json<LabelRecord>,
) -> Result<(StatusCode, Json<LabelRecord>), ApiError> {
    let Some(&i) = st.index.get(&rec.tracklet_id) else {
        return Err(unprocessable(format!("unknown tracklet {}", rec.tracklet_id)));
    };
    let t = &st.suggestions.tracklets[i];
    match (rec.identity, rec.rank.position()) {
        (Some(id), _) if !st.enrolled.contains(&id) => {
            return Err(unprocessable(format!("unknown identity {id}")));
        }
        (None, Some(_)) => return Err(unprocessable("a ranked label needs an identity")),
        (Some(id), Some(r)) => {
            let listed = t.candidates.get(r as usize - 1).map(|c| c.identity);
            if listed != Some(id) {
                return Err(unprocessable(format!("identity {id} is not candidate {r} of tracklet {}", t.tracklet_id)));
            }
        }
        _ => {}
    }
    let mut store = st.store();
    if store.is_labelled(rec.tracklet_id) {
        return Err(ApiError(StatusCode::CONFLICT, format!("tracklet {} is already labelled", rec.tracklet_id)));
    }
    store
        .append(rec.clone())
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok((StatusCode::CREATED, Json(rec)))
}

async fn list_labels(State(st): State<Arc<AppState>>) -> Json<Vec<LabelRecord>> {
    Json(st.store().records().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub labels: usize,
    pub tracklets: usize,
    pub remaining: usize,
    pub n: usize,
    /// Share of labels whose rank is at most `n`; absent before any label.
    pub hit_rate: Option<f64>,
    pub hit_rates: BTreeMap<String, f64>,
    pub not_in_list: usize,
}

async fn metrics(State(st): State<Arc<AppState>>, Query(q): Query<NQuery>) -> Result<Json<LabelMetrics>, ApiError> {
    let n = q.n()?;
    let store = st.store();
    let labels = store.records().len();
    let hit_rates = METRIC_NS
        .iter()
        .filter_map(|&k| store.hit_rate(k as u32).map(|h| (k.to_string(), h)))
        .collect();
    Ok(Json(LabelMetrics {
        labels,
        tracklets: st.suggestions.tracklets.len(),
        remaining: st.suggestions.tracklets.len() - labels,
        n,
        hit_rate: store.hit_rate(n as u32),
        hit_rates,
        not_in_list: store.records().iter().filter(|r| r.rank.position().is_none()).count(),
    }))
}

//! JSON API over one project. Reads share a lock; every mutation takes the
//! project's single writer.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use contraspec_core::learner::{advance, AdvanceSummary};
use contraspec_core::store::Project;
use contraspec_core::taxonomy::ConsistencyVerdict;
use contraspec_core::Error;
use serde::{Deserialize, Serialize};

use crate::actions::{self, TriageStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pending: Option<usize>,
    #[serde(skip)]
    pub http_status: u16,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Self {
            code: "bad_request".into(),
            message: message.into(),
            pending: None,
            http_status: 400,
        }
    }
}

pub fn http_status(code: &str) -> u16 {
    match code {
        "unknown_pair" => 404,
        "wrong_phase" | "pair_not_sampled" | "annotation_incomplete" => 409,
        "backend_unavailable" => 503,
        _ => 400,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let pending = match e {
            Error::AnnotationIncomplete { pending, .. } => Some(pending),
            _ => None,
        };
        let code = e.code();
        Self {
            code: code.into(),
            message: e.to_string(),
            pending,
            http_status: http_status(code),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::BAD_REQUEST);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub struct AppState {
    project: RwLock<Project>,
}

type Shared = Arc<AppState>;

impl AppState {
    fn read<T>(
        &self,
        f: impl FnOnce(&Project) -> contraspec_core::Result<T>,
    ) -> Result<T, ApiError> {
        let project = self.project.read().unwrap_or_else(|p| p.into_inner());
        Ok(f(&project)?)
    }

    fn write<T>(
        &self,
        f: impl FnOnce(&mut Project) -> contraspec_core::Result<T>,
    ) -> Result<T, ApiError> {
        let mut project = self.project.write().unwrap_or_else(|p| p.into_inner());
        Ok(f(&mut project)?)
    }
}

pub fn router(project: Project) -> Router {
    let state = Arc::new(AppState {
        project: RwLock::new(project),
    });
    Router::new()
        .route("/api/project", get(get_project))
        .route("/api/queue", get(get_queue))
        .route("/api/annotations", post(post_annotation))
        .route("/api/phase/advance", post(post_advance))
        .route("/api/results", get(get_results))
        .route("/api/triage", post(post_triage))
        .route("/api/metrics", get(get_metrics))
        .fallback(|| async {
            ApiError {
                http_status: 404,
                ..ApiError::bad_request("no such endpoint")
            }
        })
        .with_state(state)
}

async fn get_project(State(app): State<Shared>) -> ApiResult<actions::ProjectSummary> {
    app.read(|p| Ok(actions::project_summary(p))).map(Json)
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    phase: Option<u32>,
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

async fn get_queue(
    State(app): State<Shared>,
    query: Result<Query<QueueQuery>, QueryRejection>,
) -> ApiResult<Vec<actions::QueueItem>> {
    let Query(q) = query?;
    app.read(|p| actions::queue(p, q.phase, q.offset, q.limit))
        .map(Json)
}

#[derive(Debug, Deserialize)]
struct AnnotationBody {
    pair_id: String,
    case: u8,
    #[serde(default = "default_annotator")]
    annotator: String,
}

fn default_annotator() -> String {
    "anonymous".into()
}

async fn post_annotation(
    State(app): State<Shared>,
    body: Result<Json<AnnotationBody>, JsonRejection>,
) -> ApiResult<actions::AnnotationAck> {
    let Json(b) = body?;
    app.write(|p| actions::annotate(p, &b.pair_id, b.case, &b.annotator))
        .map(Json)
}

/// Runs training on a blocking thread; the request returns when the phase
/// has completed or halted for annotation.
async fn post_advance(State(app): State<Shared>) -> ApiResult<AdvanceSummary> {
    tokio::task::spawn_blocking(move || app.write(advance))
        .await
        .map_err(|e| ApiError::bad_request(format!("phase job failed: {e}")))?
        .map(Json)
}

#[derive(Debug, Deserialize)]
struct ResultsQuery {
    verdict: Option<String>,
    min_confidence: Option<f64>,
}

async fn get_results(
    State(app): State<Shared>,
    query: Result<Query<ResultsQuery>, QueryRejection>,
) -> ApiResult<Vec<actions::ResultRow>> {
    let Query(q) = query?;
    let verdict = q
        .verdict
        .as_deref()
        .map(str::parse::<ConsistencyVerdict>)
        .transpose()
        .map_err(ApiError::bad_request)?;
    let filter = actions::ResultFilter {
        verdict,
        min_confidence: q.min_confidence,
    };
    app.read(|p| actions::results(p, &filter)).map(Json)
}

#[derive(Debug, Deserialize)]
struct TriageBody {
    pair_id: String,
    status: String,
}

async fn post_triage(
    State(app): State<Shared>,
    body: Result<Json<TriageBody>, JsonRejection>,
) -> ApiResult<actions::TriageAck> {
    let Json(b) = body?;
    let status = TriageStatus::parse(&b.status).ok_or_else(|| {
        ApiError::bad_request(format!(
            "status must be confirmed or context_fp, got `{}`",
            b.status
        ))
    })?;
    app.write(|p| actions::triage(p, &b.pair_id, status))
        .map(Json)
}

#[derive(Debug, Deserialize)]
struct MetricsQuery {
    phase: Option<u32>,
}

async fn get_metrics(
    State(app): State<Shared>,
    query: Result<Query<MetricsQuery>, QueryRejection>,
) -> ApiResult<actions::PhaseMetrics> {
    let Query(q) = query?;
    app.read(|p| actions::metrics(p, q.phase)).map(Json)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(project: Project, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "serving {} on http://{}",
        project.root().display(),
        listener.local_addr()?
    );
    axum::serve(listener, router(project)).await
}

//! HTTP routes over a shared [`Service`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::service::{CloseRequest, CreateSession, FlagRequest, Resolve, Service, ServiceError, SubmitLabel};
use crate::state::StateError;

pub type Shared = Arc<Mutex<Service>>;

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::State(StateError::NotFound(_)) => StatusCode::NOT_FOUND,
            ServiceError::State(StateError::Conflict(_)) => StatusCode::CONFLICT,
            ServiceError::State(StateError::Forbidden(_)) => StatusCode::FORBIDDEN,
            ServiceError::State(StateError::Validation(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (
            status,
            Json(ErrorBody {
                error: self.0.to_string(),
            }),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn lock(shared: &Shared) -> MutexGuard<'_, Service> {
    // A panic mid-request cannot leave a half-applied event: state only
    // changes after the append succeeded.
    shared.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: String,
}

#[derive(Debug, Deserialize)]
struct BatchQuery {
    #[serde(default)]
    batch: Option<usize>,
}

async fn list_frames(State(s): State<Shared>) -> Json<Vec<String>> {
    Json(lock(&s).frames().ids().map(str::to_owned).collect())
}

async fn create_session(State(s): State<Shared>, Json(req): Json<CreateSession>) -> Result<Response, ApiError> {
    let created = lock(&s).create_session(req)?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn summary(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<crate::service::SessionSummary> {
    Ok(Json(lock(&s).summary(&id)?))
}

async fn next_item(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<AnnotatorQuery>,
) -> ApiResult<crate::service::Next> {
    Ok(Json(lock(&s).next_item(&id, &q.annotator)?))
}

async fn submit_label(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<SubmitLabel>,
) -> ApiResult<crate::service::Ack> {
    Ok(Json(lock(&s).submit_label(&id, req)?))
}

async fn agreement(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<BatchQuery>,
) -> ApiResult<crate::agreement::AgreementReport> {
    let svc = lock(&s);
    let batch = match q.batch {
        Some(b) => b,
        None => svc.state().session(&id).map_err(ServiceError::from)?.calibration_size,
    };
    Ok(Json(svc.agreement(&id, batch)?))
}

async fn adjudications(
    State(s): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<Vec<crate::service::AdjudicationView>> {
    Ok(Json(lock(&s).adjudications(&id)?))
}

async fn resolve(
    State(s): State<Shared>,
    Path((id, item)): Path<(String, String)>,
    Json(req): Json<Resolve>,
) -> ApiResult<crate::service::Ack> {
    Ok(Json(lock(&s).resolve(&id, &item, req)?))
}

async fn flag(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<FlagRequest>,
) -> ApiResult<crate::service::Ack> {
    Ok(Json(lock(&s).flag(&id, req)?))
}

async fn final_labels(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<AnnotatorQuery>,
) -> ApiResult<Vec<revcorpus::evaluation::BlindedRecord>> {
    Ok(Json(lock(&s).final_labels(&id, &q.annotator)?))
}

async fn close(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<CloseRequest>,
) -> ApiResult<crate::service::Ack> {
    Ok(Json(lock(&s).close(&id, req)?))
}

/// One blinded record per line.
async fn export(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let records = lock(&s).export(&id)?;
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r).expect("record serializes"));
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub fn router(shared: Shared, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/frames", get(list_frames))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(summary))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/sessions/{id}/agreement", get(agreement))
        .route("/sessions/{id}/adjudications", get(adjudications))
        .route("/sessions/{id}/adjudications/{item}/resolve", post(resolve))
        .route("/sessions/{id}/review", get(final_labels))
        .route("/sessions/{id}/review/flags", post(flag))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/export", get(export))
        .with_state(shared);
    match ui_dir {
        Some(dir) => api
            .route("/", get(|| async { Redirect::temporary("/ui/") }))
            .nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api,
    }
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, service: Service, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let app = router(Arc::new(Mutex::new(service)), ui_dir);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

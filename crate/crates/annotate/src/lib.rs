//! HTTP front end for [`longpref::annotation::AnnotationService`].
//!
//! Every JSON body carries `schema_version`. When a shared secret is set,
//! `/api/*` requests must send it in the `X-Annotation-Secret` header.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use longpref::annotation::{AnnotationError, AnnotationService, HumanJudgment, SCHEMA_VERSION};
use longpref::eval::EvalError;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub const SECRET_HEADER: &str = "x-annotation-secret";

const PLACEHOLDER_PAGE: &str = include_str!("../static/index.html");

#[derive(Serialize)]
struct Envelope<T> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

fn ok<T: Serialize>(body: T) -> Json<Envelope<T>> {
    Json(Envelope { schema_version: SCHEMA_VERSION, body })
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    fields: Vec<String>,
}

pub struct ApiError(AnnotationError);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let message = self.0.to_string();
        let (status, error, fields) = match &self.0 {
            AnnotationError::UnknownAnnotator(_) => (StatusCode::FORBIDDEN, "unknown_annotator", vec![]),
            AnnotationError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task", vec![]),
            AnnotationError::Conflict(_) => (StatusCode::CONFLICT, "conflict", vec![]),
            AnnotationError::MissingMetrics { missing } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "missing_metrics", missing.iter().map(|m| m.to_string()).collect())
            }
            AnnotationError::UnexpectedMetrics { unexpected } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                "unexpected_metrics",
                unexpected.iter().map(|m| m.to_string()).collect(),
            ),
            AnnotationError::Eval(EvalError::Empty) => (StatusCode::CONFLICT, "no_judged_tasks", vec![]),
            _ => {
                log::error!("annotation request failed: {message}");
                (StatusCode::INTERNAL_SERVER_ERROR, "internal", vec![])
            }
        };
        (status, ok(ErrorBody { error, message, fields })).into_response()
    }
}

fn bad_request(status: StatusCode, error: &'static str, message: String) -> Response {
    (status, ok(ErrorBody { error, message, fields: vec![] })).into_response()
}

#[derive(Clone)]
struct AppState {
    service: Arc<AnnotationService>,
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn next_task(State(app): State<AppState>, Query(q): Query<NextQuery>) -> Result<impl IntoResponse, ApiError> {
    Ok(ok(app.service.next_task(&q.annotator)?))
}

#[derive(Serialize)]
struct Accepted {
    accepted: bool,
    task_id: String,
}

async fn submit(State(app): State<AppState>, Json(judgment): Json<HumanJudgment>) -> Result<Response, ApiError> {
    let task_id = judgment.task_id.clone();
    let service = app.service.clone();
    tokio::task::spawn_blocking(move || service.submit_judgment(judgment))
        .await
        .map_err(|e| AnnotationError::Io(std::io::Error::other(e)))??;
    Ok((StatusCode::CREATED, ok(Accepted { accepted: true, task_id })).into_response())
}

async fn agreement(State(app): State<AppState>) -> Result<impl IntoResponse, ApiError> {
    Ok(ok(app.service.agreement_summary()?))
}

async fn progress(State(app): State<AppState>) -> impl IntoResponse {
    ok(app.service.progress())
}

async fn check_secret(secret: Arc<String>, request: Request, next: Next) -> Response {
    let given = request.headers().get(SECRET_HEADER).map(HeaderValue::as_bytes);
    if given == Some(secret.as_bytes()) {
        next.run(request).await
    } else {
        bad_request(StatusCode::UNAUTHORIZED, "unauthorized", format!("missing or wrong {SECRET_HEADER} header"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Required value of the secret header; `None` disables the check.
    pub secret: Option<String>,
    /// Directory holding the built UI bundle, served at `/`.
    pub static_dir: Option<PathBuf>,
}

pub fn router(service: Arc<AnnotationService>, options: &ServerOptions) -> Router {
    let mut api = Router::new()
        .route("/tasks/next", get(next_task))
        .route("/judgments", post(submit))
        .route("/agreement", get(agreement))
        .route("/progress", get(progress))
        .with_state(AppState { service });
    if let Some(secret) = &options.secret {
        let secret = Arc::new(secret.clone());
        api = api.layer(middleware::from_fn(move |req, next| check_secret(secret.clone(), req, next)));
    }
    let app = Router::new().nest("/api", api);
    match &options.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER_PAGE) })),
    }
}

/// Serves until ctrl-c.
pub async fn serve(service: Arc<AnnotationService>, options: &ServerOptions, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service, options))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

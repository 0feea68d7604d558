//! Review HTTP API under `/api/v1`.
//!
//! ```text
//! GET  /api/v1/samples?state=pending&task=&page=0&page_size=20
//! POST /api/v1/decisions   {sample_id, action, edited_output?, reviewer}
//! GET  /api/v1/stats
//! GET  /api/v1/export?states=accepted,edited
//! ```
//!
//! Errors are `{"error": {"code", "message"}}`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use forge_core::instruct::{export_lines, ReviewState, TaskKind};
use forge_core::review::{DecisionRequest, ReviewError, ReviewService};

pub const TOKEN_ENV: &str = "FORGE_REVIEW_TOKEN";
const DEFAULT_PAGE_SIZE: usize = 20;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            ReviewError::Validation(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.to_string()),
            ReviewError::Storage(_) => {
                tracing::error!(error = %e, "review storage failure");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error": {"code": self.code, "message": self.message}})),
        )
            .into_response()
    }
}

#[derive(Clone)]
struct AppState {
    service: Arc<ReviewService>,
    token: Option<Arc<str>>,
}

/// Options for [`router`].
#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Required bearer token; `None` disables auth.
    pub token: Option<String>,
    /// Directory of static UI assets served outside `/api`.
    pub ui_dir: Option<PathBuf>,
}

pub fn router(service: Arc<ReviewService>, options: ServerOptions) -> Router {
    let state = AppState {
        service,
        token: options.token.filter(|t| !t.is_empty()).map(Arc::from),
    };
    let api = Router::new()
        .route("/samples", get(list_samples))
        .route("/decisions", post(submit_decision))
        .route("/stats", get(stats))
        .route("/export", get(export))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    let app = Router::new().nest("/api/v1", api);
    match options.ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app,
    }
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(expected.as_ref()) {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or invalid bearer token",
            )
            .into_response();
        }
    }
    next.run(req).await
}

#[derive(Debug, Deserialize)]
struct ListParams {
    state: Option<String>,
    task: Option<String>,
    page: Option<String>,
    page_size: Option<String>,
}

fn parse_number(name: &str, value: Option<&str>, default: usize) -> Result<usize, ApiError> {
    match value.filter(|v| !v.is_empty()) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError::bad_request(format!("{name} must be a non-negative integer, got {v:?}"))),
    }
}

async fn list_samples(State(state): State<AppState>, Query(params): Query<ListParams>) -> Result<Response, ApiError> {
    let review_state = match params.state.as_deref().filter(|s| !s.is_empty()) {
        None => ReviewState::Pending,
        Some(s) => s
            .parse()
            .map_err(|e: forge_core::Error| ApiError::bad_request(e.to_string()))?,
    };
    let task: Option<TaskKind> = match params.task.as_deref().filter(|s| !s.is_empty()) {
        None => None,
        Some(s) => Some(
            s.parse()
                .map_err(|e: forge_core::Error| ApiError::bad_request(e.to_string()))?,
        ),
    };
    let page = parse_number("page", params.page.as_deref(), 0)?;
    let page_size = parse_number("page_size", params.page_size.as_deref(), DEFAULT_PAGE_SIZE)?;
    let listed = state
        .service
        .read(|store| store.list(review_state, task, page, page_size))
        .map_err(|e| match e {
            ReviewError::Validation(m) => ApiError::bad_request(m),
            other => other.into(),
        })?;
    Ok(Json(listed).into_response())
}

async fn submit_decision(
    State(state): State<AppState>,
    payload: Result<Json<DecisionRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = payload.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let decided_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let service = state.service.clone();
    // The log append syncs to disk; keep it off the async workers.
    let outcome = tokio::task::spawn_blocking(move || service.submit(req, &decided_at))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(outcome).into_response())
}

async fn stats(State(state): State<AppState>) -> Response {
    let stats = state.service.stats();
    Json(json!({
        "pending": stats.pending,
        "accepted": stats.accepted,
        "edited": stats.edited,
        "rejected": stats.rejected,
        "total": stats.total(),
    }))
    .into_response()
}

#[derive(Debug, Deserialize)]
struct ExportParams {
    states: Option<String>,
}

async fn export(State(state): State<AppState>, Query(params): Query<ExportParams>) -> Result<Response, ApiError> {
    let include = ReviewState::parse_set(params.states.as_deref().unwrap_or("accepted,edited"))
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (body, count) = state
        .service
        .read(|store| {
            let samples: Vec<_> = store.samples().cloned().collect();
            export_lines(&samples, &include)
        })
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "export", e.to_string()))?;
    let mut resp = body.into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
    headers.insert("x-sample-count", HeaderValue::from(count));
    Ok(resp)
}

/// Binds and serves until ctrl-c.
pub async fn serve(addr: std::net::SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

//! HTTP routes.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

use crate::error::{ServiceError, ServiceResult};
use crate::events::Action;
use crate::state::{ExportVariant, QueueItem, QueueStrategy, Service};

pub const API_TOKEN_ENV: &str = "DIVGEN_API_TOKEN";
pub const UI_ORIGIN_ENV: &str = "DIVGEN_UI_ORIGIN";

#[derive(Clone, Debug, Default)]
pub struct ApiOptions {
    /// Required as `Authorization: Bearer …` on writes when set.
    pub api_token: Option<String>,
    /// Allowed CORS origin; any origin when unset.
    pub ui_origin: Option<String>,
    /// Static files served at `/`.
    pub ui_dir: Option<PathBuf>,
}

impl ApiOptions {
    pub fn from_env() -> Self {
        let var = |k| std::env::var(k).ok().filter(|v: &String| !v.is_empty());
        Self {
            api_token: var(API_TOKEN_ENV),
            ui_origin: var(UI_ORIGIN_ENV),
            ui_dir: None,
        }
    }
}

#[derive(Clone)]
struct AppState {
    service: Arc<Service>,
    token: Option<String>,
}

impl AppState {
    fn authorize(&self, headers: &HeaderMap) -> ServiceResult<()> {
        let Some(token) = &self.token else {
            return Ok(());
        };
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given == Some(token.as_str()) {
            Ok(())
        } else {
            Err(ServiceError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong API token"))
        }
    }
}

pub fn router(service: Arc<Service>, options: &ApiOptions) -> Router {
    let state = AppState {
        service,
        token: options.api_token.clone(),
    };
    let origin = match &options.ui_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => AllowOrigin::exact(v),
            Err(_) => {
                log::warn!("ignoring invalid UI origin `{o}`");
                AllowOrigin::from(Any)
            }
        },
        None => AllowOrigin::from(Any),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION]);

    let api = Router::new()
        .route("/tasks", get(list_tasks))
        .route("/tasks/{task}/queue", get(queue))
        .route("/tasks/{task}/annotations", post(annotate))
        .route("/tasks/{task}/proxies/retrain", post(retrain))
        .route("/tasks/{task}/proxies/status", get(proxy_status))
        .route("/tasks/{task}/metrics", get(metrics))
        .route("/tasks/{task}/export", get(export))
        .with_state(state);
    let app = match &options.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors)
}

async fn list_tasks(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.service.summaries())
}

#[derive(Deserialize)]
struct QueueParams {
    n: Option<usize>,
    #[serde(default)]
    strategy: QueueStrategy,
}

#[derive(Serialize)]
struct QueueResponse {
    task: String,
    strategy: QueueStrategy,
    version: u64,
    items: Vec<QueueItem>,
}

async fn queue(
    State(app): State<AppState>,
    Path(task): Path<String>,
    params: Result<Query<QueueParams>, axum::extract::rejection::QueryRejection>,
) -> ServiceResult<Json<QueueResponse>> {
    let Query(params) = params.map_err(|e| ServiceError::bad_request(e.body_text()))?;
    let handle = app.service.task(&task)?;
    let state = handle.read();
    let n = params.n.unwrap_or(divgen::curation::INSPECTION_BUDGETS[0]);
    Ok(Json(QueueResponse {
        task,
        strategy: params.strategy,
        version: state.version(),
        items: state.queue(n, params.strategy, handle.config().w)?,
    }))
}

#[derive(Deserialize)]
struct AnnotationRequest {
    instance_id: String,
    #[serde(flatten)]
    action: Action,
    #[serde(default = "anonymous")]
    annotator: String,
}

fn anonymous() -> String {
    "anonymous".to_string()
}

async fn annotate(
    State(app): State<AppState>,
    Path(task): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ServiceResult<Response> {
    app.authorize(&headers)?;
    let req: AnnotationRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::bad_request(format!("annotation body: {e}")))?;
    let handle = app.service.task(&task)?;
    let ack = tokio::task::spawn_blocking(move || handle.annotate(&req.instance_id, req.action, &req.annotator))
        .await
        .map_err(|e| ServiceError::internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

#[derive(Deserialize)]
struct RetrainParams {
    #[serde(default)]
    wait: bool,
}

async fn retrain(
    State(app): State<AppState>,
    Path(task): Path<String>,
    Query(params): Query<RetrainParams>,
    headers: HeaderMap,
) -> ServiceResult<Response> {
    app.authorize(&headers)?;
    let handle = app.service.task(&task)?;
    let job_id = handle
        .begin_retrain()
        .ok_or_else(|| ServiceError::conflict("job_running", "a retraining job is already running"))?;
    let worker = handle.clone();
    let job = tokio::task::spawn_blocking(move || worker.run_retrain(job_id));
    if params.wait {
        job.await.map_err(|e| ServiceError::internal(e.to_string()))??;
        let status = handle.read().job().clone();
        return Ok(Json(status).into_response());
    }
    let status = handle.read().job().clone();
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn proxy_status(State(app): State<AppState>, Path(task): Path<String>) -> ServiceResult<Response> {
    let handle = app.service.task(&task)?;
    let status = handle.read().job().clone();
    Ok(Json(status).into_response())
}

async fn metrics(State(app): State<AppState>, Path(task): Path<String>) -> ServiceResult<Response> {
    let handle = app.service.task(&task)?;
    let report = handle.read().metrics(handle.embedder_id());
    Ok(Json(report).into_response())
}

#[derive(Deserialize)]
struct ExportParams {
    variant: Option<ExportVariant>,
}

async fn export(
    State(app): State<AppState>,
    Path(task): Path<String>,
    params: Result<Query<ExportParams>, axum::extract::rejection::QueryRejection>,
) -> ServiceResult<Response> {
    let Query(params) = params.map_err(|e| ServiceError::bad_request(e.body_text()))?;
    let handle = app.service.task(&task)?;
    let dataset = handle
        .read()
        .export(params.variant.unwrap_or(ExportVariant::Raw), handle.config().w)?;
    let body = dataset.to_jsonl()?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

/// Serves `router` on `listener` until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

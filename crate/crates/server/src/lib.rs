//! HTTP front end over the diagnostics engine.

mod config;

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use autotsg_core::diagnostics::{
    Engine, ExecuteError, ExecuteRequest, FeedbackError, FeedbackRecord, IncidentPayload, RESPONSE_SCHEMA,
};
use autotsg_core::scheduler::Scheduler;
use autotsg_core::Audience;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

pub use config::{ConfigError, RankerSpec, ServiceConfig};

pub struct AppState {
    pub engine: Engine,
    pub scheduler: Mutex<Scheduler>,
}

impl AppState {
    pub fn new(engine: Engine, scheduler: Scheduler) -> Arc<Self> {
        Arc::new(AppState {
            engine,
            scheduler: Mutex::new(scheduler),
        })
    }
}

type Shared = State<Arc<AppState>>;

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

type Body<T> = Result<Json<T>, JsonRejection>;

fn reject(r: JsonRejection) -> Response {
    error(r.status(), r.body_text())
}

#[derive(Debug, Deserialize)]
struct ExtractBody {
    #[serde(default)]
    product: Option<String>,
    audience: Audience,
    incident: IncidentPayload,
}

#[derive(Debug, Deserialize)]
struct ValidateBody {
    yaml: String,
    #[serde(default)]
    id: Option<String>,
}

async fn extract(State(s): Shared, body: Body<ExtractBody>) -> Response {
    let Json(b) = match body {
        Ok(b) => b,
        Err(r) => return reject(r),
    };
    let Some(product) = b.product.or(b.incident.product.clone()) else {
        return error(StatusCode::BAD_REQUEST, "product is required");
    };
    match s.engine.extract(&product, b.audience, &b.incident) {
        Ok(x) => Json(x).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, e.to_string()),
    }
}

async fn execute(State(s): Shared, body: Body<ExecuteRequest>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(r) => return reject(r),
    };
    let run = tokio::task::spawn_blocking(move || s.engine.execute(&req)).await;
    match run {
        Ok(Ok(r)) => Json(r).into_response(),
        Ok(Err(ExecuteError::InvalidTsg { index, report })) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({ "error": "invalid injected document", "index": index, "report": report })),
        )
            .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn feedback(State(s): Shared, body: Body<FeedbackRecord>) -> Response {
    let Json(r) = match body {
        Ok(b) => b,
        Err(r) => return reject(r),
    };
    match s.engine.submit_feedback(r) {
        Ok(r) => Json(r).into_response(),
        Err(e @ FeedbackError::UnknownTsg(_)) => error(StatusCode::NOT_FOUND, e.to_string()),
    }
}

async fn validate(State(s): Shared, body: Body<ValidateBody>) -> Response {
    let Json(b) = match body {
        Ok(b) => b,
        Err(r) => return reject(r),
    };
    let report = s.engine.validate(&b.yaml, b.id.as_deref().unwrap_or("draft"));
    let status = if report.is_ok() { StatusCode::OK } else { StatusCode::UNPROCESSABLE_ENTITY };
    (status, Json(json!({ "ok": report.is_ok(), "report": report }))).into_response()
}

async fn list_tsgs(State(s): Shared) -> Response {
    Json(s.engine.tsgs()).into_response()
}

async fn get_tsg(State(s): Shared, Path(id): Path<String>) -> Response {
    match s.engine.tsg(&id) {
        Some((summary, yaml)) => Json(json!({ "summary": summary, "yaml": yaml })).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown document '{id}'")),
    }
}

async fn put_tsg(State(s): Shared, Path(id): Path<String>, body: String) -> Response {
    match s.engine.put_tsg(&id, &body) {
        Ok(summary) => Json(summary).into_response(),
        Err(report) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({ "ok": false, "report": report })),
        )
            .into_response(),
    }
}

async fn approval(State(s): Shared, Path(id): Path<String>) -> Response {
    match s.engine.approval(&id) {
        Some(a) => Json(a).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown document '{id}'")),
    }
}

async fn incidents(State(s): Shared) -> Response {
    Json(s.engine.incidents()).into_response()
}

async fn work_items(State(s): Shared) -> Response {
    Json(s.engine.work_items()).into_response()
}

async fn schema() -> Response {
    let v: serde_json::Value = serde_json::from_str(RESPONSE_SCHEMA).expect("embedded schema is JSON");
    Json(v).into_response()
}

async fn tick(State(s): Shared) -> Response {
    let now = s.engine.now();
    let report = {
        let mut sched = s.scheduler.lock().unwrap_or_else(|e| e.into_inner());
        s.engine.tick(&mut sched, now)
    };
    Json(report).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/context:extract", post(extract))
        .route("/api/execute", post(execute))
        .route("/api/feedback", post(feedback))
        .route("/api/validate", post(validate))
        .route("/api/tsgs", get(list_tsgs))
        .route("/api/tsgs/{id}", get(get_tsg).put(put_tsg))
        .route("/api/tsgs/{id}/approval", get(approval))
        .route("/api/incidents", get(incidents))
        .route("/api/work-items", get(work_items))
        .route("/api/schedule:tick", post(tick))
        .route("/api/schema", get(schema))
        .with_state(state)
}

/// Serves until the process ends; ticks the scheduler when `tick_every` is
/// configured.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr, tick_every: Option<std::time::Duration>) -> std::io::Result<()> {
    if let Some(every) = tick_every {
        let st = state.clone();
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(every);
            loop {
                interval.tick().await;
                let st = st.clone();
                let report = tokio::task::spawn_blocking(move || {
                    let now = st.engine.now();
                    let mut sched = st.scheduler.lock().unwrap_or_else(|e| e.into_inner());
                    st.engine.tick(&mut sched, now)
                })
                .await;
                match report {
                    Ok(r) if !r.is_empty() => tracing::info!(runs = r.runs.len(), ops = r.operations.len(), "tick"),
                    Ok(_) => {}
                    Err(e) => tracing::error!("scheduler tick failed: {e}"),
                }
            }
        });
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

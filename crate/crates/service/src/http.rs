//! REST routes over [`Engine`]. Engine calls block (model requests, the
//! script sandbox), so each runs on the blocking pool.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dynavis_core::chart::{recombine, ChartSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::Engine;
use crate::error::{ErrorKind, ServiceError};
use crate::import::Payload;
use crate::telemetry::to_jsonl;

pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;
pub const NDJSON: &str = "application/x-ndjson";

type AppState = Arc<Engine>;
type ApiResult<T> = Result<T, ServiceError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandRequest {
    pub command: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WidgetResultRequest {
    #[serde(default)]
    pub transforms: Value,
    pub chart: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToggleRequest {
    pub enabled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecResponse {
    pub spec: Option<Value>,
}

#[derive(Debug, Default, Deserialize)]
struct SpecQuery {
    /// Put the dataset rows back into the spec.
    #[serde(default)]
    inline: bool,
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/chart-commands", post(chart_command))
        .route("/api/sessions/{id}/widget-commands", post(widget_command))
        .route("/api/sessions/{id}/widgets/{wid}/result", post(widget_result))
        .route("/api/sessions/{id}/widgets/{wid}/toggle", post(toggle))
        .route("/api/sessions/{id}/widgets/{wid}", axum::routing::delete(delete_widget))
        .route("/api/sessions/{id}/effective-spec", get(effective_spec))
        .route("/api/sessions/{id}/telemetry", get(telemetry))
        .route("/api/sessions/{id}/events", get(events))
        .route("/api/sessions/{id}/events/{seq}", get(event))
        .route("/api/sessions/{id}/export", get(export))
        .route("/api/sessions/{id}/data", get(data))
        .fallback(|| async { ServiceError::not_found("route") })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(engine)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::internal(format!("worker failed: {e}")))?
}

fn parse_body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ServiceError::invalid(format!("invalid request body: {e}")))
}

fn ndjson(body: String) -> Response {
    ([(header::CONTENT_TYPE, NDJSON)], body).into_response()
}

async fn create_session(State(engine): State<AppState>, req: Request) -> ApiResult<Response> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let payload = if content_type.as_deref().is_some_and(|ct| ct.starts_with("multipart/form-data")) {
        let mut form = Multipart::from_request(req, &())
            .await
            .map_err(|e| ServiceError::invalid(e.body_text()))?;
        let field = form
            .next_field()
            .await
            .map_err(|e| ServiceError::invalid(e.body_text()))?
            .ok_or_else(|| ServiceError::new(ErrorKind::ParseError, "multipart body has no file part"))?;
        let name = field.file_name().map(str::to_string);
        let ct = field.content_type().map(str::to_string);
        let bytes = field.bytes().await.map_err(|e| ServiceError::invalid(e.body_text()))?;
        Payload::sniff(bytes.to_vec(), ct.as_deref(), name.as_deref())?
    } else {
        let bytes = Bytes::from_request(req, &())
            .await
            .map_err(|e| ServiceError::invalid(e.body_text()))?;
        Payload::sniff(bytes.to_vec(), content_type.as_deref(), None)?
    };
    let created = blocking(move || engine.create_session(payload)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn get_session(State(engine): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(move || engine.snapshot(&id)).await?).into_response())
}

async fn chart_command(State(engine): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: CommandRequest = parse_body(&body)?;
    Ok(Json(blocking(move || engine.chart_command(&id, &req.command)).await?).into_response())
}

async fn widget_command(State(engine): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: CommandRequest = parse_body(&body)?;
    Ok(Json(blocking(move || engine.widget_command(&id, &req.command)).await?).into_response())
}

async fn widget_result(
    State(engine): State<AppState>,
    Path((id, wid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: WidgetResultRequest = parse_body(&body)?;
    let out = blocking(move || engine.apply_widget_result(&id, &wid, req.transforms, req.chart)).await?;
    Ok(Json(out).into_response())
}

async fn toggle(
    State(engine): State<AppState>,
    Path((id, wid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: ToggleRequest = parse_body(&body)?;
    Ok(Json(blocking(move || engine.toggle(&id, &wid, req.enabled)).await?).into_response())
}

async fn delete_widget(State(engine): State<AppState>, Path((id, wid)): Path<(String, String)>) -> ApiResult<Response> {
    Ok(Json(blocking(move || engine.delete_widget(&id, &wid)).await?).into_response())
}

async fn effective_spec(
    State(engine): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<SpecQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let inline = query.map_err(|e| ServiceError::invalid(e.body_text()))?.inline;
    let spec = blocking(move || {
        let spec = engine.effective_spec(&id)?;
        if !inline {
            return Ok(spec.map(ChartSpec::into_value));
        }
        let state = engine.state(&id)?;
        Ok(spec.map(|s| recombine(&s, Some(&state.dataset), &state.layout)))
    })
    .await?;
    Ok(Json(SpecResponse { spec }).into_response())
}

async fn telemetry(State(engine): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let events = blocking(move || engine.telemetry(&id)).await?;
    Ok(ndjson(to_jsonl(&events)))
}

async fn events(State(engine): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let log = blocking(move || engine.events(&id)).await?;
    let mut body = String::new();
    for e in &log {
        body.push_str(&serde_json::to_string(e).expect("log entry serializes"));
        body.push('\n');
    }
    Ok(ndjson(body))
}

async fn event(State(engine): State<AppState>, Path((id, seq)): Path<(String, u64)>) -> ApiResult<Response> {
    let entry = blocking(move || {
        engine
            .events(&id)?
            .into_iter()
            .find(|e| e.seq == seq)
            .ok_or_else(|| ServiceError::not_found(format!("event {seq}")))
    })
    .await?;
    Ok(Json(entry).into_response())
}

async fn export(State(engine): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(move || engine.export(&id)).await?).into_response())
}

async fn data(State(engine): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(move || engine.records(&id)).await?).into_response())
}

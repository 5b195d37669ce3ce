//! HTTP/JSON boundary over the capture engine.
//!
//! | method | path | success |
//! |---|---|---|
//! | POST | `/sessions` | 201 `{"session_id": ...}` |
//! | POST | `/sessions/{id}/frames` | 200 frame result (multipart `image` + `observations`) |
//! | GET | `/sessions/{id}/status` | 200 status payload |
//! | GET | `/sessions/{id}/annotations` | 200 COCO JSON (409 until finished) |
//! | GET | `/ranking` | 200 ranking entries, fastest first |
//!
//! Errors are `{"error": message, "fields": [{field, message}]}`; `fields`
//! only appears on 422.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hemicap::session::FieldError;
use hemicap::{Engine, EngineError, MarkerObservation, SessionConfig};
use serde::Serialize;

/// Uploaded frames can be full-resolution images.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    fields: Vec<FieldError>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { error: message.into(), fields: Vec::new() } }
    }

    fn invalid(field: &str, message: impl Into<String>) -> Self {
        let message = message.into();
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ErrorBody {
                error: format!("{field}: {message}"),
                fields: vec![FieldError { field: field.into(), message }],
            },
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::NotFound(_) => StatusCode::NOT_FOUND,
            EngineError::WrongPhase { .. } | EngineError::NotFinished | EngineError::Conflict(_) => {
                StatusCode::CONFLICT
            }
            EngineError::Config(c) => {
                return ApiError {
                    status: StatusCode::UNPROCESSABLE_ENTITY,
                    body: ErrorBody { error: e.to_string(), fields: c.fields.clone() },
                }
            }
            EngineError::Store(_) | EngineError::Session(_) => {
                tracing::error!(error = %e, "engine failure");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Field named in a serde error message ("unknown field `x`", "missing field `x`").
fn serde_field(message: &str) -> &str {
    if message.starts_with("unknown field") || message.starts_with("missing field") {
        message.split('`').nth(1).unwrap_or("body")
    } else {
        "body"
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8], what: &str) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| {
        let message = e.to_string();
        let field = serde_field(&message);
        let field = if field == "body" { what } else { field }.to_string();
        ApiError::invalid(&field, message)
    })
}

/// Runs blocking engine work (file I/O under per-session locks) off the reactor.
async fn blocking<T, F>(engine: &Arc<Engine>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = Arc::clone(engine);
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Serialize)]
struct Created {
    session_id: String,
}

async fn create_session(State(engine): State<Arc<Engine>>, body: Bytes) -> Result<Response, ApiError> {
    let config: SessionConfig = parse_json(&body, "body")?;
    let session_id = blocking(&engine, move |e| e.start_session(config)).await?;
    tracing::info!(%session_id, "session started");
    Ok((StatusCode::CREATED, Json(Created { session_id })).into_response())
}

async fn submit_frame(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    mut multipart: Multipart,
) -> Result<Response, ApiError> {
    let mut image = None;
    let mut observations = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::invalid("multipart", e.body_text()))?
    {
        match field.name() {
            Some("image") => {
                let bytes = field.bytes().await.map_err(|e| ApiError::invalid("image", e.body_text()))?;
                image = Some(bytes);
            }
            Some("observations") => {
                let bytes =
                    field.bytes().await.map_err(|e| ApiError::invalid("observations", e.body_text()))?;
                observations = Some(parse_json::<Vec<MarkerObservation>>(&bytes, "observations")?);
            }
            other => {
                return Err(ApiError::invalid(other.unwrap_or("multipart"), "unexpected multipart field"));
            }
        }
    }
    let image = image.ok_or_else(|| ApiError::invalid("image", "missing"))?;
    let observations = observations.ok_or_else(|| ApiError::invalid("observations", "missing"))?;
    let result = blocking(&engine, move |e| e.submit_frame(&id, &image, &observations)).await?;
    Ok(Json(result).into_response())
}

async fn status(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let status = blocking(&engine, move |e| e.status(&id)).await?;
    Ok(Json(status).into_response())
}

async fn annotations(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let coco = blocking(&engine, move |e| e.annotations(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], coco).into_response())
}

async fn ranking(State(engine): State<Arc<Engine>>) -> Result<Response, ApiError> {
    let ranking = blocking(&engine, |e| e.ranking()).await?;
    Ok(Json(ranking).into_response())
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/frames", post(submit_frame))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/annotations", get(annotations))
        .route("/ranking", get(ranking))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(engine)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, engine: Arc<Engine>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(engine)).await
}

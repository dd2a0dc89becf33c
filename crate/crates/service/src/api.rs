//! HTTP routes over a [`SessionStore`].
//!
//! | method | path                        | body / query   | response        |
//! |--------|-----------------------------|----------------|-----------------|
//! | POST   | `/sessions`                 | policy config  | `SessionView`   |
//! | GET    | `/sessions`                 |                | session ids     |
//! | GET    | `/sessions/{id}`            |                | `SessionView`   |
//! | GET    | `/sessions/{id}/level`      |                | `LevelView`     |
//! | POST   | `/sessions/{id}/pvalues`    | `{p, seq}`     | `Decision`      |
//! | GET    | `/sessions/{id}/whatif`     | `?p=`          | `WhatIfReport`  |
//! | GET    | `/sessions/{id}/history`    |                | `HistoryView`   |
//!
//! Errors carry `{code, message, constraint?}`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use exaddis_core::{ConfigError, PolicyConfig};
use serde::Serialize;

use crate::error::{ErrorBody, ServiceError};
use crate::records::SubmitRequest;
use crate::store::SessionStore;

type Shared = Arc<SessionStore>;

#[derive(Debug)]
pub enum ApiError {
    Service(ServiceError),
    BadRequest(String),
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError::Service(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Service(e) => (e.status(), e.body()),
            ApiError::BadRequest(message) => {
                (400, ErrorBody { code: "bad_request".into(), message, constraint: None })
            }
        };
        let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs a store call off the async workers; submissions block on fsync.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Service(ServiceError::Storage(e.to_string())))?
        .map_err(ApiError::from)
}

pub fn router(store: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(view))
        .route("/sessions/{id}/level", get(level))
        .route("/sessions/{id}/pvalues", post(submit))
        .route("/sessions/{id}/whatif", get(what_if))
        .route("/sessions/{id}/history", get(history))
        .layer(middleware::from_fn(cors))
        .with_state(store)
}

/// Permissive CORS so a console served from another local origin can call in.
async fn cors(req: Request, next: Next) -> Response {
    let mut resp = if req.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(req).await
    };
    let h = resp.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    resp
}

async fn create(State(store): State<Shared>, body: Bytes) -> Result<(StatusCode, Json<impl Serialize>), ApiError> {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let config = PolicyConfig::from_json_str(text).map_err(|e| ApiError::Service(e.into()))?;
    let view = blocking(move || store.create(config)).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

#[derive(Serialize)]
struct SessionList {
    sessions: Vec<String>,
    quarantined: Vec<Quarantined>,
}

#[derive(Serialize)]
struct Quarantined {
    id: String,
    reason: String,
}

async fn list(State(store): State<Shared>) -> ApiResult<impl Serialize> {
    let quarantined = store.quarantined().into_iter().map(|(id, reason)| Quarantined { id, reason }).collect();
    Ok(Json(SessionList { sessions: store.ids(), quarantined }))
}

async fn view(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<impl Serialize> {
    Ok(Json(store.view(&id)?))
}

async fn level(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<impl Serialize> {
    Ok(Json(store.level(&id)?))
}

async fn submit(State(store): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl Serialize> {
    let req: SubmitRequest = serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    Ok(Json(blocking(move || store.submit(&id, req.p, req.seq)).await?))
}

async fn what_if(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<impl Serialize> {
    let raw = query.get("p").ok_or_else(|| ApiError::BadRequest("missing query parameter p".into()))?;
    let p: f64 = raw.parse().map_err(|_| ApiError::BadRequest(format!("p '{raw}' is not a number")))?;
    Ok(Json(store.what_if(&id, p)?))
}

async fn history(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<impl Serialize> {
    Ok(Json(store.history(&id)?))
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        ApiError::Service(e.into())
    }
}

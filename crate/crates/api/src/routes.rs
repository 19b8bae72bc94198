use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::error::ApiError;
use crate::service::{QueryParams, Service};

pub const API_KEY_HEADER: &str = "x-api-key";
pub const PROJECT_HEADER: &str = "x-project";
/// Hard cap on request bodies. Far above the per-contribution limit so
/// oversize files reach the size policy and get a structured 413.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

type Shared = State<Arc<Service>>;

fn header<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name).and_then(|v| v.to_str().ok())
}

fn key(headers: &HeaderMap) -> Option<String> {
    header(headers, API_KEY_HEADER).map(str::to_string)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn submit(State(svc): Shared, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let key = key(&headers);
    let claimed = header(&headers, PROJECT_HEADER).map(str::to_string);
    let items = blocking(move || svc.submit(key.as_deref(), claimed.as_deref(), &body)).await?;
    Ok((StatusCode::CREATED, Json(items)).into_response())
}

async fn list(State(svc): Shared, headers: HeaderMap, Query(params): Query<QueryParams>) -> Result<Response, ApiError> {
    let key = key(&headers);
    let found = blocking(move || svc.query(key.as_deref(), &params)).await?;
    Ok(Json(found).into_response())
}

async fn get_one(State(svc): Shared, headers: HeaderMap, Path(cid): Path<String>) -> Result<Response, ApiError> {
    let key = key(&headers);
    let c = blocking(move || svc.get_contribution(key.as_deref(), &cid)).await?;
    Ok(Json(c).into_response())
}

async fn delete_one(State(svc): Shared, headers: HeaderMap, Path(cid): Path<String>) -> Result<Response, ApiError> {
    let key = key(&headers);
    let item = blocking(move || svc.delete_contribution(key.as_deref(), &cid)).await?;
    Ok(Json(item).into_response())
}

async fn patch_one(
    State(svc): Shared,
    headers: HeaderMap,
    Path(cid): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let key = key(&headers);
    let c = blocking(move || svc.patch(key.as_deref(), &cid, &body)).await?;
    Ok(Json(c).into_response())
}

async fn material(State(svc): Shared, headers: HeaderMap, Path(material): Path<String>) -> Result<Response, ApiError> {
    let key = key(&headers);
    let doc = blocking(move || svc.material(key.as_deref(), &material)).await?;
    Ok(Json(doc).into_response())
}

#[derive(Deserialize)]
struct BuildParams {
    material: Option<String>,
}

async fn build(State(svc): Shared, headers: HeaderMap, Query(params): Query<BuildParams>) -> Result<Response, ApiError> {
    let key = key(&headers);
    let summary = blocking(move || svc.build(key.as_deref(), params.material.as_deref())).await?;
    Ok((StatusCode::ACCEPTED, Json(summary)).into_response())
}

async fn projects(State(svc): Shared) -> Result<Response, ApiError> {
    let list = blocking(move || Ok(svc.projects())).await?;
    Ok(Json(list).into_response())
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/v1/contributions", post(submit).get(list))
        .route(
            "/api/v1/contributions/{cid}",
            get(get_one).delete(delete_one).patch(patch_one),
        )
        .route("/api/v1/materials/{material}", get(material))
        .route("/api/v1/build", post(build))
        .route("/api/v1/projects", get(projects))
        .fallback(fallback)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(service)
}

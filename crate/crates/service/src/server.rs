use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;

use crate::api::Api;

#[derive(Clone)]
struct AppState {
    api: Arc<Api>,
    static_dir: Option<PathBuf>,
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("json") => "application/json",
        Some("csv") => "text/csv",
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        _ => "application/octet-stream",
    }
}

async fn api_route(
    State(state): State<AppState>,
    method: Method,
    uri: Uri,
    Query(query): Query<HashMap<String, String>>,
    body: Bytes,
) -> Response {
    let r = state.api.handle(method.as_str(), uri.path(), &query, &body);
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], r.body.to_string()).into_response()
}

async fn file_route(State(state): State<AppState>, Path((dataset, rest)): Path<(String, String)>) -> Response {
    match state.api.file_path(&dataset, &rest) {
        Some(path) => match std::fs::read(&path) {
            Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
            Err(_) => StatusCode::INTERNAL_SERVER_ERROR.into_response(),
        },
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn static_route(State(state): State<AppState>, uri: Uri) -> Response {
    let Some(dir) = &state.static_dir else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = std::path::Path::new(rel);
    if rel.components().any(|c| !matches!(c, std::path::Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let path = dir.join(rel);
    match std::fs::read(&path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

pub fn router(api: Api, static_dir: Option<PathBuf>) -> Router {
    let state = AppState {
        api: Arc::new(api),
        static_dir,
    };
    let endpoints = ["/datasets", "/heatmap", "/view", "/select", "/pcp", "/sensitivity", "/demo1d"];
    let mut router = Router::new();
    for e in endpoints {
        router = router.route(e, get(api_route).post(api_route));
    }
    router
        .route("/files/{dataset}/{*rest}", get(file_route))
        .fallback(static_route)
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, api: Api, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(api, static_dir)).await
}

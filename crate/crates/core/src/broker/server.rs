//! HTTP transport for [`api::handle`](super::api::handle).

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::http::{Method as HttpMethod, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};

use super::api::{self, ApiRequest, Method};
use super::Broker;

pub fn router(broker: Arc<Broker>) -> Router {
    Router::new().fallback(move |method: HttpMethod, uri: Uri, body: Bytes| {
        let broker = broker.clone();
        async move { dispatch(broker, method, uri, body).await }
    })
}

async fn dispatch(broker: Arc<Broker>, method: HttpMethod, uri: Uri, body: Bytes) -> Response {
    let method = match method {
        HttpMethod::GET => Method::Get,
        HttpMethod::POST => Method::Post,
        _ => {
            return (StatusCode::METHOD_NOT_ALLOWED, Json(serde_json::json!({"error": "method not allowed"})))
                .into_response()
        }
    };
    let body = if body.is_empty() {
        None
    } else {
        match serde_json::from_slice(&body) {
            Ok(v) => Some(v),
            Err(e) => {
                return (StatusCode::BAD_REQUEST, Json(serde_json::json!({"error": format!("invalid JSON: {e}")})))
                    .into_response()
            }
        }
    };
    let path = uri.path_and_query().map(|p| p.as_str().to_string()).unwrap_or_else(|| uri.path().to_string());
    let request = ApiRequest { method, path, body };
    // negotiation may block on remote endpoints
    let response = tokio::task::spawn_blocking(move || api::handle(&broker, request)).await;
    match response {
        Ok(r) => {
            let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, Json(r.body)).into_response()
        }
        Err(e) => {
            (StatusCode::INTERNAL_SERVER_ERROR, Json(serde_json::json!({"error": e.to_string()}))).into_response()
        }
    }
}

/// Serves until ctrl-c.
pub async fn serve(broker: Arc<Broker>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "broker listening");
    axum::serve(listener, router(broker))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

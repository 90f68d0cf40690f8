//! HTTP front for any [`Backend`], speaking the logit-server protocol:
//!
//! | route              | request                                         | response              |
//! |--------------------|-------------------------------------------------|-----------------------|
//! | `GET /v1/info`     |                                                 | `{name, vocab_size}`  |
//! | `POST /v1/logits`  | `{image_png_b64, prompt, prefix_ids}`           | `{logits}`            |
//! | `POST /v1/tokenize`| `{text}`                                        | `{ids}`               |
//! | `POST /v1/detokenize` | `{ids}`                                      | `{text}`              |
//!
//! Failures return a JSON body `{"error": "..."}` with status 400 for bad
//! requests and 500 otherwise.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use tokio::sync::oneshot;

use super::http::{
    DetokenizeRequest, DetokenizeResponse, ErrorBody, LogitsRequest, LogitsResponse,
    TokenizeRequest, TokenizeResponse,
};
use super::{Backend, BackendError, TokenSequence};
use crate::imgaug::ImageBuffer;

type Shared = Arc<dyn Backend>;

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        let status = match e {
            BackendError::UnsupportedPrompt(_) | BackendError::InvalidToken(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(message: String) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, message)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("worker panicked: {e}"),
        )
    })?
}

async fn info(State(backend): State<Shared>) -> Result<Response, ApiError> {
    let d = blocking(move || backend.info().map_err(ApiError::from)).await?;
    Ok(Json(d).into_response())
}

async fn logits(
    State(backend): State<Shared>,
    Json(req): Json<LogitsRequest>,
) -> Result<Json<LogitsResponse>, ApiError> {
    blocking(move || {
        let png = BASE64
            .decode(req.image_png_b64.as_bytes())
            .map_err(|e| bad_request(format!("image_png_b64 is not valid base64: {e}")))?;
        let image = ImageBuffer::decode(&png).map_err(|e| bad_request(format!("image: {e}")))?;
        if req.prompt.is_empty() {
            return Err(bad_request("prompt must be non-empty".into()));
        }
        let prefix = TokenSequence(req.prefix_ids);
        let out = backend.next_logits(&image, &req.prompt, &prefix)?;
        Ok(Json(LogitsResponse {
            logits: out.into_vec(),
        }))
    })
    .await
}

async fn tokenize(
    State(backend): State<Shared>,
    Json(req): Json<TokenizeRequest>,
) -> Result<Json<TokenizeResponse>, ApiError> {
    blocking(move || {
        let ids = backend.tokenize(&req.text)?;
        Ok(Json(TokenizeResponse { ids: ids.0 }))
    })
    .await
}

async fn detokenize(
    State(backend): State<Shared>,
    Json(req): Json<DetokenizeRequest>,
) -> Result<Json<DetokenizeResponse>, ApiError> {
    blocking(move || {
        let text = backend.detokenize(&TokenSequence(req.ids))?;
        Ok(Json(DetokenizeResponse { text }))
    })
    .await
}

pub fn router(backend: Shared) -> Router {
    Router::new()
        .route("/v1/info", get(info))
        .route("/v1/logits", post(logits))
        .route("/v1/tokenize", post(tokenize))
        .route("/v1/detokenize", post(detokenize))
        .with_state(backend)
}

/// A server running on a background thread; dropped handles shut it down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
}

/// Bind `addr` (port 0 picks a free port) and serve in the background.
pub fn spawn(backend: Shared, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let rt = runtime()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let bound = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let _ = axum::serve(listener, router(backend))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(ServerHandle {
        addr: bound,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Serve on the current thread until the process is stopped.
pub fn serve_forever(backend: Shared, addr: SocketAddr) -> std::io::Result<()> {
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(backend)).await
    })
}

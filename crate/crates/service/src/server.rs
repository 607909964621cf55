//! HTTP/JSON control plane and WebSocket frame stream.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::api::{frame_message, CameraRequest, CreateSessionRequest, ErrorBody, ErrorDetail, FrameFormat, InpaintRequest, PathRequest, PromptRequest, SessionCreated, TransformRequest, API_VERSION};
use crate::error::{check_version, ServiceError, ServiceResult};
use crate::frames::{heartbeat, render_frame};
use crate::phase::Phase;
use crate::session::SessionManager;

type Shared = Arc<SessionManager>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        use splatedit_core::Error as E;
        let status = match &self {
            ServiceError::UnknownSession(_) | ServiceError::FileNotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::PhaseConflict { .. } | ServiceError::Busy => StatusCode::CONFLICT,
            ServiceError::Validation(_) | ServiceError::Version { .. } | ServiceError::Checksum(_) => StatusCode::BAD_REQUEST,
            ServiceError::Core(E::Parse { .. } | E::Json(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Core(E::InvalidParameter(_) | E::Shape(_)) => StatusCode::BAD_REQUEST,
            ServiceError::Adapter(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            v: API_VERSION,
            error: ErrorDetail {
                kind: self.kind().to_string(),
                message: self.to_string(),
            },
        };
        (status, Json(body)).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ServiceResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Validation(format!("malformed request body: {e}")))
}

async fn blocking<R: Send + 'static>(f: impl FnOnce() -> ServiceResult<R> + Send + 'static) -> ServiceResult<R> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Validation(format!("worker panicked: {e}")))?
}

async fn create_session(State(m): State<Shared>, body: Bytes) -> ServiceResult<(StatusCode, Json<SessionCreated>)> {
    let req: CreateSessionRequest = parse(&body)?;
    let created = blocking(move || m.create_from_files(&req)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn status(State(m): State<Shared>, Path(id): Path<String>) -> ServiceResult<impl IntoResponse> {
    Ok(Json(m.status(&id)?))
}

async fn prompts(State(m): State<Shared>, Path(id): Path<String>, body: Bytes) -> ServiceResult<impl IntoResponse> {
    let req: PromptRequest = parse(&body)?;
    Ok((StatusCode::ACCEPTED, Json(m.submit_prompts(&id, &req)?)))
}

async fn inpaint(State(m): State<Shared>, Path(id): Path<String>, body: Bytes) -> ServiceResult<impl IntoResponse> {
    let v = if body.is_empty() { API_VERSION } else { parse::<InpaintRequest>(&body)?.v };
    Ok((StatusCode::ACCEPTED, Json(m.run_inpaint(&id, v)?)))
}

#[derive(Deserialize)]
struct MaskQuery {
    #[serde(default)]
    overlay: bool,
}

async fn mask(State(m): State<Shared>, Path((id, cam)): Path<(String, usize)>, Query(q): Query<MaskQuery>) -> ServiceResult<impl IntoResponse> {
    let png = blocking(move || m.mask_preview(&id, cam, q.overlay)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png))
}

async fn transform(State(m): State<Shared>, Path(id): Path<String>, body: Bytes) -> ServiceResult<impl IntoResponse> {
    let req: TransformRequest = parse(&body)?;
    Ok(Json(m.apply_transform(&id, &req)?))
}

async fn camera(State(m): State<Shared>, Path(id): Path<String>, body: Bytes) -> ServiceResult<impl IntoResponse> {
    let req: CameraRequest = parse(&body)?;
    Ok(Json(m.set_camera(&id, &req)?))
}

#[derive(Deserialize)]
struct VisibilityRequest {
    v: u32,
    visible: bool,
}

async fn object(State(m): State<Shared>, Path(id): Path<String>, body: Bytes) -> ServiceResult<impl IntoResponse> {
    let req: VisibilityRequest = parse(&body)?;
    check_version(req.v)?;
    Ok(Json(m.set_object_visible(&id, req.visible)?))
}

async fn persist(State(m): State<Shared>, Path(id): Path<String>, body: Bytes) -> ServiceResult<impl IntoResponse> {
    let req: PathRequest = parse(&body)?;
    check_version(req.v)?;
    Ok(Json(blocking(move || m.persist(&id, &req.path)).await?))
}

async fn load(State(m): State<Shared>, body: Bytes) -> ServiceResult<(StatusCode, Json<SessionCreated>)> {
    let req: PathRequest = parse(&body)?;
    check_version(req.v)?;
    let s = blocking(move || m.load(&req.path)).await?;
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            v: API_VERSION,
            id: s.id.clone(),
            phase: s.phase(),
        }),
    ))
}

#[derive(Deserialize)]
struct StreamQuery {
    #[serde(default = "default_format")]
    format: FrameFormat,
    #[serde(default = "default_heartbeat")]
    heartbeat_ms: u64,
}

fn default_format() -> FrameFormat {
    FrameFormat::Jpeg
}

fn default_heartbeat() -> u64 {
    1000
}

async fn frames(State(m): State<Shared>, Path(id): Path<String>, Query(q): Query<StreamQuery>, ws: WebSocketUpgrade) -> ServiceResult<Response> {
    let session = m.get(&id)?;
    if session.phase() == Phase::Error {
        return Err(ServiceError::PhaseConflict {
            op: "frame stream",
            phase: Phase::Error,
        });
    }
    Ok(ws.on_upgrade(move |socket| stream(socket, session, q)))
}

/// Sends a frame whenever the published state moves past the last frame
/// sent; changes arriving during a render are coalesced into the next one.
async fn stream(mut socket: WebSocket, session: Arc<crate::session::Session>, q: StreamQuery) {
    let mut rx = session.subscribe();
    rx.mark_changed();
    let mut last: Option<u64> = None;
    let mut beat = tokio::time::interval(Duration::from_millis(q.heartbeat_ms.max(10)));
    beat.tick().await;
    loop {
        tokio::select! {
            changed = rx.changed() => {
                if changed.is_err() {
                    break;
                }
                let state = rx.borrow_and_update().clone();
                if last.is_some_and(|l| state.seq <= l) {
                    continue;
                }
                let format = q.format;
                let rendered = tokio::task::spawn_blocking(move || render_frame(&state, format)).await;
                match rendered {
                    Ok(Ok(Some((h, payload)))) => {
                        last = Some(h.seq);
                        if socket.send(Message::Binary(frame_message(&h, &payload).into())).await.is_err() {
                            break;
                        }
                    }
                    Ok(Ok(None)) => {}
                    Ok(Err(e)) => log::warn!("frame render failed: {e}"),
                    Err(e) => log::warn!("frame worker failed: {e}"),
                }
            }
            _ = beat.tick() => {
                let text = serde_json::to_string(&heartbeat(last.unwrap_or(0))).expect("heartbeat serializes");
                if socket.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            msg = socket.recv() => {
                match msg {
                    None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                    _ => {}
                }
            }
        }
    }
}

pub fn router(manager: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/load", post(load))
        .route("/sessions/{id}", get(status))
        .route("/sessions/{id}/prompts", post(prompts))
        .route("/sessions/{id}/inpaint", post(inpaint))
        .route("/sessions/{id}/mask/{cam}", get(mask))
        .route("/sessions/{id}/transform", post(transform))
        .route("/sessions/{id}/camera", post(camera))
        .route("/sessions/{id}/object", post(object))
        .route("/sessions/{id}/persist", post(persist))
        .route("/sessions/{id}/frames", get(frames))
        .with_state(manager)
}

/// Binds `addr` and serves until the future is dropped. Returns the bound
/// address through `bound` before serving (useful with port 0).
pub async fn serve(manager: Shared, addr: SocketAddr, bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    bound(listener.local_addr()?);
    axum::serve(listener, router(manager)).await
}

//! Wire types. Every request and response carries `v`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use splatedit_core::editing::TransformRecord;
use splatedit_core::scene::CameraRecord;
use splatedit_core::segmentation::PromptPoint;

use crate::phase::Phase;

pub const API_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub v: u32,
    pub scene: PathBuf,
    pub cameras: PathBuf,
    /// Per-splat labels (`LabelFile` JSON) for the ground-truth oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub v: u32,
    pub id: String,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub v: u32,
    pub camera: usize,
    pub points: Vec<PromptPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub v: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Segment,
    Inpaint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub v: u32,
    pub id: String,
    pub job: JobKind,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRequest {
    pub v: u32,
    #[serde(flatten)]
    pub transform: TransformRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub v: u32,
    /// Edit sequence number; frames tagged with it or later include the change.
    pub seq: u64,
}

/// Either a camera of the session's list or a free camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRequest {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifacts {
    pub original: bool,
    pub segmentation: bool,
    pub inpainted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub v: u32,
    pub id: String,
    pub phase: Phase,
    pub progress: f64,
    pub job_running: bool,
    pub artifacts: Artifacts,
    pub splat_count: usize,
    pub camera_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_count: Option<usize>,
    /// Index of the active camera, `None` for a free camera.
    pub active_camera: Option<usize>,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRequest {
    pub v: u32,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub v: u32,
    pub error: ErrorDetail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    Jpeg,
    /// Tightly packed RGB8 rows.
    Rgb8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Frame,
    Heartbeat,
}

/// Header of a streamed frame. On the socket a frame is one binary message:
/// header length as u32 little-endian, the header JSON, then the payload.
/// Heartbeats are text messages holding only the header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub v: u32,
    pub kind: FrameKind,
    pub seq: u64,
    #[serde(default)]
    pub width: usize,
    #[serde(default)]
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<FrameFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render_ms: Option<f64>,
}

/// Splits a binary frame message into header and payload.
pub fn split_frame_message(bytes: &[u8]) -> Option<(FrameHeader, &[u8])> {
    let len = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
    let header = serde_json::from_slice(bytes.get(4..4 + len)?).ok()?;
    Some((header, &bytes[4 + len..]))
}

pub fn frame_message(header: &FrameHeader, payload: &[u8]) -> Vec<u8> {
    let h = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(4 + h.len() + payload.len());
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(payload);
    out
}

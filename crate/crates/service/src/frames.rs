use std::io::Cursor;
use std::sync::Arc;
use std::time::Instant;

use image::codecs::jpeg::JpegEncoder;
use image::ExtendedColorType;
use splatedit_core::renderer::{render, Channels};
use splatedit_core::{Camera32, Scene32};

use crate::api::{FrameFormat, FrameHeader, FrameKind, API_VERSION};
use crate::error::{ServiceError, ServiceResult};

/// What the frame stream renders: the latest composite, the camera to
/// render it from, and the edit sequence number both belong to. Replaced
/// as a whole on every change.
#[derive(Clone, Debug)]
pub struct FrameState {
    pub seq: u64,
    /// `None` until the session is ready for editing.
    pub scene: Option<Arc<Scene32>>,
    pub camera: Camera32,
}

pub const JPEG_QUALITY: u8 = 85;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders and encodes the frame, or returns `None` before the session is
/// ready.
pub fn render_frame(state: &FrameState, format: FrameFormat) -> ServiceResult<Option<(FrameHeader, Vec<u8>)>> {
    let Some(scene) = &state.scene else {
        return Ok(None);
    };
    let t0 = Instant::now();
    let frame = render(scene, &state.camera, [0.0; 3], Channels::COLOR)?;
    let rgb: Vec<u8> = frame.color.iter().flat_map(|p| p.map(to_u8)).collect();
    let payload = match format {
        FrameFormat::Rgb8 => rgb,
        FrameFormat::Jpeg => {
            let mut out = Cursor::new(Vec::new());
            JpegEncoder::new_with_quality(&mut out, JPEG_QUALITY)
                .encode(&rgb, frame.width as u32, frame.height as u32, ExtendedColorType::Rgb8)
                .map_err(|e| ServiceError::Validation(format!("jpeg encoding failed: {e}")))?;
            out.into_inner()
        }
    };
    let header = FrameHeader {
        v: API_VERSION,
        kind: FrameKind::Frame,
        seq: state.seq,
        width: frame.width,
        height: frame.height,
        format: Some(format),
        render_ms: Some(t0.elapsed().as_secs_f64() * 1e3),
    };
    Ok(Some((header, payload)))
}

pub fn heartbeat(seq: u64) -> FrameHeader {
    FrameHeader {
        v: API_VERSION,
        kind: FrameKind::Heartbeat,
        seq,
        width: 0,
        height: 0,
        format: None,
        render_ms: None,
    }
}

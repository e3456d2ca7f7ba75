//! JSON bodies for the HTTP endpoints.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use vitalcam_core::facegate::Detection;
use vitalcam_core::frame::{Frame, MIN_FRAME_DIM};

use crate::ServiceError;

pub const MAX_BATCH_FRAMES: usize = 120;

/// A batch as sent by clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireBatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub width: usize,
    pub height: usize,
    pub fps_hint: f64,
    pub frame_count: usize,
    pub timestamps_ms: Vec<u64>,
    pub payload_b64: String,
}

/// A validated, decoded batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    pub width: usize,
    pub height: usize,
    pub fps_hint: f64,
    pub timestamps_ms: Vec<u64>,
    pub payload: Vec<u8>,
}

fn malformed(field: &'static str, reason: impl Into<String>) -> ServiceError {
    ServiceError::MalformedBatch {
        field,
        reason: reason.into(),
    }
}

impl FrameBatch {
    pub fn from_frames(frames: &[Frame], fps_hint: f64) -> Self {
        let (width, height) = frames.first().map_or((0, 0), |f| (f.width(), f.height()));
        Self {
            width,
            height,
            fps_hint,
            timestamps_ms: frames.iter().map(Frame::timestamp_ms).collect(),
            payload: frames.iter().flat_map(|f| f.pixels().iter().copied()).collect(),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.timestamps_ms.len()
    }

    /// Checks fields in wire order and names the first offender.
    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.width < MIN_FRAME_DIM {
            return Err(malformed("width", format!("{} is below {MIN_FRAME_DIM}", self.width)));
        }
        if self.height < MIN_FRAME_DIM {
            return Err(malformed("height", format!("{} is below {MIN_FRAME_DIM}", self.height)));
        }
        if !(self.fps_hint.is_finite() && self.fps_hint > 0.0) {
            return Err(malformed("fps_hint", "must be positive"));
        }
        let n = self.frame_count();
        if !(1..=MAX_BATCH_FRAMES).contains(&n) {
            return Err(malformed(
                "frame_count",
                format!("{n} is outside 1..={MAX_BATCH_FRAMES}"),
            ));
        }
        if self.timestamps_ms.windows(2).any(|w| w[1] <= w[0]) {
            return Err(malformed("timestamps_ms", "must strictly increase"));
        }
        let expected = n * self.width * self.height * 3;
        if self.payload.len() != expected {
            return Err(malformed(
                "payload",
                format!("{} bytes, expected {expected}", self.payload.len()),
            ));
        }
        Ok(())
    }

    pub fn from_wire(w: WireBatch) -> Result<Self, ServiceError> {
        if w.timestamps_ms.len() != w.frame_count {
            // Range-check frame_count first so the error names it.
            if !(1..=MAX_BATCH_FRAMES).contains(&w.frame_count) {
                return Err(malformed(
                    "frame_count",
                    format!("{} is outside 1..={MAX_BATCH_FRAMES}", w.frame_count),
                ));
            }
            return Err(malformed(
                "timestamps_ms",
                format!("{} timestamps for {} frames", w.timestamps_ms.len(), w.frame_count),
            ));
        }
        let payload = STANDARD
            .decode(w.payload_b64.as_bytes())
            .map_err(|e| malformed("payload_b64", e.to_string()))?;
        let batch = Self {
            width: w.width,
            height: w.height,
            fps_hint: w.fps_hint,
            timestamps_ms: w.timestamps_ms,
            payload,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn to_wire(&self, session_id: Option<String>) -> WireBatch {
        WireBatch {
            session_id,
            width: self.width,
            height: self.height,
            fps_hint: self.fps_hint,
            frame_count: self.frame_count(),
            timestamps_ms: self.timestamps_ms.clone(),
            payload_b64: STANDARD.encode(&self.payload),
        }
    }

    /// Splits into frames; assumes [`FrameBatch::validate`] passed.
    pub fn frames(&self) -> impl Iterator<Item = Frame> + '_ {
        let size = self.width * self.height * 3;
        self.timestamps_ms.iter().enumerate().map(move |(i, &ts)| {
            Frame::new(
                self.width,
                self.height,
                ts,
                self.payload[i * size..(i + 1) * size].to_vec(),
            )
            .expect("validated batch")
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: usize,
    /// Frames evicted from the queue by this submission.
    pub dropped: usize,
    pub queue_depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
    pub score: f64,
}

impl From<Detection> for WireDetection {
    fn from(d: Detection) -> Self {
        Self {
            x: d.roi.x,
            y: d.roi.y,
            w: d.roi.w,
            h: d.roi.h,
            score: d.score,
        }
    }
}

/// Poll response. `emotions` follows the fixed label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub session_id: String,
    pub calibrating: bool,
    pub bpm: Option<f64>,
    pub confidence: f64,
    pub emotions: Option<[f64; 7]>,
    pub detection: Option<WireDetection>,
    pub frames_received: u64,
    pub frames_dropped: u64,
    pub frames_processed: u64,
    pub queue_depth: usize,
    pub low_fps: bool,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub session_id: String,
    pub mean_bpm: Option<f64>,
    pub reading_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

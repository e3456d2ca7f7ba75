//! Face-presence gating by intersection over union.
//!
//! A frame contributes to the pulse estimate only when some detection
//! overlaps the analysis area with IoU strictly greater than the configured
//! threshold. Detection itself sits behind the [`Detector`] trait.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{to_grayscale, Frame, GrayPlane, Roi};
use crate::pyramid::blur_downsample;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GateError {
    #[error("IoU is undefined for zero-area regions")]
    DegenerateRoi,
    #[error("IoU threshold must lie in [0, 1]")]
    InvalidThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub roi: Roi,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub iou_threshold: f64,
    pub analysis_roi: Roi,
}

impl GateConfig {
    /// Threshold 0.5 over the given analysis area.
    pub fn new(analysis_roi: Roi) -> Self {
        Self {
            iou_threshold: 0.5,
            analysis_roi,
        }
    }

    pub fn validate(&self) -> Result<(), GateError> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(GateError::InvalidThreshold);
        }
        if self.analysis_roi.area() == 0 {
            return Err(GateError::DegenerateRoi);
        }
        Ok(())
    }
}

pub fn iou(a: &Roi, b: &Roi) -> Result<f64, GateError> {
    if a.area() == 0 || b.area() == 0 {
        return Err(GateError::DegenerateRoi);
    }
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0);
    let inter = (iw * ih) as u64;
    let union = a.area() + b.area() - inter;
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub accepted: bool,
    pub best: Option<Detection>,
    pub best_iou: f64,
}

/// Picks the detection with the highest IoU against the analysis area
/// (ties: higher score, then lower x, then lower y) and accepts when that
/// IoU is strictly above the threshold.
pub fn gate(cfg: &GateConfig, detections: &[Detection]) -> GateDecision {
    let mut best: Option<(Detection, f64)> = None;
    for d in detections {
        let Ok(v) = iou(&cfg.analysis_roi, &d.roi) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((b, bv)) => {
                v > *bv
                    || (v == *bv
                        && (d.score > b.score
                            || (d.score == b.score
                                && (d.roi.x < b.roi.x || (d.roi.x == b.roi.x && d.roi.y < b.roi.y)))))
            }
        };
        if better {
            best = Some((*d, v));
        }
    }
    match best {
        Some((d, v)) => GateDecision {
            accepted: v > cfg.iou_threshold,
            best: Some(d),
            best_iou: v,
        },
        None => GateDecision {
            accepted: false,
            best: None,
            best_iou: 0.0,
        },
    }
}

/// Source of face detections for a stream of frames.
pub trait Detector: Send {
    fn detect(&mut self, frame: &Frame) -> Vec<Detection>;
}

/// Always reports one fixed region with score 1, clamped to the frame.
#[derive(Debug, Clone)]
pub struct StaticDetector {
    roi: Roi,
}

impl StaticDetector {
    pub fn new(roi: Roi) -> Self {
        Self { roi }
    }
}

impl Detector for StaticDetector {
    fn detect(&mut self, frame: &Frame) -> Vec<Detection> {
        self.roi
            .clamp_to(frame.width(), frame.height())
            .map(|roi| vec![Detection { roi, score: 1.0 }])
            .unwrap_or_default()
    }
}

pub fn static_detector(roi: Roi) -> StaticDetector {
    StaticDetector::new(roi)
}

/// Bounding box of pixels that changed over a short history.
///
/// Frames are converted to luma and reduced once with the pyramid kernel to
/// suppress sensor noise. A pixel is "moving" when its range (max - min)
/// over the last `history` frames exceeds `noise_floor` gray levels. The
/// tight box of moving pixels, grown by 10% and clamped to the frame, is the
/// single detection; its score is the moving fraction inside the box.
#[derive(Debug, Clone)]
pub struct MotionDetector {
    history: usize,
    noise_floor: f64,
    frames: VecDeque<GrayPlane>,
}

impl MotionDetector {
    pub const DEFAULT_HISTORY: usize = 20;
    pub const DEFAULT_NOISE_FLOOR: f64 = 8.0;

    pub fn new(history: usize, noise_floor: f64) -> Self {
        Self {
            history: history.max(2),
            noise_floor,
            frames: VecDeque::new(),
        }
    }
}

impl Default for MotionDetector {
    fn default() -> Self {
        Self::new(Self::DEFAULT_HISTORY, Self::DEFAULT_NOISE_FLOOR)
    }
}

impl Detector for MotionDetector {
    fn detect(&mut self, frame: &Frame) -> Vec<Detection> {
        let gray = to_grayscale(frame);
        let reduced = blur_downsample(&gray).unwrap_or(gray);
        if self.frames.front().is_some_and(|f| f.dims() != reduced.dims()) {
            self.frames.clear();
        }
        self.frames.push_back(reduced);
        while self.frames.len() > self.history {
            self.frames.pop_front();
        }
        if self.frames.len() < 2 {
            return Vec::new();
        }

        let (rw, rh) = self.frames[0].dims();
        let mut lo = self.frames[0].values().to_vec();
        let mut hi = lo.clone();
        for f in self.frames.iter().skip(1) {
            for ((l, h), &v) in lo.iter_mut().zip(hi.iter_mut()).zip(f.values()) {
                *l = l.min(v);
                *h = h.max(v);
            }
        }

        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut moving = Vec::new();
        for y in 0..rh {
            for x in 0..rw {
                let i = y * rw + x;
                if hi[i] - lo[i] > self.noise_floor {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                    moving.push((x, y));
                }
            }
        }
        if moving.is_empty() {
            return Vec::new();
        }
        let in_box = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        let score = moving.len() as f64 / in_box;

        // Back to full resolution: reduced pixel i covers [2i, 2i + 2).
        let (fx0, fy0) = (2 * x0 as i64, 2 * y0 as i64);
        let (fx1, fy1) = (2 * (x1 as i64 + 1), 2 * (y1 as i64 + 1));
        let (bw, bh) = (fx1 - fx0, fy1 - fy0);
        let (gx, gy) = ((bw as f64 * 0.05).round() as i64, (bh as f64 * 0.05).round() as i64);
        let grown = Roi {
            x: fx0 - gx,
            y: fy0 - gy,
            w: (bw + 2 * gx) as u32,
            h: (bh + 2 * gy) as u32,
        };
        grown
            .clamp_to(frame.width(), frame.height())
            .map(|roi| vec![Detection { roi, score }])
            .unwrap_or_default()
    }
}

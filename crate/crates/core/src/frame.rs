//! Frames, scalar planes, regions of interest and time series.
//!
//! A [`Frame`] is raw 8-bit RGB, row-major and interleaved with no padding
//! and no alpha. That byte layout is shared verbatim by the RVID stream
//! format and the service wire payload.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest width/height accepted from external inputs (files, network).
pub const MIN_FRAME_DIM: usize = 8;

/// Luma weights applied to R, G and B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("frame dimensions {width}x{height} are invalid")]
    InvalidDimensions { width: usize, height: usize },
    #[error("frame is {width}x{height}, below the {MIN_FRAME_DIM}x{MIN_FRAME_DIM} minimum")]
    TooSmall { width: usize, height: usize },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    PixelLength { expected: usize, actual: usize },
    #[error("plane has {actual} values, expected {expected}")]
    PlaneLength { expected: usize, actual: usize },
    #[error("plane contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("region {0} does not overlap the {1}x{2} plane")]
    EmptyRegion(Roi, usize, usize),
    #[error("region must have positive width and height")]
    DegenerateRoi,
    #[error("sample rate must be finite and positive, got {0}")]
    InvalidSampleRate(f64),
}

/// One RGB video frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    timestamp_ms: u64,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, timestamp_ms: u64, pixels: Vec<u8>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::InvalidDimensions { width, height });
        }
        let expected = width * height * 3;
        if pixels.len() != expected {
            return Err(FrameError::PixelLength {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            timestamp_ms,
            pixels,
        })
    }

    /// A frame filled with a single colour.
    pub fn solid(width: usize, height: usize, timestamp_ms: u64, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, timestamp_ms, pixels).expect("solid frame dimensions")
    }

    /// Rejects frames below [`MIN_FRAME_DIM`] on either axis.
    pub fn check_min_size(&self) -> Result<(), FrameError> {
        if self.width < MIN_FRAME_DIM || self.height < MIN_FRAME_DIM {
            return Err(FrameError::TooSmall {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn timestamp_ms(&self) -> u64 {
        self.timestamp_ms
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn with_timestamp(mut self, timestamp_ms: u64) -> Self {
        self.timestamp_ms = timestamp_ms;
        self
    }
}

/// A colour channel of an RGB frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Red,
    #[default]
    Green,
    Blue,
}

impl Channel {
    fn offset(self) -> usize {
        match self {
            Channel::Red => 0,
            Channel::Green => 1,
            Channel::Blue => 2,
        }
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "r" | "red" => Ok(Channel::Red),
            "g" | "green" => Ok(Channel::Green),
            "b" | "blue" => Ok(Channel::Blue),
            other => Err(format!("unknown channel `{other}` (expected red, green or blue)")),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Red => "red",
            Channel::Green => "green",
            Channel::Blue => "blue",
        })
    }
}

/// Row-major plane of real-valued samples, nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayPlane {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayPlane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::InvalidDimensions { width, height });
        }
        if values.len() != width * height {
            return Err(FrameError::PlaneLength {
                expected: width * height,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FrameError::NonFinite(i));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("filled plane")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values).expect("plane from_fn")
    }

    /// Internal constructor for values already known to be valid.
    pub(crate) fn from_parts(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Element-wise `self + other`; dimensions must match.
    pub fn add(&self, other: &GrayPlane) -> GrayPlane {
        assert_eq!(self.dims(), other.dims(), "plane dimensions differ");
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        GrayPlane::from_parts(self.width, self.height, values)
    }

    /// Element-wise `self - other`; dimensions must match.
    pub fn sub(&self, other: &GrayPlane) -> GrayPlane {
        assert_eq!(self.dims(), other.dims(), "plane dimensions differ");
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        GrayPlane::from_parts(self.width, self.height, values)
    }

    pub fn max_abs_diff(&self, other: &GrayPlane) -> f64 {
        assert_eq!(self.dims(), other.dims(), "plane dimensions differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Axis-aligned rectangle in pixel coordinates. The origin may be negative
/// or the extent may run past a frame edge; consumers clamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roi {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

impl Roi {
    pub fn new(x: i64, y: i64, w: u32, h: u32) -> Result<Self, FrameError> {
        if w == 0 || h == 0 {
            return Err(FrameError::DegenerateRoi);
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn right(&self) -> i64 {
        self.x + i64::from(self.w)
    }

    pub fn bottom(&self) -> i64 {
        self.y + i64::from(self.h)
    }

    /// Intersection with `[0, width) x [0, height)`, or `None` if empty.
    pub fn clamp_to(&self, width: usize, height: usize) -> Option<Roi> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = self.right().min(width as i64);
        let y1 = self.bottom().min(height as i64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(Roi {
            x: x0,
            y: y0,
            w: (x1 - x0) as u32,
            h: (y1 - y0) as u32,
        })
    }

    /// The default analysis area for a frame: the central half of the width
    /// and two thirds of the height. For 320x240 this is (80, 40, 160, 160).
    pub fn default_analysis(width: usize, height: usize) -> Roi {
        let w = (width / 2).max(1);
        let h = (height * 2 / 3).max(1);
        Roi {
            x: ((width - w) / 2) as i64,
            y: ((height - h) / 2) as i64,
            w: w as u32,
            h: h as u32,
        }
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Roi {
        Roi {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl FromStr for Roi {
    type Err = String;

    /// Parses `x,y,w,h`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(format!("expected x,y,w,h but got `{s}`"));
        }
        let x = parts[0].parse::<i64>().map_err(|e| format!("x: {e}"))?;
        let y = parts[1].parse::<i64>().map_err(|e| format!("y: {e}"))?;
        let w = parts[2].parse::<u32>().map_err(|e| format!("w: {e}"))?;
        let h = parts[3].parse::<u32>().map_err(|e| format!("h: {e}"))?;
        Roi::new(x, y, w, h).map_err(|e| e.to_string())
    }
}

/// Uniformly sampled scalar signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    sample_rate_hz: f64,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(sample_rate_hz: f64, values: Vec<f64>) -> Result<Self, FrameError> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(FrameError::InvalidSampleRate(sample_rate_hz));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FrameError::NonFinite(i));
        }
        Ok(Self { sample_rate_hz, values })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate_hz
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> TimeSeries {
        TimeSeries {
            sample_rate_hz: self.sample_rate_hz,
            values,
        }
    }
}

/// Luma plane `0.299 R + 0.587 G + 0.114 B`.
pub fn to_grayscale(frame: &Frame) -> GrayPlane {
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let values = frame
        .pixels
        .chunks_exact(3)
        .map(|p| wr * f64::from(p[0]) + wg * f64::from(p[1]) + wb * f64::from(p[2]))
        .collect();
    GrayPlane::from_parts(frame.width, frame.height, values)
}

pub fn extract_channel(frame: &Frame, channel: Channel) -> GrayPlane {
    let off = channel.offset();
    let values = frame.pixels.chunks_exact(3).map(|p| f64::from(p[off])).collect();
    GrayPlane::from_parts(frame.width, frame.height, values)
}

/// `crop(extract_channel(frame, channel), roi)` without materialising the
/// full plane.
pub fn extract_channel_region(frame: &Frame, channel: Channel, roi: &Roi) -> Result<GrayPlane, FrameError> {
    let r = roi
        .clamp_to(frame.width, frame.height)
        .ok_or(FrameError::EmptyRegion(*roi, frame.width, frame.height))?;
    let (x0, y0, w, h) = (r.x as usize, r.y as usize, r.w as usize, r.h as usize);
    let off = channel.offset();
    let mut values = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        let row = &frame.pixels[(y * frame.width + x0) * 3..(y * frame.width + x0 + w) * 3];
        values.extend(row.chunks_exact(3).map(|p| f64::from(p[off])));
    }
    Ok(GrayPlane::from_parts(w, h, values))
}

/// Copies the part of `roi` that overlaps the plane.
pub fn crop(plane: &GrayPlane, roi: &Roi) -> Result<GrayPlane, FrameError> {
    let r = roi
        .clamp_to(plane.width, plane.height)
        .ok_or(FrameError::EmptyRegion(*roi, plane.width, plane.height))?;
    let (x0, y0, w, h) = (r.x as usize, r.y as usize, r.w as usize, r.h as usize);
    let mut values = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        let start = y * plane.width + x0;
        values.extend_from_slice(&plane.values[start..start + w]);
    }
    Ok(GrayPlane::from_parts(w, h, values))
}

/// Bilinear resampling with half-pixel centres and edge clamping.
///
/// Panics if `width` or `height` is zero.
pub fn resize_bilinear(plane: &GrayPlane, width: usize, height: usize) -> GrayPlane {
    assert!(width >= 1 && height >= 1, "resize target must be at least 1x1");
    if (width, height) == plane.dims() {
        return plane.clone();
    }
    let sx = plane.width as f64 / width as f64;
    let sy = plane.height as f64 / height as f64;
    let axis = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| axis(x, sx, plane.width)).collect();
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, plane.height);
        for &(x0, x1, fx) in &cols {
            let top = plane.get(x0, y0) * (1.0 - fx) + plane.get(x1, y0) * fx;
            let bottom = plane.get(x0, y1) * (1.0 - fx) + plane.get(x1, y1) * fx;
            values.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    GrayPlane::from_parts(width, height, values)
}

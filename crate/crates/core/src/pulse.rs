//! Heart-rate estimation for one subject.
//!
//! Each accepted frame is reduced to one number: the mean of the analysis
//! region's green channel after `analysis_level` pyramid reductions. That
//! sample goes through a [`StreamingBandpass`] into a time-bounded ring.
//! Once the calibration span has been covered, every frame re-estimates the
//! dominant in-band frequency of the ring and folds it into an exponentially
//! smoothed bpm.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facegate::{gate, Detection, GateConfig, GateError};
use crate::frame::{extract_channel_region, Channel, Frame, FrameError, TimeSeries};
use crate::pyramid::{blur_downsample, PyramidError};
use crate::temporal::{BandConfig, StreamingBandpass, TemporalError};

/// Peak-to-mean in-band power below which a spectrum is treated as noise.
///
/// Set from the 99th percentile of the confidence of white-noise windows
/// (10 s at 20 fps, 0.4-4 Hz band); see the `noise_confidence_percentile`
/// test, which re-derives it.
pub const CONFIDENCE_THRESHOLD: f64 = 8.0;

/// Shortest window [`estimate_bpm`] accepts.
pub const MIN_WINDOW_SECONDS: f64 = 2.0;

/// A gap between accepted samples longer than this restarts calibration.
pub const MAX_GAP_MS: u64 = 1_000;

/// Continuous gating longer than this drops back to calibration.
pub const GATED_RESET_MS: u64 = 3_000;

const MIN_BPM: f64 = 24.0;
const MAX_BPM: f64 = 240.0;

/// Upper bound on the sample rate used to size the ring.
const MAX_FPS: f64 = 240.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("window holds {seconds:.2} s of samples, need at least {MIN_WINDOW_SECONDS} s")]
    TooShort { seconds: f64 },
    #[error("no spectral peak inside the band")]
    NoInBandPeak,
    #[error("frame timestamp {got} ms does not follow {last} ms")]
    NonMonotonicTimestamp { last: u64, got: u64 },
    #[error("invalid pulse configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Pyramid(#[from] PyramidError),
    #[error(transparent)]
    Gate(#[from] GateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseConfig {
    pub band: BandConfig,
    pub calibration_seconds: f64,
    pub window_seconds: f64,
    pub min_fps: f64,
    pub smoothing_factor: f64,
    pub pyramid_levels: usize,
    pub analysis_level: usize,
    pub channel: Channel,
    pub confidence_threshold: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            band: BandConfig::default(),
            calibration_seconds: 5.0,
            window_seconds: 10.0,
            min_fps: 15.0,
            smoothing_factor: 0.3,
            pyramid_levels: 3,
            analysis_level: 1,
            channel: Channel::Green,
            confidence_threshold: CONFIDENCE_THRESHOLD,
        }
    }
}

impl PulseConfig {
    pub fn validate(&self) -> Result<(), PulseError> {
        self.band.validate()?;
        let bad = |m: &str| Err(PulseError::InvalidConfig(m.to_owned()));
        if !(self.calibration_seconds.is_finite() && self.calibration_seconds > 0.0) {
            return bad("calibration_seconds must be positive");
        }
        if !(self.window_seconds >= self.calibration_seconds && self.window_seconds.is_finite()) {
            return bad("window_seconds must be at least calibration_seconds");
        }
        if self.window_seconds < MIN_WINDOW_SECONDS {
            return bad("window_seconds must be at least 2");
        }
        if !(self.smoothing_factor > 0.0 && self.smoothing_factor <= 1.0) {
            return bad("smoothing_factor must lie in (0, 1]");
        }
        if !(1..=crate::pyramid::MAX_LEVELS).contains(&self.pyramid_levels) {
            return bad("pyramid_levels must lie in 1..=6");
        }
        if self.analysis_level >= self.pyramid_levels {
            return bad("analysis_level must be below pyramid_levels");
        }
        if !(self.min_fps.is_finite() && self.min_fps > 0.0) {
            return bad("min_fps must be positive");
        }
        if !(self.confidence_threshold.is_finite() && self.confidence_threshold >= 0.0) {
            return bad("confidence_threshold must be non-negative");
        }
        Ok(())
    }
}

/// Dominant in-band frequency of a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakEstimate {
    pub bpm: f64,
    /// Peak power over mean in-band power.
    pub confidence: f64,
}

/// Finds the strongest in-band frequency of `window`.
///
/// The series is mean-removed and Hann-windowed (periodic form); power is
/// `|X_k|^2 / N^2`. The strongest bin with frequency in `[f_lo, f_hi]` is
/// refined by a parabola through it and its two neighbours. A peak sitting
/// on a band edge whose outside neighbour is stronger belongs to an
/// out-of-band tone and is rejected.
pub fn estimate_bpm(window: &TimeSeries, band: &BandConfig) -> Result<PeakEstimate, PulseError> {
    let fs = window.sample_rate_hz();
    let n = window.len();
    if window.duration_s() < MIN_WINDOW_SECONDS {
        return Err(PulseError::TooShort {
            seconds: window.duration_s(),
        });
    }
    band.validate_for_rate(fs)?;
    let power = power_spectrum(window.values());

    let bin_hz = fs / n as f64;
    let in_band: Vec<usize> = (0..=n / 2)
        .filter(|&k| {
            let f = k as f64 * bin_hz;
            f >= band.f_lo && f <= band.f_hi
        })
        .collect();
    let (Some(&first), Some(&last)) = (in_band.first(), in_band.last()) else {
        return Err(PulseError::NoInBandPeak);
    };
    let mut peak = first;
    for &k in &in_band {
        if power[k] > power[peak] {
            peak = k;
        }
    }
    if in_band.iter().all(|&k| power[k] < 1e-12) {
        return Err(PulseError::NoInBandPeak);
    }
    if (peak == first && peak > 0 && power[peak - 1] > power[peak])
        || (peak == last && peak < n / 2 && power[peak + 1] > power[peak])
    {
        return Err(PulseError::NoInBandPeak);
    }

    let mut offset = 0.0;
    if peak > 0 && peak < n / 2 {
        let (y0, y1, y2) = (power[peak - 1], power[peak], power[peak + 1]);
        let denom = y0 - 2.0 * y1 + y2;
        if denom.abs() > f64::EPSILON * y1 {
            offset = (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5);
        }
    }
    let freq = (peak as f64 + offset) * bin_hz;
    let mean_power = in_band.iter().map(|&k| power[k]).sum::<f64>() / in_band.len() as f64;
    Ok(PeakEstimate {
        bpm: (60.0 * freq).clamp(MIN_BPM, MAX_BPM),
        confidence: power[peak] / mean_power,
    })
}

/// One-sided power of the mean-removed, Hann-windowed series.
fn power_spectrum(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
            Complex64::new((v - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let norm = 1.0 / (n as f64 * n as f64);
    buf[..=n / 2].iter().map(|c| c.norm_sqr() * norm).collect()
}

/// Exponential smoothing; the first value seeds the state.
pub fn smooth(previous: Option<f64>, new_bpm: f64, factor: f64) -> f64 {
    match previous {
        None => new_bpm,
        Some(p) => p + factor * (new_bpm - p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CalibrationState {
    Calibrating,
    Ready,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpmReading {
    pub timestamp_ms: u64,
    /// Smoothed rate; absent while calibrating or when no pulse is found.
    pub bpm: Option<f64>,
    pub confidence: f64,
    pub window_samples: usize,
    pub calibrating: bool,
    /// The observed frame rate fell below the configured minimum.
    pub low_fps: bool,
}

/// What happened to one pushed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutcome {
    pub reading: Option<BpmReading>,
    pub gated: bool,
    pub best: Option<Detection>,
}

/// Stateful estimator for one subject. Not shareable across threads while
/// frames are being pushed.
#[derive(Debug, Clone)]
pub struct PulseSession {
    config: PulseConfig,
    gate: GateConfig,
    filter: StreamingBandpass,
    ring: VecDeque<(u64, f64)>,
    capacity: usize,
    state: CalibrationState,
    smoothed: Option<f64>,
    last_reading: Option<BpmReading>,
    last_seen_ms: Option<u64>,
    last_accepted_ms: Option<u64>,
    calib_start_ms: Option<u64>,
    calib_samples: u64,
    gated_since_ms: Option<u64>,
    frames_seen: u64,
    frames_gated_out: u64,
}

impl PulseSession {
    pub fn new(config: PulseConfig, gate: GateConfig) -> Result<Self, PulseError> {
        config.validate()?;
        gate.validate()?;
        let capacity = (config.window_seconds * MAX_FPS).ceil() as usize + 1;
        Ok(Self {
            filter: StreamingBandpass::from_band(&config.band),
            config,
            gate,
            ring: VecDeque::new(),
            capacity,
            state: CalibrationState::Calibrating,
            smoothed: None,
            last_reading: None,
            last_seen_ms: None,
            last_accepted_ms: None,
            calib_start_ms: None,
            calib_samples: 0,
            gated_since_ms: None,
            frames_seen: 0,
            frames_gated_out: 0,
        })
    }

    pub fn config(&self) -> &PulseConfig {
        &self.config
    }

    pub fn gate_config(&self) -> &GateConfig {
        &self.gate
    }

    pub fn state(&self) -> CalibrationState {
        self.state
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn frames_gated_out(&self) -> u64 {
        self.frames_gated_out
    }

    pub fn last_reading(&self) -> Option<BpmReading> {
        self.last_reading
    }

    pub fn smoothed_bpm(&self) -> Option<f64> {
        self.smoothed
    }

    pub fn window_len(&self) -> usize {
        self.ring.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Gates the frame against `detections` and, when accepted, folds it
    /// into the estimate.
    pub fn push_frame(&mut self, frame: &Frame, detections: &[Detection]) -> Result<FrameOutcome, PulseError> {
        let ts = frame.timestamp_ms();
        if let Some(last) = self.last_seen_ms {
            if ts <= last {
                return Err(PulseError::NonMonotonicTimestamp { last, got: ts });
            }
        }
        let decision = gate(&self.gate, detections);
        self.last_seen_ms = Some(ts);
        self.frames_seen += 1;

        if !decision.accepted {
            self.frames_gated_out += 1;
            let since = *self.gated_since_ms.get_or_insert(ts);
            if ts - since >= GATED_RESET_MS && self.state == CalibrationState::Ready {
                self.restart();
                self.smoothed = None;
                self.last_reading = Some(self.calibrating_reading(ts, false));
            }
            return Ok(FrameOutcome {
                reading: self.last_reading,
                gated: true,
                best: decision.best,
            });
        }
        self.gated_since_ms = None;

        let sample = self.spatial_sample(frame)?;
        if self.last_accepted_ms.is_some_and(|prev| ts - prev > MAX_GAP_MS) {
            self.restart();
        }
        let dt = self
            .last_accepted_ms
            .map(|prev| (ts - prev) as f64 / 1000.0)
            .unwrap_or(0.0);
        let value = self.filter.push(sample, dt);
        self.last_accepted_ms = Some(ts);
        self.calib_start_ms.get_or_insert(ts);
        self.calib_samples += 1;

        self.ring.push_back((ts, value));
        let window_ms = (self.config.window_seconds * 1000.0).round() as u64;
        while self.ring.front().is_some_and(|&(t0, _)| ts - t0 >= window_ms) || self.ring.len() > self.capacity {
            self.ring.pop_front();
        }

        let reading = self.evaluate(ts);
        self.last_reading = Some(reading);
        Ok(FrameOutcome {
            reading: Some(reading),
            gated: false,
            best: decision.best,
        })
    }

    /// Mean of the analysis region after `analysis_level` reductions.
    fn spatial_sample(&self, frame: &Frame) -> Result<f64, PulseError> {
        let mut plane = extract_channel_region(frame, self.config.channel, &self.gate.analysis_roi)?;
        for _ in 0..self.config.analysis_level {
            if plane.width() < 2 || plane.height() < 2 {
                break;
            }
            plane = blur_downsample(&plane)?;
        }
        Ok(plane.mean())
    }

    fn restart(&mut self) {
        self.ring.clear();
        self.filter.reset();
        self.state = CalibrationState::Calibrating;
        self.last_accepted_ms = None;
        self.calib_start_ms = None;
        self.calib_samples = 0;
    }

    /// Accepted samples cover the calibration span once
    /// `n * mean_interval >= calibration`, i.e. `n * span >= calib * (n - 1)`.
    fn calibrated(&self, ts: u64) -> bool {
        let n = self.calib_samples;
        let Some(start) = self.calib_start_ms else {
            return false;
        };
        if n < 2 {
            return false;
        }
        let calib_ms = (self.config.calibration_seconds * 1000.0).round() as u64;
        (ts - start) * n >= calib_ms * (n - 1)
    }

    fn calibrating_reading(&self, ts: u64, low_fps: bool) -> BpmReading {
        BpmReading {
            timestamp_ms: ts,
            bpm: None,
            confidence: 0.0,
            window_samples: self.ring.len(),
            calibrating: true,
            low_fps,
        }
    }

    fn evaluate(&mut self, ts: u64) -> BpmReading {
        if self.state == CalibrationState::Calibrating {
            if !self.calibrated(ts) {
                return self.calibrating_reading(ts, false);
            }
            self.state = CalibrationState::Ready;
        }

        let n = self.ring.len();
        let (first, _) = self.ring[0];
        let span_ms = ts - first;
        let fps = (n - 1) as f64 * 1000.0 / span_ms as f64;
        let full_window = (n as f64 / fps) >= self.config.window_seconds - 1e-9;
        // Millisecond timestamps can shorten the span by up to 1 ms.
        let fastest = (n - 1) as f64 * 1000.0 / span_ms.saturating_sub(1).max(1) as f64;
        if fastest < self.config.min_fps && full_window {
            return self.calibrating_reading(ts, true);
        }

        let values: Vec<f64> = self.ring.iter().map(|&(_, v)| v).collect();
        let estimate = TimeSeries::new(fps, values)
            .map_err(PulseError::from)
            .and_then(|s| estimate_bpm(&s, &self.config.band));
        let mut reading = BpmReading {
            timestamp_ms: ts,
            bpm: None,
            confidence: 0.0,
            window_samples: n,
            calibrating: false,
            low_fps: false,
        };
        match estimate {
            Ok(peak) => {
                reading.confidence = peak.confidence;
                if peak.confidence >= self.config.confidence_threshold {
                    let s = smooth(self.smoothed, peak.bpm, self.config.smoothing_factor);
                    self.smoothed = Some(s);
                    reading.bpm = Some(s);
                }
            }
            Err(PulseError::NoInBandPeak) => {}
            // Too few samples or a rate too low for the band: keep waiting.
            Err(_) => reading.calibrating = true,
        }
        reading
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Roi;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tone(bpm: f64, fs: f64, seconds: f64) -> TimeSeries {
        let n = (fs * seconds).round() as usize;
        let f = bpm / 60.0;
        let v = (0..n).map(|i| (2.0 * PI * f * i as f64 / fs + 0.4).sin()).collect();
        TimeSeries::new(fs, v).unwrap()
    }

    #[test]
    fn on_bin_tone() {
        let est = estimate_bpm(&tone(72.0, 20.0, 10.0), &BandConfig::default()).unwrap();
        assert!((est.bpm - 72.0).abs() <= 0.5, "{}", est.bpm);
        assert!(est.confidence > CONFIDENCE_THRESHOLD);
    }

    #[test]
    fn half_bin_tone() {
        let est = estimate_bpm(&tone(75.0, 20.0, 10.0), &BandConfig::default()).unwrap();
        assert!((est.bpm - 75.0).abs() <= 1.5, "{}", est.bpm);
    }

    #[test]
    fn too_short_and_silent() {
        let band = BandConfig::default();
        assert!(matches!(
            estimate_bpm(&tone(72.0, 20.0, 1.9), &band),
            Err(PulseError::TooShort { .. })
        ));
        let flat = TimeSeries::new(20.0, vec![4.0; 200]).unwrap();
        assert_eq!(estimate_bpm(&flat, &band), Err(PulseError::NoInBandPeak));
    }

    #[test]
    fn out_of_band_tones_rejected() {
        let band = BandConfig::default();
        for fs in [15.0, 20.0, 30.0] {
            for bpm in [18.0, 300.0] {
                let r = estimate_bpm(&tone(bpm, fs, 10.0), &band);
                assert_eq!(r, Err(PulseError::NoInBandPeak), "{bpm} bpm at {fs} Hz");
            }
        }
    }

    #[test]
    fn smooth_examples() {
        assert_eq!(smooth(None, 80.0, 0.3), 80.0);
        assert!((smooth(Some(80.0), 90.0, 0.3) - 83.0).abs() < 1e-12);
        assert_eq!(smooth(Some(55.0), 90.0, 1.0), 90.0);
    }

    #[test]
    fn config_validation() {
        let mut c = PulseConfig::default();
        assert!(c.validate().is_ok());
        c.analysis_level = 3;
        assert!(c.validate().is_err());
        let c = PulseConfig {
            window_seconds: 4.0,
            ..PulseConfig::default()
        };
        assert!(c.validate().is_err());
        let c = PulseConfig {
            smoothing_factor: 0.0,
            ..PulseConfig::default()
        };
        assert!(c.validate().is_err());
    }

    /// 99th percentile of the confidence of Gaussian white-noise windows.
    #[test]
    fn noise_confidence_percentile() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let band = BandConfig::default();
        let mut conf: Vec<f64> = (0..1000)
            .map(|_| {
                let v = (0..200)
                    .map(|_| {
                        // Box-Muller
                        let u1: f64 = 1.0 - rng.random::<f64>();
                        let u2: f64 = rng.random();
                        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
                    })
                    .collect();
                let s = TimeSeries::new(20.0, v).unwrap();
                match estimate_bpm(&s, &band) {
                    Ok(p) => p.confidence,
                    Err(_) => 0.0,
                }
            })
            .collect();
        conf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p99 = conf[989];
        eprintln!("noise confidence: median {:.3}, p99 {:.3}", conf[500], p99);
        assert!(p99 < CONFIDENCE_THRESHOLD, "p99 {p99}");
    }

    fn small_frame(ts: u64, green: u8) -> Frame {
        Frame::solid(16, 16, ts, [150, green, 100])
    }

    fn session() -> PulseSession {
        PulseSession::new(PulseConfig::default(), GateConfig::new(Roi::new(0, 0, 16, 16).unwrap())).unwrap()
    }

    fn everywhere() -> Vec<Detection> {
        vec![Detection {
            roi: Roi::new(0, 0, 16, 16).unwrap(),
            score: 1.0,
        }]
    }

    #[test]
    fn calibration_boundary_at_twenty_fps() {
        let mut s = session();
        let dets = everywhere();
        for i in 0..99u64 {
            let out = s.push_frame(&small_frame(i * 50, 120), &dets).unwrap();
            assert!(out.reading.unwrap().calibrating, "frame {}", i + 1);
        }
        let out = s.push_frame(&small_frame(99 * 50, 120), &dets).unwrap();
        let r = out.reading.unwrap();
        assert!(!r.calibrating);
        assert_eq!(s.state(), CalibrationState::Ready);
        // Constant colour: no pulse.
        assert_eq!(r.bpm, None);
    }

    #[test]
    fn non_monotonic_timestamp() {
        let mut s = session();
        let dets = everywhere();
        s.push_frame(&small_frame(100, 1), &dets).unwrap();
        assert_eq!(
            s.push_frame(&small_frame(100, 1), &dets).unwrap_err(),
            PulseError::NonMonotonicTimestamp { last: 100, got: 100 }
        );
    }

    #[test]
    fn gated_frames_keep_previous_reading() {
        let mut s = session();
        let dets = everywhere();
        let out = s.push_frame(&small_frame(0, 1), &[]).unwrap();
        assert!(out.gated && out.reading.is_none());
        let first = s.push_frame(&small_frame(50, 1), &dets).unwrap().reading;
        let out = s.push_frame(&small_frame(100, 1), &[]).unwrap();
        assert!(out.gated);
        assert_eq!(out.reading, first);
        assert_eq!(s.frames_gated_out(), 2);
        assert_eq!(s.frames_seen(), 3);
    }

    #[test]
    fn long_gap_restarts_calibration() {
        let mut s = session();
        let dets = everywhere();
        for i in 0..120u64 {
            s.push_frame(&small_frame(i * 50, 120), &dets).unwrap();
        }
        assert_eq!(s.state(), CalibrationState::Ready);
        let r = s.push_frame(&small_frame(119 * 50 + 1_500, 120), &dets).unwrap();
        assert!(r.reading.unwrap().calibrating);
        assert_eq!(s.window_len(), 1);
    }

    #[test]
    fn long_gating_reverts_to_calibrating() {
        let mut s = session();
        let dets = everywhere();
        for i in 0..120u64 {
            s.push_frame(&small_frame(i * 50, 120), &dets).unwrap();
        }
        let mut t = 120 * 50;
        let mut last = None;
        while t <= 120 * 50 + 3_000 {
            last = s.push_frame(&small_frame(t, 120), &[]).unwrap().reading;
            t += 50;
        }
        assert_eq!(s.state(), CalibrationState::Calibrating);
        assert!(last.unwrap().calibrating);
    }

    #[test]
    fn low_fps_flagged_after_full_window() {
        let mut s = session();
        let dets = everywhere();
        let mut last = None;
        // 12 fps: 83 ms spacing, 11 s of frames.
        for i in 0..132u64 {
            last = s.push_frame(&small_frame(i * 83, 120), &dets).unwrap().reading;
        }
        let r = last.unwrap();
        assert!(r.calibrating && r.low_fps);
    }

    #[test]
    fn truncated_timestamps_at_min_fps_are_not_low() {
        let mut s = session();
        let dets = everywhere();
        // 15 fps exactly, timestamps truncated to whole milliseconds.
        for i in 0..300u64 {
            let r = s
                .push_frame(&small_frame(i * 1000 / 15, 120), &dets)
                .unwrap()
                .reading
                .unwrap();
            assert!(!r.low_fps, "frame {i}");
        }
    }

    #[test]
    fn ring_bounded_by_window() {
        let mut s = session();
        let dets = everywhere();
        for i in 0..400u64 {
            s.push_frame(&small_frame(i * 50, 120), &dets).unwrap();
            assert!(s.window_len() <= 200);
            assert!(s.window_len() <= s.capacity());
        }
        assert_eq!(s.window_len(), 200);
    }
}

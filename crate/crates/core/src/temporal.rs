//! Temporal band-pass filtering and magnification of per-pixel signals.
//!
//! Two filters are provided. [`ideal_bandpass`] works on a whole window: it
//! transforms the series, zeroes every bin outside `[f_lo, f_hi]` and
//! transforms back. [`StreamingBandpass`] is the per-sample real-time form:
//! the difference of two first-order exponential low-passes.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::TimeSeries;

/// Minimum window length accepted by [`ideal_bandpass`].
pub const MIN_BANDPASS_SAMPLES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("band upper edge {f_hi} Hz is not below the Nyquist frequency {nyquist} Hz")]
    NyquistViolation { f_hi: f64, nyquist: f64 },
    #[error("series has {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("level {level} has no attenuation entry ({available} configured)")]
    LevelOutOfRange { level: usize, available: usize },
    #[error("series lengths or rates differ ({0} vs {1} samples)")]
    LengthMismatch(usize, usize),
    #[error("invalid band configuration: {0}")]
    InvalidBand(String),
}

/// Pass band, magnification factor and per-level attenuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub f_lo: f64,
    pub f_hi: f64,
    pub alpha: f64,
    pub level_attenuation: Vec<f64>,
}

impl Default for BandConfig {
    /// 0.4-4 Hz (24-240 bpm), alpha 50, finest level halved.
    fn default() -> Self {
        Self {
            f_lo: 0.4,
            f_hi: 4.0,
            alpha: 50.0,
            level_attenuation: vec![0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        }
    }
}

impl BandConfig {
    pub fn with_band(f_lo: f64, f_hi: f64) -> Self {
        Self {
            f_lo,
            f_hi,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TemporalError> {
        let bad = |m: &str| Err(TemporalError::InvalidBand(m.to_owned()));
        if !(self.f_lo.is_finite() && self.f_hi.is_finite()) || self.f_lo <= 0.0 {
            return bad("band edges must be finite with f_lo > 0");
        }
        if self.f_lo >= self.f_hi {
            return bad("f_lo must be below f_hi");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be finite and non-negative");
        }
        if self.level_attenuation.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("attenuation values must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn validate_for_rate(&self, sample_rate_hz: f64) -> Result<(), TemporalError> {
        self.validate()?;
        let nyquist = sample_rate_hz / 2.0;
        if self.f_hi >= nyquist {
            return Err(TemporalError::NyquistViolation {
                f_hi: self.f_hi,
                nyquist,
            });
        }
        Ok(())
    }

    pub fn gain(&self, level: usize) -> Result<f64, TemporalError> {
        self.level_attenuation
            .get(level)
            .map(|a| a * self.alpha)
            .ok_or(TemporalError::LevelOutOfRange {
                level,
                available: self.level_attenuation.len(),
            })
    }
}

/// Reusable ideal band-pass for many series of one length and rate.
pub struct IdealBandpass {
    len: usize,
    keep: Vec<bool>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    buf: Vec<Complex64>,
}

impl IdealBandpass {
    pub fn new(len: usize, sample_rate_hz: f64, band: &BandConfig) -> Result<Self, TemporalError> {
        if len < MIN_BANDPASS_SAMPLES {
            return Err(TemporalError::TooShort {
                len,
                min: MIN_BANDPASS_SAMPLES,
            });
        }
        band.validate_for_rate(sample_rate_hz)?;
        let keep = (0..len)
            .map(|k| {
                let f = k.min(len - k) as f64 * sample_rate_hz / len as f64;
                f >= band.f_lo && f <= band.f_hi
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Ok(Self {
            len,
            keep,
            forward,
            inverse,
            scratch: vec![Complex64::default(); scratch_len],
            buf: vec![Complex64::default(); len],
        })
    }

    /// Filters `values` in place. Panics if the length differs from the one
    /// the filter was planned for.
    pub fn apply(&mut self, values: &mut [f64]) {
        assert_eq!(values.len(), self.len, "series length differs from plan");
        for (b, &v) in self.buf.iter_mut().zip(values.iter()) {
            *b = Complex64::new(v, 0.0);
        }
        self.forward.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (b, &keep) in self.buf.iter_mut().zip(&self.keep) {
            if !keep {
                *b = Complex64::default();
            }
        }
        self.inverse.process_with_scratch(&mut self.buf, &mut self.scratch);
        let norm = 1.0 / self.len as f64;
        for (v, b) in values.iter_mut().zip(&self.buf) {
            *v = b.re * norm;
        }
    }
}

/// Keeps only the transform bins whose frequency magnitude lies in
/// `[f_lo, f_hi]`.
pub fn ideal_bandpass(series: &TimeSeries, band: &BandConfig) -> Result<TimeSeries, TemporalError> {
    let mut filter = IdealBandpass::new(series.len(), series.sample_rate_hz(), band)?;
    let mut values = series.values().to_vec();
    filter.apply(&mut values);
    Ok(series.with_values(values))
}

/// Difference-of-low-pass band-pass for one signal, advanced one sample at a
/// time.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingBandpass {
    f_lo: f64,
    f_hi: f64,
    low: f64,
    high: f64,
    initialized: bool,
}

impl StreamingBandpass {
    pub fn new(f_lo: f64, f_hi: f64) -> Self {
        Self {
            f_lo,
            f_hi,
            low: 0.0,
            high: 0.0,
            initialized: false,
        }
    }

    pub fn from_band(band: &BandConfig) -> Self {
        Self::new(band.f_lo, band.f_hi)
    }

    /// Smoothing coefficient of a one-pole low-pass with cutoff `f` at step `dt`.
    pub fn coefficient(f: f64, dt: f64) -> f64 {
        let x = 2.0 * PI * f * dt;
        x / (x + 1.0)
    }

    /// Feeds one sample taken `dt_s` seconds after the previous one.
    pub fn push(&mut self, sample: f64, dt_s: f64) -> f64 {
        if !self.initialized {
            self.low = sample;
            self.high = sample;
            self.initialized = true;
            return 0.0;
        }
        debug_assert!(dt_s > 0.0);
        self.low += Self::coefficient(self.f_lo, dt_s) * (sample - self.low);
        self.high += Self::coefficient(self.f_hi, dt_s) * (sample - self.high);
        self.high - self.low
    }

    pub fn reset(&mut self) {
        self.initialized = false;
        self.low = 0.0;
        self.high = 0.0;
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }
}

/// Scales every sample by `alpha * level_attenuation[level]`.
pub fn amplify(series: &TimeSeries, band: &BandConfig, level: usize) -> Result<TimeSeries, TemporalError> {
    let gain = band.gain(level)?;
    Ok(series.with_values(series.values().iter().map(|v| v * gain).collect()))
}

/// `original + amplify(filtered)`.
pub fn magnify_and_recombine(
    original: &TimeSeries,
    filtered: &TimeSeries,
    band: &BandConfig,
    level: usize,
) -> Result<TimeSeries, TemporalError> {
    if original.len() != filtered.len() || original.sample_rate_hz() != filtered.sample_rate_hz() {
        return Err(TemporalError::LengthMismatch(original.len(), filtered.len()));
    }
    let gain = band.gain(level)?;
    let values = original
        .values()
        .iter()
        .zip(filtered.values())
        .map(|(o, f)| o + gain * f)
        .collect();
    Ok(original.with_values(values))
}

//! Whole-clip Eulerian colour magnification.
//!
//! Every channel of every frame is decomposed into a Laplacian pyramid.
//! Each pyramid coefficient, followed through time, is ideal band-passed,
//! scaled by the level gain and added back before the pyramid is collapsed.
//! The residual uses the gain of index `levels`.
//!
//! The whole clip is held in memory as `f64` pyramids, one channel at a time:
//! roughly `frames * width * height * 11` bytes.

use thiserror::Error;

use crate::frame::{extract_channel, Channel, Frame, FrameError, GrayPlane};
use crate::pyramid::{build_laplacian, collapse_laplacian, LaplacianPyramid, PyramidError};
use crate::temporal::{BandConfig, IdealBandpass, TemporalError};

#[derive(Debug, Error)]
pub enum MagnifyError {
    #[error("no frames to magnify")]
    Empty,
    #[error("frame {index} is {got_w}x{got_h}, clip is {want_w}x{want_h}")]
    DimensionMismatch {
        index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Pyramid(#[from] PyramidError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Magnifies `frames`, sampled at `sample_rate_hz`, and returns frames with
/// the same timestamps. Output samples are rounded and clamped to `[0, 255]`.
pub fn magnify_clip(
    frames: &[Frame],
    sample_rate_hz: f64,
    band: &BandConfig,
    levels: usize,
) -> Result<Vec<Frame>, MagnifyError> {
    let first = frames.first().ok_or(MagnifyError::Empty)?;
    let (w, h) = (first.width(), first.height());
    for (index, f) in frames.iter().enumerate() {
        if (f.width(), f.height()) != (w, h) {
            return Err(MagnifyError::DimensionMismatch {
                index,
                got_w: f.width(),
                got_h: f.height(),
                want_w: w,
                want_h: h,
            });
        }
    }
    band.gain(levels)?;
    let mut filter = IdealBandpass::new(frames.len(), sample_rate_hz, band)?;

    let mut out: Vec<Vec<u8>> = vec![vec![0; w * h * 3]; frames.len()];
    for (c, channel) in [Channel::Red, Channel::Green, Channel::Blue].into_iter().enumerate() {
        let pyramids = frames
            .iter()
            .map(|f| build_laplacian(&extract_channel(f, channel), levels))
            .collect::<Result<Vec<_>, _>>()?;
        let magnified = magnify_pyramids(pyramids, &mut filter, band)?;
        for (pyr, buf) in magnified.iter().zip(&mut out) {
            let plane = collapse_laplacian(pyr);
            for (px, v) in buf.chunks_exact_mut(3).zip(plane.values()) {
                px[c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    frames
        .iter()
        .zip(out)
        .map(|(f, px)| Frame::new(w, h, f.timestamp_ms(), px).map_err(MagnifyError::from))
        .collect()
}

/// Band-passes each coefficient series across `pyramids` and adds it back
/// with the level gain.
fn magnify_pyramids(
    pyramids: Vec<LaplacianPyramid>,
    filter: &mut IdealBandpass,
    band: &BandConfig,
) -> Result<Vec<LaplacianPyramid>, MagnifyError> {
    let levels = pyramids[0].levels();
    // Bands followed by the residual, per frame.
    let mut dims = Vec::new();
    let mut planes: Vec<Vec<Vec<f64>>> = Vec::with_capacity(pyramids.len());
    for p in pyramids {
        let (bands, residual) = p.into_parts();
        dims = bands.iter().chain([&residual]).map(GrayPlane::dims).collect();
        planes.push(
            bands
                .into_iter()
                .chain([residual])
                .map(GrayPlane::into_values)
                .collect(),
        );
    }

    let mut series = vec![0.0; planes.len()];
    for level in 0..=levels {
        let gain = band.gain(level)?;
        if gain == 0.0 {
            continue;
        }
        let (pw, ph) = dims[level];
        for i in 0..pw * ph {
            for (s, p) in series.iter_mut().zip(&planes) {
                *s = p[level][i];
            }
            filter.apply(&mut series);
            for (s, p) in series.iter().zip(&mut planes) {
                p[level][i] += gain * s;
            }
        }
    }

    planes
        .into_iter()
        .map(|mut p| {
            let residual = p.pop().expect("residual");
            let (rw, rh) = dims[levels];
            let bands = p
                .into_iter()
                .zip(&dims)
                .map(|(v, &(pw, ph))| GrayPlane::new(pw, ph, v))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(LaplacianPyramid::from_parts(bands, GrayPlane::new(rw, rh, residual)?)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_pulse_video, PulseScene};

    fn scene(bpm: f64) -> Vec<Frame> {
        let s = PulseScene {
            width: 64,
            height: 48,
            face_rect: crate::frame::Roi::new(16, 8, 32, 32).unwrap(),
            duration_s: 10.0,
            pulse_bpm: bpm,
            ..PulseScene::default()
        };
        generate_pulse_video(s).unwrap().collect()
    }

    #[test]
    fn zero_alpha_is_identity() {
        let frames = scene(72.0);
        let band = BandConfig {
            alpha: 0.0,
            ..BandConfig::default()
        };
        let out = magnify_clip(&frames, 20.0, &band, 3).unwrap();
        assert_eq!(out, frames);
    }

    #[test]
    fn rejects_mixed_sizes_and_short_clips() {
        let mut frames = scene(72.0);
        frames.truncate(20);
        frames.push(Frame::solid(32, 32, 10_000, [0; 3]));
        assert!(matches!(
            magnify_clip(&frames, 20.0, &BandConfig::default(), 2),
            Err(MagnifyError::DimensionMismatch { index: 20, .. })
        ));
        assert!(matches!(
            magnify_clip(&frames[..4], 20.0, &BandConfig::default(), 2),
            Err(MagnifyError::Temporal(TemporalError::TooShort { .. }))
        ));
        assert!(matches!(
            magnify_clip(&[], 20.0, &BandConfig::default(), 2),
            Err(MagnifyError::Empty)
        ));
    }
}

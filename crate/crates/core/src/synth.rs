//! Deterministic synthetic inputs with known ground truth.
//!
//! Noise is Gaussian from a ChaCha8 stream: the generator is seeded with
//! `seed_from_u64(scene.seed)` and switched to stream `frame_index`, so every
//! frame can be produced independently. Each pair of `u64` draws becomes two
//! normals by Box-Muller, with `u = (x >> 11) * 2^-53`. Pixels are visited in
//! row-major order, channels R, G, B.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Frame, GrayPlane, Roi, MIN_FRAME_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid scene: {0}")]
pub struct SynthError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Background {
    Static {
        rgb: [u8; 3],
    },
    /// Sinusoidal brightness change on all three channels.
    Flicker {
        rgb: [u8; 3],
        bpm: f64,
        amplitude: f64,
    },
}

impl Default for Background {
    fn default() -> Self {
        Background::Static { rgb: [60, 60, 60] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseScene {
    pub fps: f64,
    pub duration_s: f64,
    pub width: usize,
    pub height: usize,
    pub face_rect: Roi,
    pub skin_base: [u8; 3],
    pub pulse_bpm: f64,
    /// Peak deviation of the green channel, in gray levels.
    pub pulse_amplitude: f64,
    pub noise_sigma: f64,
    pub background: Background,
    pub seed: u64,
}

impl Default for PulseScene {
    fn default() -> Self {
        Self {
            fps: 20.0,
            duration_s: 15.0,
            width: 320,
            height: 240,
            face_rect: Roi::default_analysis(320, 240),
            skin_base: [180, 120, 100],
            pulse_bpm: 72.0,
            pulse_amplitude: 1.0,
            noise_sigma: 2.0,
            background: Background::default(),
            seed: 0,
        }
    }
}

impl PulseScene {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError(m));
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps {} must be positive", self.fps));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration {} must be positive", self.duration_s));
        }
        if self.width < MIN_FRAME_DIM || self.height < MIN_FRAME_DIM {
            return bad(format!(
                "frame {}x{} is below {MIN_FRAME_DIM}x{MIN_FRAME_DIM}",
                self.width, self.height
            ));
        }
        if !(self.pulse_bpm > 0.0 && self.pulse_bpm < self.fps * 30.0) {
            return bad(format!("pulse_bpm {} must lie in (0, fps*30)", self.pulse_bpm));
        }
        for (name, v) in [
            ("pulse_amplitude", self.pulse_amplitude),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} {v} must be non-negative"));
            }
        }
        if let Background::Flicker { bpm, amplitude, .. } = self.background {
            if !(bpm > 0.0 && bpm < self.fps * 30.0) {
                return bad(format!("flicker bpm {bpm} must lie in (0, fps*30)"));
            }
            if !(amplitude.is_finite() && amplitude >= 0.0) {
                return bad(format!("flicker amplitude {amplitude} must be non-negative"));
            }
        }
        let r = &self.face_rect;
        if r.x < 0 || r.y < 0 || r.right() > self.width as i64 || r.bottom() > self.height as i64 {
            return bad(format!("face {r} is not inside {}x{}", self.width, self.height));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps + 1e-9).floor() as usize
    }

    fn fps_mhz(&self) -> u64 {
        (self.fps * 1000.0).round() as u64
    }

    pub fn timestamp_ms(&self, index: usize) -> u64 {
        index as u64 * 1_000_000 / self.fps_mhz()
    }

    /// Frame `index`, independent of every other frame.
    pub fn frame(&self, index: usize) -> Frame {
        let t = index as f64 / self.fps;
        let pulse = self.pulse_amplitude * (2.0 * PI * self.pulse_bpm / 60.0 * t).sin();
        let (bg_rgb, flicker) = match self.background {
            Background::Static { rgb } => (rgb, 0.0),
            Background::Flicker { rgb, bpm, amplitude } => (rgb, amplitude * (2.0 * PI * bpm / 60.0 * t).sin()),
        };
        let face = [
            f64::from(self.skin_base[0]),
            f64::from(self.skin_base[1]) + pulse,
            f64::from(self.skin_base[2]),
        ];
        let back = bg_rgb.map(|c| f64::from(c) + flicker);

        let mut noise = Normals::new(self.seed, index as u64, self.noise_sigma);
        let r = &self.face_rect;
        let (fx0, fy0) = (r.x as usize, r.y as usize);
        let (fx1, fy1) = (r.right() as usize, r.bottom() as usize);
        let mut pixels = Vec::with_capacity(self.width * self.height * 3);
        for y in 0..self.height {
            let face_row = (fy0..fy1).contains(&y);
            for x in 0..self.width {
                let base = if face_row && (fx0..fx1).contains(&x) {
                    &face
                } else {
                    &back
                };
                for &b in base {
                    pixels.push((b + noise.next()).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Frame::new(self.width, self.height, self.timestamp_ms(index), pixels).expect("dimensions validated")
    }
}

/// Seeded standard normals scaled by `sigma`; zero sigma draws nothing.
struct Normals {
    rng: ChaCha8Rng,
    sigma: f64,
    spare: Option<f64>,
}

impl Normals {
    fn new(seed: u64, stream: u64, sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            sigma,
            spare: None,
        }
    }

    fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn next(&mut self) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        if let Some(z) = self.spare.take() {
            return z * self.sigma;
        }
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c * self.sigma
    }
}

/// Lazy frame stream over a validated scene.
#[derive(Debug, Clone)]
pub struct PulseVideo {
    scene: PulseScene,
    next: usize,
    count: usize,
}

impl PulseVideo {
    pub fn scene(&self) -> &PulseScene {
        &self.scene
    }
}

impl Iterator for PulseVideo {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        if self.next >= self.count {
            return None;
        }
        let f = self.scene.frame(self.next);
        self.next += 1;
        Some(f)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for PulseVideo {}

pub fn generate_pulse_video(scene: PulseScene) -> Result<PulseVideo, SynthError> {
    scene.validate()?;
    let count = scene.frame_count();
    Ok(PulseVideo { scene, next: 0, count })
}

/// A face covering `face_area_ratio` of the default analysis region, centred
/// in it, on a background that may flicker.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceScene {
    pub face_area_ratio: f64,
    pub face_bpm: f64,
    pub face_amplitude: f64,
    /// `None` leaves the background static.
    pub bg_flicker_bpm: Option<f64>,
    pub bg_amplitude: f64,
    /// Frame size, fps, duration, colours, noise and seed come from here.
    pub base: PulseScene,
}

impl DistanceScene {
    pub fn new(face_area_ratio: f64, face_bpm: f64, bg_flicker_bpm: Option<f64>) -> Self {
        Self {
            face_area_ratio,
            face_bpm,
            face_amplitude: 1.0,
            bg_flicker_bpm,
            bg_amplitude: 3.0,
            base: PulseScene::default(),
        }
    }

    /// The equivalent plain scene.
    pub fn to_scene(&self) -> Result<PulseScene, SynthError> {
        let r = self.face_area_ratio;
        if !(r > 0.0 && r <= 1.0) {
            return Err(SynthError(format!("face area ratio {r} must lie in (0, 1]")));
        }
        let roi = Roi::default_analysis(self.base.width, self.base.height);
        let target = r * roi.area() as f64;
        let fw = ((f64::from(roi.w) * r.sqrt()).round() as u32).clamp(1, roi.w);
        let fh = ((target / f64::from(fw)).round() as u32).clamp(1, roi.h);
        let face = Roi {
            x: roi.x + i64::from((roi.w - fw) / 2),
            y: roi.y + i64::from((roi.h - fh) / 2),
            w: fw,
            h: fh,
        };
        let rgb = match self.base.background {
            Background::Static { rgb } | Background::Flicker { rgb, .. } => rgb,
        };
        let background = match self.bg_flicker_bpm {
            Some(bpm) => Background::Flicker {
                rgb,
                bpm,
                amplitude: self.bg_amplitude,
            },
            None => Background::Static { rgb },
        };
        let scene = PulseScene {
            face_rect: face,
            pulse_bpm: self.face_bpm,
            pulse_amplitude: self.face_amplitude,
            background,
            ..self.base.clone()
        };
        scene.validate()?;
        Ok(scene)
    }
}

pub fn generate_distance_scene(cfg: &DistanceScene) -> Result<PulseVideo, SynthError> {
    generate_pulse_video(cfg.to_scene()?)
}

pub const FACE_SIZE: usize = 48;

/// Labelled 48x48 faces, label `i % 7` for sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFaceSet {
    pub samples: Vec<(GrayPlane, usize)>,
}

/// Class `c` is a grating at angle `c * pi / 7` with a class-specific
/// spatial frequency, plus Gaussian noise of sigma 12 from stream `i`.
pub fn generate_face_set(n: usize, seed: u64) -> Result<SyntheticFaceSet, SynthError> {
    if n < 7 {
        return Err(SynthError(format!("face set needs at least 7 samples, asked for {n}")));
    }
    let samples = (0..n)
        .map(|i| {
            let label = i % 7;
            let theta = label as f64 * PI / 7.0;
            let freq = 1.0 / (5.0 + label as f64);
            let (s, c) = theta.sin_cos();
            let mut noise = Normals::new(seed, i as u64, 12.0);
            let mut values = Vec::with_capacity(FACE_SIZE * FACE_SIZE);
            for y in 0..FACE_SIZE {
                for x in 0..FACE_SIZE {
                    let u = x as f64 * c + y as f64 * s;
                    let v = 128.0 + 70.0 * (2.0 * PI * freq * u).sin() + noise.next();
                    values.push(v.round().clamp(0.0, 255.0));
                }
            }
            (GrayPlane::new(FACE_SIZE, FACE_SIZE, values).expect("finite"), label)
        })
        .collect();
    Ok(SyntheticFaceSet { samples })
}

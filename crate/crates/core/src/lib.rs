//! Heart-rate estimation from facial video by Eulerian colour magnification,
//! plus a compact depthwise-separable CNN for expression classification.
//!
//! Modules, bottom-up:
//!
//! - [`frame`]: RGB frames, scalar planes, regions, time series.
//! - [`pyramid`]: Gaussian/Laplacian pyramids.
//! - [`temporal`]: ideal and streaming band-pass filters, magnification.
//! - [`facegate`]: IoU gating and detectors.
//! - [`pulse`]: per-subject bpm estimation.
//! - [`magnify`]: whole-clip colour magnification.
//! - [`fer`]: expression classification network and FERW weight files.
//! - [`synth`]: seeded synthetic videos and face sets with known ground truth.
//! - [`rvid`]: raw RGB video stream files.

pub mod facegate;
pub mod fer;
pub mod frame;
pub mod magnify;
pub mod pulse;
pub mod pyramid;
pub mod rvid;
pub mod synth;
pub mod temporal;

//! Facial expression classification with a compact residual
//! depthwise-separable CNN.
//!
//! The network takes a 48x48 grayscale face (values in `[0, 255]`, mapped to
//! `[-1, 1]` by `x / 127.5 - 1`) and produces a distribution over seven
//! expression labels in the fixed order of [`Emotion::ALL`]. Models are
//! stored in the FERW format, see [`format`].

mod eval;
pub mod format;
mod model;
pub mod ops;
pub mod reference;
mod tensor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{evaluate, ConfusionMatrix, Evaluation};
pub use format::{load_model, save_model};
pub use model::{
    classify, param_count, Layer, LayerHeader, LayerKind, Model, FLAG_HAS_BIAS, FLAG_ON_SKIP, FLAG_SAVE_INPUT,
    INPUT_SIZE,
};
pub use tensor::{Shape, Tensor};

use crate::frame::GrayPlane;

pub const NUM_CLASSES: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input must be 48x48, got {width}x{height}")]
    WrongInputSize { width: usize, height: usize },
    #[error("not a FERW file")]
    BadMagic,
    #[error("unsupported FERW version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated{}", match .layer { Some(l) => format!(" in layer {l}"), None => String::new() })]
    TruncatedFile { layer: Option<usize> },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("{0} unexpected bytes after checksum")]
    TrailingBytes(usize),
    #[error("layer {layer}: {reason}")]
    ShapeCheckFailed { layer: usize, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {0} is outside 0..7")]
    BadLabel(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Angry,
    Disgust,
    Fear,
    Happy,
    Sad,
    Surprise,
    Neutral,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_CLASSES] = [
        Emotion::Angry,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Surprise,
        Emotion::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Surprise => "surprise",
            Emotion::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| format!("unknown emotion {s:?}"))
    }
}

/// Probabilities over [`Emotion::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionDistribution {
    pub probabilities: [f64; NUM_CLASSES],
}

impl EmotionDistribution {
    pub fn uniform() -> Self {
        Self {
            probabilities: [1.0 / NUM_CLASSES as f64; NUM_CLASSES],
        }
    }

    /// Point mass on `class`.
    pub fn one_hot(class: Emotion) -> Self {
        let mut probabilities = [0.0; NUM_CLASSES];
        probabilities[class.index()] = 1.0;
        Self { probabilities }
    }

    /// Most likely class; ties go to the lowest index.
    pub fn argmax(&self) -> Emotion {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate().skip(1) {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        Emotion::ALL[best]
    }

    pub fn probability(&self, class: Emotion) -> f64 {
        self.probabilities[class.index()]
    }

    pub fn sum(&self) -> f64 {
        self.probabilities.iter().sum()
    }
}

/// Anything that maps a 48x48 face to an emotion distribution.
pub trait Classifier {
    fn classify(&self, face: &GrayPlane) -> Result<EmotionDistribution, FerError>;
}

impl Classifier for Model {
    fn classify(&self, face: &GrayPlane) -> Result<EmotionDistribution, FerError> {
        classify(self, face)
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn classify(&self, face: &GrayPlane) -> Result<EmotionDistribution, FerError> {
        (**self).classify(face)
    }
}

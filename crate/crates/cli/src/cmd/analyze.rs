use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;
use vitalcam_core::facegate::{Detector, GateConfig, MotionDetector, StaticDetector};
use vitalcam_core::fer::{classify, load_model, Emotion, Model};
use vitalcam_core::frame::Roi;
use vitalcam_core::pulse::{PulseConfig, PulseSession};
use vitalcam_core::temporal::BandConfig;
use vitalcam_service::prepare_face;

use crate::args::{Band, Raw, Rect};
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorArg {
    Static,
    Motion,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    input: PathBuf,
    /// Pass band LO:HI in hertz.
    #[arg(long, default_value = "0.4:4.0")]
    band: Raw<Band>,
    /// Magnification factor; recorded in the band configuration.
    #[arg(long, default_value = "50")]
    alpha: Raw<f64>,
    /// Gaussian pyramid levels.
    #[arg(long, default_value = "3")]
    levels: Raw<usize>,
    /// Level whose mean over the region is the pulse sample.
    #[arg(long, default_value = "1")]
    analysis_level: Raw<usize>,
    /// Minimum IoU between the detected face and the analysis region.
    #[arg(long, default_value = "0.5")]
    iou: Raw<f64>,
    /// Analysis region X,Y,W,H; defaults to the central region.
    #[arg(long)]
    roi: Option<Raw<Rect>>,
    #[arg(long, value_enum, default_value = "static")]
    detector: DetectorArg,
    /// Region reported by the static detector; defaults to the analysis region.
    #[arg(long)]
    detector_roi: Option<Raw<Rect>>,
    /// Seconds.
    #[arg(long, default_value = "5")]
    calibration: Raw<f64>,
    /// Seconds.
    #[arg(long, default_value = "10")]
    window: Raw<f64>,
    /// Emit one record every N seconds instead of one per frame.
    #[arg(long)]
    report_every: Option<Raw<f64>>,
    /// FERW model; records then carry the latest expression.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Classify expression on every k-th accepted frame.
    #[arg(long, default_value = "10")]
    fer_every: Raw<u64>,
}

impl AnalyzeArgs {
    /// Every pipeline flag with its effective text, in a fixed order.
    fn echo(&self) -> Vec<(&'static str, String)> {
        let mut v = vec![
            ("band", self.band.text.clone()),
            ("alpha", self.alpha.text.clone()),
            ("levels", self.levels.text.clone()),
            ("analysis-level", self.analysis_level.text.clone()),
            ("iou", self.iou.text.clone()),
        ];
        if let Some(r) = &self.roi {
            v.push(("roi", r.text.clone()));
        }
        let detector = match self.detector {
            DetectorArg::Static => "static",
            DetectorArg::Motion => "motion",
        };
        v.push(("detector", detector.to_owned()));
        if let Some(r) = &self.detector_roi {
            v.push(("detector-roi", r.text.clone()));
        }
        v.push(("calibration", self.calibration.text.clone()));
        v.push(("window", self.window.text.clone()));
        if let Some(r) = &self.report_every {
            v.push(("report-every", r.text.clone()));
        }
        if let Some(m) = &self.model {
            v.push(("model", m.display().to_string()));
        }
        v.push(("fer-every", self.fer_every.text.clone()));
        v
    }

    fn pulse_config(&self) -> anyhow::Result<PulseConfig> {
        let cfg = PulseConfig {
            band: BandConfig {
                alpha: self.alpha.value,
                ..BandConfig::with_band(self.band.value.lo, self.band.value.hi)
            },
            calibration_seconds: self.calibration.value,
            window_seconds: self.window.value,
            pyramid_levels: self.levels.value,
            analysis_level: self.analysis_level.value,
            ..PulseConfig::default()
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Serialize)]
struct EmotionRecord {
    label: Emotion,
    probability: f64,
}

#[derive(Serialize)]
struct Record {
    r#type: &'static str,
    t_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    bpm: Option<f64>,
    confidence: f64,
    gated: bool,
    calibrating: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    emotion: Option<EmotionRecord>,
}

pub fn run(a: AnalyzeArgs) -> anyhow::Result<()> {
    let config = a.pulse_config()?;
    if !(0.0..=1.0).contains(&a.iou.value) {
        return Err(usage("--iou must lie in [0, 1]"));
    }
    if a.fer_every.value == 0 {
        return Err(usage("--fer-every must be at least 1"));
    }
    let report_ms = match &a.report_every {
        Some(r) if !(r.value.is_finite() && r.value > 0.0) => return Err(usage("--report-every must be positive")),
        Some(r) => Some((r.value * 1000.0).round() as u64),
        None => None,
    };
    let model: Option<Model> = match &a.model {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
            Some(load_model(&bytes).with_context(|| format!("{} is not a usable model", path.display()))?)
        }
        None => None,
    };

    let reader = super::open_rvid(&a.input)?;
    let header = reader.header();
    let (width, height) = (header.width as usize, header.height as usize);
    let roi: Roi = a
        .roi
        .as_ref()
        .map_or_else(|| Roi::default_analysis(width, height), |r| r.value.0);
    let gate = GateConfig {
        iou_threshold: a.iou.value,
        analysis_roi: roi,
    };
    let mut session = PulseSession::new(config, gate).map_err(usage)?;
    let mut detector: Box<dyn Detector> = match a.detector {
        DetectorArg::Static => Box::new(StaticDetector::new(a.detector_roi.as_ref().map_or(roi, |r| r.value.0))),
        DetectorArg::Motion => Box::new(MotionDetector::default()),
    };

    let echo = a.echo();
    let argv: Vec<String> = echo.iter().flat_map(|(k, v)| [format!("--{k}"), v.clone()]).collect();
    let config_echo: serde_json::Map<String, serde_json::Value> =
        echo.into_iter().map(|(k, v)| (k.to_owned(), v.into())).collect();

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let head = json!({
        "type": "header",
        "config": config_echo,
        "argv": argv,
        "input": {
            "path": a.input.display().to_string(),
            "width": width,
            "height": height,
            "fps": header.fps(),
        },
    });
    writeln!(out, "{head}")?;

    let (mut frames, mut gated_count, mut accepted) = (0u64, 0u64, 0u64);
    let (mut bpm_sum, mut readings) = (0.0, 0u64);
    let mut emotion: Option<EmotionRecord> = None;
    let mut next_report: Option<u64> = None;
    for frame in reader {
        let frame = frame.with_context(|| format!("reading frame {frames}"))?;
        frames += 1;
        let detections = detector.detect(&frame);
        let outcome = session
            .push_frame(&frame, &detections)
            .with_context(|| format!("frame {}", frames - 1))?;
        let t_ms = frame.timestamp_ms();
        if outcome.gated {
            gated_count += 1;
        } else {
            if let (Some(m), Some(best)) = (&model, outcome.best) {
                if accepted % a.fer_every.value == 0 {
                    let face = prepare_face(&frame, &best.roi).map_err(anyhow::Error::msg)?;
                    let dist = classify(m, &face)?;
                    let label = dist.argmax();
                    emotion = Some(EmotionRecord {
                        label,
                        probability: dist.probability(label),
                    });
                }
            }
            accepted += 1;
        }
        let reading = outcome.reading;
        let bpm = reading.and_then(|r| r.bpm).filter(|_| !outcome.gated);
        if let Some(b) = bpm {
            bpm_sum += b;
            readings += 1;
        }
        let due = match report_ms {
            None => true,
            Some(step) => {
                let next = *next_report.get_or_insert(t_ms + step);
                let due = t_ms >= next;
                if due {
                    next_report = Some(next + step * ((t_ms - next) / step + 1));
                }
                due
            }
        };
        if due {
            let record = Record {
                r#type: "reading",
                t_ms,
                bpm,
                confidence: reading.map_or(0.0, |r| r.confidence),
                gated: outcome.gated,
                calibrating: reading.is_none_or(|r| r.calibrating),
                emotion: emotion.filter(|_| !outcome.gated),
            };
            serde_json::to_writer(&mut out, &record)?;
            writeln!(out)?;
        }
    }
    let summary = json!({
        "type": "summary",
        "mean_bpm": (readings > 0).then(|| bpm_sum / readings as f64),
        "readings": readings,
        "gated": gated_count,
        "frames": frames,
    });
    writeln!(out, "{summary}")?;
    out.flush()?;
    Ok(())
}

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use vitalcam_core::frame::Roi;
use vitalcam_core::rvid::{RvidHeader, RvidWriter};
use vitalcam_core::synth::{generate_pulse_video, Background, DistanceScene, PulseScene};

use crate::args::{Rect, Size};
use crate::usage;

#[derive(Args)]
pub struct SynthArgs {
    /// Pulse rate of the face.
    #[arg(long, default_value_t = 72.0)]
    bpm: f64,
    #[arg(long, default_value_t = 20.0)]
    fps: f64,
    /// Seconds.
    #[arg(long, default_value_t = 15.0)]
    duration: f64,
    #[arg(long, default_value = "320x240")]
    size: Size,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Peak green deviation of the face, in gray levels.
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// Gaussian noise sigma, in gray levels.
    #[arg(long, default_value_t = 2.0)]
    noise: f64,
    /// Face rectangle X,Y,W,H; defaults to the central analysis region.
    #[arg(long, conflicts_with = "face_ratio")]
    face: Option<Rect>,
    /// Shrink the face to this fraction of the analysis region.
    #[arg(long)]
    face_ratio: Option<f64>,
    /// Make the background flicker at this rate.
    #[arg(long)]
    bg_flicker_bpm: Option<f64>,
    #[arg(long, default_value_t = 3.0, requires = "bg_flicker_bpm")]
    bg_amplitude: f64,
    #[arg(short, long)]
    output: PathBuf,
}

fn scene(a: &SynthArgs) -> anyhow::Result<PulseScene> {
    let (width, height) = (a.size.width, a.size.height);
    let mut base = PulseScene {
        fps: a.fps,
        duration_s: a.duration,
        width,
        height,
        face_rect: a.face.map_or_else(|| Roi::default_analysis(width, height), |r| r.0),
        pulse_bpm: a.bpm,
        pulse_amplitude: a.amplitude,
        noise_sigma: a.noise,
        seed: a.seed,
        ..PulseScene::default()
    };
    let scene = match a.face_ratio {
        Some(ratio) => DistanceScene {
            face_area_ratio: ratio,
            face_bpm: a.bpm,
            face_amplitude: a.amplitude,
            bg_flicker_bpm: a.bg_flicker_bpm,
            bg_amplitude: a.bg_amplitude,
            base,
        }
        .to_scene(),
        None => {
            if let Some(bpm) = a.bg_flicker_bpm {
                base.background = Background::Flicker {
                    rgb: [60, 60, 60],
                    bpm,
                    amplitude: a.bg_amplitude,
                };
            }
            base.validate().map(|()| base)
        }
    };
    scene.map_err(usage)
}

pub fn run(a: SynthArgs) -> anyhow::Result<()> {
    let scene = scene(&a)?;
    let header = RvidHeader::new(scene.width, scene.height, scene.fps);
    let file = File::create(&a.output).with_context(|| format!("cannot create {}", a.output.display()))?;
    let mut writer = RvidWriter::new(BufWriter::new(file), header)?;
    for frame in generate_pulse_video(scene).map_err(usage)? {
        writer.write_frame(&frame)?;
    }
    let frames = writer.frames_written();
    writer.finish()?;
    eprintln!("wrote {frames} frames to {}", a.output.display());
    Ok(())
}

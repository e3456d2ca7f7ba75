use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use vitalcam_core::magnify::{magnify_clip, MagnifyError};
use vitalcam_core::rvid::RvidWriter;
use vitalcam_core::temporal::{BandConfig, TemporalError};

use crate::args::Band;
use crate::usage;

#[derive(Args)]
pub struct AmplifyArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Pass band LO:HI in hertz.
    #[arg(long, default_value = "0.4:4.0")]
    band: Band,
    #[arg(long, default_value_t = 50.0)]
    alpha: f64,
    /// Laplacian levels.
    #[arg(long, default_value_t = 3)]
    levels: usize,
}

pub fn run(a: AmplifyArgs) -> anyhow::Result<()> {
    let band = BandConfig {
        alpha: a.alpha,
        ..BandConfig::with_band(a.band.lo, a.band.hi)
    };
    band.validate().map_err(usage)?;
    let reader = super::open_rvid(&a.input)?;
    let header = reader.header();
    let frames = reader.collect::<Result<Vec<_>, _>>()?;
    let out = magnify_clip(&frames, header.fps(), &band, a.levels).map_err(|e| match e {
        MagnifyError::Temporal(TemporalError::TooShort { .. }) => e.into(),
        MagnifyError::Temporal(_) | MagnifyError::Pyramid(_) => usage(e),
        other => other.into(),
    })?;
    let file = File::create(&a.output).with_context(|| format!("cannot create {}", a.output.display()))?;
    let mut writer = RvidWriter::new(BufWriter::new(file), header)?;
    for frame in &out {
        writer.write_frame(frame)?;
    }
    writer.finish()?;
    eprintln!("wrote {} frames to {}", out.len(), a.output.display());
    Ok(())
}

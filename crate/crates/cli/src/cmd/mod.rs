pub mod amplify;
pub mod analyze;
pub mod fer;
pub mod serve;
pub mod synth;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::Context;
use vitalcam_core::rvid::RvidReader;

pub fn open_rvid(path: &Path) -> anyhow::Result<RvidReader<BufReader<File>>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    RvidReader::new(BufReader::new(file)).with_context(|| format!("{} is not a readable RVID stream", path.display()))
}

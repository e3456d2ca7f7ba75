use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Subcommand};
use serde::Deserialize;
use serde_json::json;
use vitalcam_core::fer::reference::{random_model, zero_head_model};
use vitalcam_core::fer::{
    classify, evaluate, load_model, save_model, Classifier, Emotion, EmotionDistribution, Evaluation, FerError, Model,
    INPUT_SIZE, NUM_CLASSES,
};
use vitalcam_core::frame::{resize_bilinear, to_grayscale, Frame, GrayPlane};
use vitalcam_core::synth::generate_face_set;

use crate::usage;

#[derive(Subcommand)]
pub enum FerCommand {
    /// Print the expression distribution of one image as JSON.
    Classify(ClassifyArgs),
    /// Print the row-normalised confusion matrix and accuracy.
    Eval(EvalArgs),
    /// Write a seeded random model of the reference architecture.
    GenWeights(GenArgs),
}

#[derive(Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// PGM or PNG; resized to 48x48 when needed.
    image: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// FERW model to evaluate.
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    model: Option<PathBuf>,
    /// Evaluate a stub that looks up each sample's true label.
    #[arg(long)]
    oracle: bool,
    /// CSV with `emotion` and `pixels` columns (48x48, space separated).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Keep only CSV rows whose `Usage` column has this value.
    #[arg(long, requires = "csv")]
    usage: Option<String>,
    /// Size of the synthetic set used when no CSV is given.
    #[arg(long, default_value_t = 700)]
    synthetic: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zero the classifier weights so every output is uniform.
    #[arg(long)]
    zero_head: bool,
    #[arg(short, long)]
    output: PathBuf,
}

pub fn run(c: FerCommand) -> anyhow::Result<()> {
    match c {
        FerCommand::Classify(a) => run_classify(a),
        FerCommand::Eval(a) => run_eval(a),
        FerCommand::GenWeights(a) => run_gen(a),
    }
}

fn read_model(path: &Path) -> anyhow::Result<Model> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(load_model(&bytes)?)
}

fn read_face(path: &Path) -> anyhow::Result<GrayPlane> {
    let img = image::open(path)
        .with_context(|| format!("cannot decode {}", path.display()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let frame = Frame::new(w, h, 0, img.into_raw()).with_context(|| format!("{}", path.display()))?;
    let gray = to_grayscale(&frame);
    Ok(if gray.dims() == (INPUT_SIZE, INPUT_SIZE) {
        gray
    } else {
        resize_bilinear(&gray, INPUT_SIZE, INPUT_SIZE)
    })
}

fn run_classify(a: ClassifyArgs) -> anyhow::Result<()> {
    let model = read_model(&a.model)?;
    let face = read_face(&a.image)?;
    let dist = classify(&model, &face)?;
    let label = dist.argmax();
    let out = json!({
        "labels": Emotion::ALL,
        "probabilities": dist.probabilities,
        "label": label,
        "probability": dist.probability(label),
    });
    println!("{out}");
    Ok(())
}

/// Answers with the true label of any sample it was built from.
struct Oracle(HashMap<Vec<u64>, usize>);

impl Oracle {
    fn new(samples: &[(GrayPlane, usize)]) -> Self {
        let mut table = HashMap::new();
        for (face, label) in samples {
            table.entry(key(face)).or_insert(*label);
        }
        Self(table)
    }
}

fn key(face: &GrayPlane) -> Vec<u64> {
    face.values().iter().map(|v| v.to_bits()).collect()
}

impl Classifier for Oracle {
    fn classify(&self, face: &GrayPlane) -> Result<EmotionDistribution, FerError> {
        let label = self.0.get(&key(face)).copied().ok_or(FerError::BadLabel(NUM_CLASSES))?;
        Ok(EmotionDistribution::one_hot(Emotion::ALL[label]))
    }
}

#[derive(Deserialize)]
struct CsvRow {
    emotion: usize,
    pixels: String,
    #[serde(rename = "Usage", default)]
    usage: Option<String>,
}

fn read_csv(path: &Path, usage_filter: Option<&str>) -> anyhow::Result<Vec<(GrayPlane, usize)>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut samples = Vec::new();
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row.with_context(|| format!("{} record {}", path.display(), i + 1))?;
        if usage_filter.is_some_and(|u| row.usage.as_deref() != Some(u)) {
            continue;
        }
        if row.emotion >= NUM_CLASSES {
            bail!(
                "{} record {}: emotion {} is not a class index",
                path.display(),
                i + 1,
                row.emotion
            );
        }
        let values = row
            .pixels
            .split_ascii_whitespace()
            .map(|p| p.parse::<u8>().map(f64::from))
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{} record {}: bad pixel", path.display(), i + 1))?;
        let face = GrayPlane::new(INPUT_SIZE, INPUT_SIZE, values)
            .with_context(|| format!("{} record {}: expected 48x48 pixels", path.display(), i + 1))?;
        samples.push((face, row.emotion));
    }
    Ok(samples)
}

fn print_table(e: &Evaluation) {
    print!("{:<10}", "true\\pred");
    for label in Emotion::ALL {
        print!("{:>9}", label.to_string());
    }
    println!();
    for (label, row) in Emotion::ALL.iter().zip(&e.matrix) {
        print!("{:<10}", label.to_string());
        for v in row {
            print!("{v:>9.3}");
        }
        println!();
    }
    println!(
        "accuracy {:.4} ({}/{})",
        e.accuracy,
        e.confusion.correct(),
        e.confusion.total()
    );
}

fn run_eval(a: EvalArgs) -> anyhow::Result<()> {
    let samples = match &a.csv {
        Some(path) => read_csv(path, a.usage.as_deref())?,
        None => generate_face_set(a.synthetic, a.seed).map_err(usage)?.samples,
    };
    if samples.is_empty() {
        bail!("no samples to evaluate");
    }
    let eval = match &a.model {
        Some(path) => evaluate(&read_model(path)?, &samples)?,
        None => evaluate(&Oracle::new(&samples), &samples)?,
    };
    if a.json {
        let out = json!({
            "labels": Emotion::ALL,
            "matrix": eval.matrix,
            "counts": eval.confusion.counts(),
            "accuracy": eval.accuracy,
        });
        println!("{out}");
    } else {
        print_table(&eval);
    }
    Ok(())
}

fn run_gen(a: GenArgs) -> anyhow::Result<()> {
    let model = if a.zero_head {
        zero_head_model(a.seed)
    } else {
        random_model(a.seed)
    };
    std::fs::write(&a.output, save_model(&model)).with_context(|| format!("cannot write {}", a.output.display()))?;
    eprintln!("wrote {} parameters to {}", model.param_count(), a.output.display());
    Ok(())
}

use std::thread;

use serde::Serialize;

use crate::fer::{Classifier, Emotion, FerError, NUM_CLASSES};
use crate::frame::GrayPlane;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Emotion, predicted: Emotion) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn counts(&self) -> &[[u64; NUM_CLASSES]; NUM_CLASSES] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Each row divided by its sum; rows of absent classes stay zero.
    pub fn normalized(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let mut out = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (row, counts) in out.iter_mut().zip(&self.counts) {
            let n: u64 = counts.iter().sum();
            if n > 0 {
                for (o, &c) in row.iter_mut().zip(counts) {
                    *o = c as f64 / n as f64;
                }
            }
        }
        out
    }

    fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub matrix: [[f64; NUM_CLASSES]; NUM_CLASSES],
    pub accuracy: f64,
}

/// Classifies every sample and tallies argmax predictions. Work is split
/// across the available cores.
pub fn evaluate<C: Classifier + Sync>(classifier: &C, dataset: &[(GrayPlane, usize)]) -> Result<Evaluation, FerError> {
    if dataset.is_empty() {
        return Err(FerError::EmptyDataset);
    }
    if let Some(&(_, bad)) = dataset.iter().find(|(_, l)| *l >= NUM_CLASSES) {
        return Err(FerError::BadLabel(bad));
    }
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(dataset.len());
    let chunk = dataset.len().div_ceil(workers);
    let partials: Vec<Result<ConfusionMatrix, FerError>> = thread::scope(|s| {
        let handles: Vec<_> = dataset
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut cm = ConfusionMatrix::default();
                    for (face, label) in part {
                        let predicted = classifier.classify(face)?.argmax();
                        cm.record(Emotion::ALL[*label], predicted);
                    }
                    Ok(cm)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut confusion = ConfusionMatrix::default();
    for p in partials {
        confusion.merge(&p?);
    }
    let accuracy = confusion.correct() as f64 / confusion.total() as f64;
    Ok(Evaluation {
        matrix: confusion.normalized(),
        confusion,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fer::EmotionDistribution;

    struct Constant(Emotion);

    impl Classifier for Constant {
        fn classify(&self, _: &GrayPlane) -> Result<EmotionDistribution, FerError> {
            Ok(EmotionDistribution::one_hot(self.0))
        }
    }

    /// Reads the label back from the first pixel.
    struct PixelOracle;

    impl Classifier for PixelOracle {
        fn classify(&self, face: &GrayPlane) -> Result<EmotionDistribution, FerError> {
            Ok(EmotionDistribution::one_hot(Emotion::ALL[face.get(0, 0) as usize]))
        }
    }

    fn dataset(labels: &[usize]) -> Vec<(GrayPlane, usize)> {
        labels
            .iter()
            .map(|&l| (GrayPlane::filled(48, 48, l as f64), l))
            .collect()
    }

    #[test]
    fn oracle_gives_identity() {
        let labels: Vec<usize> = (0..70).map(|i| i % 7).collect();
        let e = evaluate(&PixelOracle, &dataset(&labels)).unwrap();
        assert_eq!(e.accuracy, 1.0);
        for (i, row) in e.matrix.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn constant_happy_fills_column_three() {
        let labels = [0, 3, 3, 5, 6, 6, 1];
        let e = evaluate(&Constant(Emotion::Happy), &dataset(&labels)).unwrap();
        assert!((e.accuracy - 2.0 / 7.0).abs() < 1e-12);
        for (i, row) in e.matrix.iter().enumerate() {
            let present = labels.contains(&i);
            for (j, &v) in row.iter().enumerate() {
                let want = if present && j == 3 { 1.0 } else { 0.0 };
                assert_eq!(v, want, "row {i} col {j}");
            }
        }
    }

    #[test]
    fn errors() {
        assert_eq!(evaluate(&PixelOracle, &[]), Err(FerError::EmptyDataset));
        let mut d = dataset(&[1, 2]);
        d[1].1 = 7;
        assert_eq!(evaluate(&PixelOracle, &d), Err(FerError::BadLabel(7)));
    }
}

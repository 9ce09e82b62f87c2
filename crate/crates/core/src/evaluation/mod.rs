//! Accuracy, confusion matrices, one-vs-rest ROC and run comparisons.

mod report;
mod roc;
pub mod svg;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GestureSequence;
use crate::model::{GestureClassifier, ModelError};
use crate::numerics::Real;

pub use report::{compare_report, ClassDelta, ClassMetrics, Comparison, CurvePoint, EvalReport, RunSummary};
pub use roc::{binary_roc, roc_ovr, trapezoid, RocCurve, RocReport};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("sample {index} has no label")]
    Unlabeled { index: usize },
    #[error("label {label} out of range for a {num_classes}-class model")]
    ClassCount { label: usize, num_classes: usize },
    #[error("score row {row} has {got} entries, expected {expected}")]
    ScoreWidth { row: usize, got: usize, expected: usize },
    #[error("runs were evaluated on different test sets ({a} vs {b})")]
    TestSetMismatch { a: String, b: String },
    #[error("runs disagree on the class table")]
    ClassTableMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Counts indexed `[actual][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_pairs(num_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::new(num_classes);
        for (actual, predicted) in pairs {
            m.record(actual, predicted);
        }
        m
    }

    pub fn record(&mut self, actual: usize, predicted: usize) {
        self.counts[actual][predicted] += 1;
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    /// Row sum: number of samples whose true class is `class`.
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Column sum: number of samples predicted as `class`.
    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// `None` when nothing was predicted as `class`.
    pub fn precision(&self, class: usize) -> Option<f64> {
        let p = self.predicted(class);
        (p > 0).then(|| self.counts[class][class] as f64 / p as f64)
    }

    /// `None` when `class` does not occur.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let s = self.support(class);
        (s > 0).then(|| self.counts[class][class] as f64 / s as f64)
    }
}

/// Outcome of scoring a labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Softmax output per sample.
    pub scores: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn roc(&self) -> RocReport {
        roc_ovr(&self.scores, &self.labels, self.confusion.num_classes())
    }
}

/// Builds an [`Evaluation`] from precomputed scores. Predictions are the
/// per-row argmax (lowest index on ties).
pub fn evaluate_scores(
    scores: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
) -> Result<Evaluation, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    assert_eq!(scores.len(), labels.len(), "scores/labels length");
    for (row, (s, &l)) in scores.iter().zip(&labels).enumerate() {
        if s.len() != num_classes {
            return Err(EvalError::ScoreWidth {
                row,
                got: s.len(),
                expected: num_classes,
            });
        }
        if l >= num_classes {
            return Err(EvalError::ClassCount {
                label: l,
                num_classes,
            });
        }
    }
    let predictions: Vec<usize> = scores.iter().map(|s| crate::numerics::argmax(s)).collect();
    let confusion =
        ConfusionMatrix::from_pairs(num_classes, labels.iter().copied().zip(predictions.iter().copied()));
    debug_assert_eq!(confusion.total(), labels.len() as u64);
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        confusion,
        scores,
        labels,
        predictions,
    })
}

/// Scores every sample of `test` with `model` (in parallel) and tabulates
/// the results.
pub fn evaluate<T: Real>(
    model: &GestureClassifier<T>,
    test: &[GestureSequence],
) -> Result<Evaluation, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let num_classes = model.architecture().num_classes;
    let mut labels = Vec::with_capacity(test.len());
    for (index, s) in test.iter().enumerate() {
        let label = s.label.ok_or(EvalError::Unlabeled { index })?;
        if label >= num_classes {
            return Err(EvalError::ClassCount { label, num_classes });
        }
        labels.push(label);
    }
    let scores = test
        .par_iter()
        .map(|s| {
            let p = model.forward(&s.to_matrix::<T>())?;
            Ok(p.distribution.probabilities.iter().map(|v| v.as_f64()).collect())
        })
        .collect::<Result<Vec<Vec<f64>>, ModelError>>()?;
    evaluate_scores(scores, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_class_zero_predictor() {
        let labels: Vec<usize> = (0..63).map(|i| i % 21).collect();
        let scores: Vec<Vec<f64>> = labels
            .iter()
            .map(|_| {
                let mut s = vec![0.01; 21];
                s[0] = 0.8;
                s
            })
            .collect();
        let e = evaluate_scores(scores, labels, 21).unwrap();
        assert_eq!(e.accuracy, 1.0 / 21.0);
        assert_eq!(e.confusion.total(), 63);
        for a in 0..21 {
            for p in 0..21 {
                assert_eq!(e.confusion.get(a, p), if p == 0 { 3 } else { 0 });
            }
        }
        assert_eq!(e.confusion.precision(0), Some(1.0 / 21.0));
        assert_eq!(e.confusion.precision(5), None);
        assert_eq!(e.confusion.recall(0), Some(1.0));
        assert_eq!(e.confusion.recall(5), Some(0.0));
    }

    #[test]
    fn perfect_predictor_is_diagonal() {
        let labels: Vec<usize> = (0..42).map(|i| i % 21).collect();
        let scores = labels
            .iter()
            .map(|&l| (0..21).map(|c| if c == l { 0.9 } else { 0.005 }).collect())
            .collect();
        let e = evaluate_scores(scores, labels, 21).unwrap();
        assert_eq!(e.accuracy, 1.0);
        for a in 0..21 {
            for p in 0..21 {
                assert_eq!(e.confusion.get(a, p), if a == p { 2 } else { 0 });
            }
        }
    }

    #[test]
    fn three_class_toy_matches_hand_count() {
        let scores = vec![
            vec![0.6, 0.3, 0.1], // 0 -> 0
            vec![0.2, 0.5, 0.3], // 0 -> 1
            vec![0.1, 0.1, 0.8], // 1 -> 2
            vec![0.3, 0.4, 0.3], // 1 -> 1
            vec![0.4, 0.4, 0.2], // 2 -> 0 (tie, lowest index)
            vec![0.2, 0.2, 0.6], // 2 -> 2
            vec![0.7, 0.2, 0.1], // 2 -> 0
        ];
        let labels = vec![0, 0, 1, 1, 2, 2, 2];
        let e = evaluate_scores(scores, labels, 3).unwrap();
        let expected = vec![vec![1, 1, 0], vec![0, 1, 1], vec![2, 0, 1]];
        assert_eq!(e.confusion.counts(), &expected[..]);
        assert_eq!(e.accuracy, 3.0 / 7.0);
        assert_eq!(e.confusion.precision(0), Some(1.0 / 3.0));
        assert_eq!(e.confusion.recall(2), Some(1.0 / 3.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(evaluate_scores(vec![], vec![], 3), Err(EvalError::Empty)));
        assert!(matches!(
            evaluate_scores(vec![vec![0.5, 0.5]], vec![0], 3),
            Err(EvalError::ScoreWidth { .. })
        ));
        assert!(matches!(
            evaluate_scores(vec![vec![0.2, 0.3, 0.5]], vec![3], 3),
            Err(EvalError::ClassCount { label: 3, .. })
        ));
    }
}

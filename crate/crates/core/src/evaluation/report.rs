//! Serializable evaluation reports and two-run comparisons.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, Evaluation, RocReport};
use crate::training::EpochRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub index: usize,
    pub name: String,
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub auc: Option<f64>,
}

/// Everything `eval` writes for one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Display label, e.g. `MLA-GRU`.
    pub model: String,
    pub model_sha256: Option<String>,
    pub test_set_sha256: String,
    pub samples: usize,
    pub accuracy: f64,
    pub micro_auc: Option<f64>,
    pub macro_auc: Option<f64>,
    /// Classes without a defined one-vs-rest curve; excluded from the macro
    /// average.
    pub absent_classes: Vec<usize>,
    pub per_class: Vec<ClassMetrics>,
    /// `[actual][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub roc: RocReport,
}

impl EvalReport {
    pub fn new(
        model: impl Into<String>,
        class_names: &[String],
        evaluation: &Evaluation,
        test_set_sha256: impl Into<String>,
        model_sha256: Option<String>,
    ) -> Self {
        let roc = evaluation.roc();
        let cm = &evaluation.confusion;
        let per_class = (0..cm.num_classes())
            .map(|c| ClassMetrics {
                index: c,
                name: class_names.get(c).cloned().unwrap_or_else(|| c.to_string()),
                support: cm.support(c),
                precision: cm.precision(c),
                recall: cm.recall(c),
                auc: roc.class_auc(c),
            })
            .collect();
        EvalReport {
            model: model.into(),
            model_sha256,
            test_set_sha256: test_set_sha256.into(),
            samples: evaluation.labels.len(),
            accuracy: evaluation.accuracy,
            micro_auc: roc.micro_auc(),
            macro_auc: roc.macro_auc,
            absent_classes: roc.absent.clone(),
            per_class,
            confusion: cm.counts().to_vec(),
            roc,
        }
    }

    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("index,name,support,precision,recall,auc\n");
        for m in &self.per_class {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                m.index,
                m.name,
                m.support,
                opt(m.precision),
                opt(m.recall),
                opt(m.auc)
            );
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

/// One evaluated run: its report plus learning curves when available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub report: EvalReport,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub index: usize,
    pub name: String,
    pub recall_a: Option<f64>,
    pub recall_b: Option<f64>,
    pub recall_delta: Option<f64>,
    pub auc_a: Option<f64>,
    pub auc_b: Option<f64>,
    pub auc_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss_a: Option<f64>,
    pub train_loss_b: Option<f64>,
    pub val_accuracy_a: Option<f64>,
    pub val_accuracy_b: Option<f64>,
}

/// Side-by-side metrics of two runs on the same test set. Every delta is
/// `b − a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model_a: String,
    pub model_b: String,
    pub test_set_sha256: String,
    pub samples: usize,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub accuracy_delta: f64,
    pub micro_auc_a: Option<f64>,
    pub micro_auc_b: Option<f64>,
    pub micro_auc_delta: Option<f64>,
    pub macro_auc_a: Option<f64>,
    pub macro_auc_b: Option<f64>,
    pub macro_auc_delta: Option<f64>,
    pub per_class: Vec<ClassDelta>,
    pub curves: Vec<CurvePoint>,
}

pub fn compare_report(a: &RunSummary, b: &RunSummary) -> Result<Comparison, EvalError> {
    let (ra, rb) = (&a.report, &b.report);
    if ra.test_set_sha256 != rb.test_set_sha256 {
        return Err(EvalError::TestSetMismatch {
            a: ra.test_set_sha256.clone(),
            b: rb.test_set_sha256.clone(),
        });
    }
    if ra.per_class.len() != rb.per_class.len()
        || ra.per_class.iter().zip(&rb.per_class).any(|(x, y)| x.name != y.name)
    {
        return Err(EvalError::ClassTableMismatch);
    }
    let per_class = ra
        .per_class
        .iter()
        .zip(&rb.per_class)
        .map(|(x, y)| ClassDelta {
            index: x.index,
            name: x.name.clone(),
            recall_a: x.recall,
            recall_b: y.recall,
            recall_delta: delta(x.recall, y.recall),
            auc_a: x.auc,
            auc_b: y.auc,
            auc_delta: delta(x.auc, y.auc),
        })
        .collect();
    let epochs = a.history.len().max(b.history.len());
    let curves = (0..epochs)
        .map(|i| {
            let (ea, eb) = (a.history.get(i), b.history.get(i));
            CurvePoint {
                epoch: i + 1,
                train_loss_a: ea.map(|r| r.train_loss),
                train_loss_b: eb.map(|r| r.train_loss),
                val_accuracy_a: ea.and_then(|r| r.val_accuracy),
                val_accuracy_b: eb.and_then(|r| r.val_accuracy),
            }
        })
        .collect();
    Ok(Comparison {
        model_a: ra.model.clone(),
        model_b: rb.model.clone(),
        test_set_sha256: ra.test_set_sha256.clone(),
        samples: ra.samples,
        accuracy_a: ra.accuracy,
        accuracy_b: rb.accuracy,
        accuracy_delta: rb.accuracy - ra.accuracy,
        micro_auc_a: ra.micro_auc,
        micro_auc_b: rb.micro_auc,
        micro_auc_delta: delta(ra.micro_auc, rb.micro_auc),
        macro_auc_a: ra.macro_auc,
        macro_auc_b: rb.macro_auc,
        macro_auc_delta: delta(ra.macro_auc, rb.macro_auc),
        per_class,
        curves,
    })
}

impl Comparison {
    /// Plain-text table: accuracy to four decimals, AUC to two.
    pub fn render_table(&self) -> String {
        let auc = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        let sauc = |v: Option<f64>| v.map(|x| format!("{x:+.2}")).unwrap_or_else(|| "-".into());
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>9} {:>10} {:>10}", "model", "accuracy", "micro-AUC", "macro-AUC");
        for (name, acc, mi, ma) in [
            (&self.model_a, self.accuracy_a, self.micro_auc_a, self.macro_auc_a),
            (&self.model_b, self.accuracy_b, self.micro_auc_b, self.macro_auc_b),
        ] {
            let _ = writeln!(out, "{:<10} {:>9.4} {:>10} {:>10}", name, acc, auc(mi), auc(ma));
        }
        let _ = writeln!(
            out,
            "{:<10} {:>+9.4} {:>10} {:>10}",
            "delta",
            self.accuracy_delta,
            sauc(self.micro_auc_delta),
            sauc(self.macro_auc_delta)
        );
        out
    }

    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("index,name,recall_a,recall_b,recall_delta,auc_a,auc_b,auc_delta\n");
        for d in &self.per_class {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                d.index,
                d.name,
                opt(d.recall_a),
                opt(d.recall_b),
                opt(d.recall_delta),
                opt(d.auc_a),
                opt(d.auc_b),
                opt(d.auc_delta)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::evaluate_scores;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn run(scores: Vec<Vec<f64>>, labels: Vec<usize>, model: &str, hash: &str) -> RunSummary {
        let e = evaluate_scores(scores, labels, 3).unwrap();
        RunSummary {
            report: EvalReport::new(model, &names(3), &e, hash, None),
            history: vec![],
        }
    }

    fn toy() -> (Vec<Vec<f64>>, Vec<usize>) {
        (
            vec![
                vec![0.6, 0.3, 0.1],
                vec![0.2, 0.5, 0.3],
                vec![0.1, 0.1, 0.8],
                vec![0.3, 0.4, 0.3],
                vec![0.5, 0.1, 0.4],
                vec![0.2, 0.2, 0.6],
            ],
            vec![0, 0, 1, 1, 2, 2],
        )
    }

    #[test]
    fn identical_runs_have_zero_deltas() {
        let (s, l) = toy();
        let a = run(s.clone(), l.clone(), "GRU", "h");
        let c = compare_report(&a, &a).unwrap();
        assert_eq!(c.accuracy_delta, 0.0);
        assert_eq!(c.micro_auc_delta, Some(0.0));
        assert_eq!(c.macro_auc_delta, Some(0.0));
        assert!(c.per_class.iter().all(|d| d.recall_delta == Some(0.0) && d.auc_delta == Some(0.0)));
    }

    #[test]
    fn mismatched_test_sets_rejected() {
        let (s, l) = toy();
        let a = run(s.clone(), l.clone(), "GRU", "h1");
        let b = run(s, l, "MLA-GRU", "h2");
        assert!(matches!(compare_report(&a, &b), Err(EvalError::TestSetMismatch { .. })));
    }

    #[test]
    fn deltas_equal_recomputed_differences() {
        let (s, l) = toy();
        let a = run(s.clone(), l.clone(), "GRU", "h");
        let mut s2 = s;
        s2[1] = vec![0.7, 0.2, 0.1];
        s2[4] = vec![0.1, 0.1, 0.8];
        let b = run(s2, l, "MLA-GRU", "h");
        let c = compare_report(&a, &b).unwrap();
        assert_eq!(c.accuracy_delta, b.report.accuracy - a.report.accuracy);
        // 3/6 correct before, 5/6 after.
        assert!((c.accuracy_delta - 2.0 / 6.0).abs() < 1e-15);
        for (i, d) in c.per_class.iter().enumerate() {
            assert_eq!(
                d.auc_delta.unwrap(),
                b.report.roc.class_auc(i).unwrap() - a.report.roc.class_auc(i).unwrap()
            );
        }
    }

    #[test]
    fn table_formats_accuracy_and_auc() {
        let (s, l) = toy();
        let mut a = run(s.clone(), l.clone(), "GRU", "h");
        let mut b = run(s, l, "MLA-GRU", "h");
        a.report.accuracy = 0.867;
        a.report.micro_auc = Some(0.93);
        a.report.macro_auc = Some(0.93);
        b.report.accuracy = 0.9683;
        b.report.micro_auc = Some(0.98);
        b.report.macro_auc = Some(0.98);
        let table = compare_report(&a, &b).unwrap().render_table();
        let rows: Vec<&str> = table.lines().collect();
        assert!(rows[1].starts_with("GRU") && rows[1].contains("0.8670") && rows[1].contains("0.93"));
        assert!(rows[2].starts_with("MLA-GRU") && rows[2].contains("0.9683") && rows[2].contains("0.98"));
        assert!(rows[3].contains("+0.1013") && rows[3].contains("+0.05"));
    }
}

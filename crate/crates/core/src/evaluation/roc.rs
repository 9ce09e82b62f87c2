//! One-vs-rest ROC curves and trapezoidal AUC.

use serde::{Deserialize, Serialize};

/// ROC points from (0, 0) to (1, 1), ordered by decreasing threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// Binary ROC of `scores` against `positive`. Samples with equal scores are
/// treated as one threshold step, so the result does not depend on sample
/// order. `None` when either class is missing.
pub fn binary_roc(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    assert_eq!(scores.len(), positive.len(), "scores/labels length");
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Twice the area in units of 1/(pos·neg), kept as an integer so the AUC
    // is a single correctly rounded division.
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) as u128) * ((tp + tp0) as u128);
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
    }
    let auc = area2 as f64 / (2 * pos as u128 * neg as u128) as f64;
    Some(RocCurve { fpr, tpr, auc })
}

/// Area under a piecewise-linear curve given by sorted `x`.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    /// `None` for classes without both positive and negative samples.
    pub per_class: Vec<Option<RocCurve>>,
    /// Pooled over every (sample, class) decision.
    pub micro: Option<RocCurve>,
    /// Unweighted mean of the defined per-class AUCs.
    pub macro_auc: Option<f64>,
    /// Classes whose curve is undefined.
    pub absent: Vec<usize>,
}

impl RocReport {
    pub fn class_auc(&self, class: usize) -> Option<f64> {
        self.per_class.get(class)?.as_ref().map(|c| c.auc)
    }

    pub fn micro_auc(&self) -> Option<f64> {
        self.micro.as_ref().map(|c| c.auc)
    }
}

/// One-vs-rest curves from a score matrix (one row per sample, one column
/// per class) and true labels.
pub fn roc_ovr(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> RocReport {
    assert_eq!(scores.len(), labels.len(), "scores/labels length");
    let mut per_class = Vec::with_capacity(num_classes);
    let mut absent = Vec::new();
    for c in 0..num_classes {
        let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let curve = binary_roc(&col, &pos);
        if curve.is_none() {
            absent.push(c);
        }
        per_class.push(curve);
    }
    let pooled: Vec<f64> = scores.iter().flat_map(|r| r[..num_classes].iter().copied()).collect();
    let pooled_pos: Vec<bool> = labels
        .iter()
        .flat_map(|&l| (0..num_classes).map(move |c| c == l))
        .collect();
    let micro = binary_roc(&pooled, &pooled_pos);
    let defined: Vec<f64> = per_class.iter().flatten().map(|c| c.auc).collect();
    let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    RocReport {
        per_class,
        micro,
        macro_auc,
        absent,
    }
}

//! Mini-batch Adam training for both classifier variants.
//!
//! Batches are drawn from a per-epoch shuffle whose stream depends only on
//! the seed, so two variants trained with the same seed see identical batch
//! orders. Per-sample gradients inside a batch are computed in parallel over
//! fixed-size chunks and summed in chunk order; the result does not depend
//! on the number of worker threads.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GestureSequence;
use crate::model::{
    Architecture, ClassDistribution, GestureClassifier, ModelError, ParamSet, Variant,
};
use crate::numerics::{Matrix, SeededRng};

/// Samples per reduction chunk. Part of the numeric contract: changing it
/// changes the floating-point summation order.
const REDUCE_CHUNK: usize = 8;
const SHUFFLE_STREAM: u64 = 0x5348_5546;
/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("target {target} out of range for {num_classes} classes")]
    Target { target: usize, num_classes: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Global L2 norm cap on the batch gradient. Off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            variant: Variant::MlaGru,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    /// Rejects out-of-range hyperparameters. A batch size larger than the
    /// training set is clamped by [`TrainConfig::effective_batch_size`].
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip norm {c} must be positive"));
            }
        }
        Ok(())
    }

    pub fn effective_batch_size(&self, train_len: usize) -> usize {
        self.batch_size.min(train_len.max(1))
    }
}

/// First and second moment estimates mirroring the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix<f64>>,
    pub v: Vec<Matrix<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let m: Vec<Matrix<f64>> = shapes.into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn for_params(params: &ParamSet<f64>) -> Self {
        Self::new(params.tensors().iter().map(|t| t.shape()))
    }
}

/// One Adam update over parallel lists of parameter and gradient tensors.
pub fn adam_step(
    params: &mut [&mut Matrix<f64>],
    grads: &[&Matrix<f64>],
    state: &mut AdamState,
    config: &TrainConfig,
) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient count");
    assert_eq!(params.len(), state.m.len(), "parameter/moment count");
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        assert_eq!(p.shape(), g.shape(), "parameter/gradient shape");
        let p = p.as_mut_slice();
        for (((p, &g), m), v) in p
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
}

/// Cross-entropy of a distribution against `target`, and the gradient with
/// respect to the logits that produced it.
pub fn cross_entropy(
    dist: &ClassDistribution<f64>,
    target: usize,
) -> Result<(f64, Vec<f64>), TrainError> {
    let n = dist.probabilities.len();
    if target >= n {
        return Err(TrainError::Target {
            target,
            num_classes: n,
        });
    }
    let loss = -dist.probabilities[target].max(PROB_FLOOR).ln();
    let mut grad = dist.probabilities.clone();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// A sequence already converted to the training float width.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Matrix<f64>,
    pub label: usize,
}

impl Example {
    pub fn from_sequence(seq: &GestureSequence) -> Option<Self> {
        Some(Example {
            input: seq.to_matrix(),
            label: seq.label?,
        })
    }
}

/// Converts labelled sequences; unlabelled ones are skipped.
pub fn examples<'a>(seqs: impl IntoIterator<Item = &'a GestureSequence>) -> Vec<Example> {
    seqs.into_iter().filter_map(Example::from_sequence).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub seconds: f64,
}

impl EpochRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_metrics(&self, other: &EpochRecord) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.train_accuracy.to_bits() == other.train_accuracy.to_bits()
            && self.val_loss.map(f64::to_bits) == other.val_loss.map(f64::to_bits)
            && self.val_accuracy.map(f64::to_bits) == other.val_accuracy.map(f64::to_bits)
    }
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
    pub final_val_accuracy: Option<f64>,
    pub best_val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
}

impl TrainSummary {
    pub fn from_history(history: &[EpochRecord]) -> Option<Self> {
        let last = history.last()?;
        let best = history
            .iter()
            .filter_map(|r| r.val_accuracy.map(|a| (r.epoch, a)))
            // First epoch reaching the maximum wins.
            .fold(None, |best: Option<(usize, f64)>, (e, a)| match best {
                Some((_, b)) if b >= a => best,
                _ => Some((e, a)),
            });
        Some(TrainSummary {
            epochs: history.len(),
            final_train_loss: last.train_loss,
            final_train_accuracy: last.train_accuracy,
            final_val_accuracy: last.val_accuracy,
            best_val_accuracy: best.map(|b| b.1),
            best_epoch: best.map(|b| b.0),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GestureClassifier<f64>,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn summary(&self) -> TrainSummary {
        TrainSummary::from_history(&self.history).expect("at least one epoch")
    }
}

/// Batch gradient (mean over samples), mean loss and correct count.
fn batch_gradient(
    model: &GestureClassifier<f64>,
    batch: &[&Example],
) -> Result<(ParamSet<f64>, f64, usize), TrainError> {
    let partials: Vec<Result<(ParamSet<f64>, f64, usize), TrainError>> = batch
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = ParamSet::zeros(model.architecture());
            let mut loss = 0.0;
            let mut correct = 0;
            for ex in chunk {
                let cache = model.forward_cached(&ex.input)?;
                let (l, d_logits) = cross_entropy(&cache.distribution, ex.label)?;
                loss += l;
                correct += usize::from(cache.distribution.index == ex.label);
                model.backward_into(&ex.input, &cache, &d_logits, &mut acc, false)?;
            }
            Ok((acc, loss, correct))
        })
        .collect();

    let mut total: Option<ParamSet<f64>> = None;
    let mut loss = 0.0;
    let mut correct = 0;
    for p in partials {
        let (g, l, c) = p?;
        loss += l;
        correct += c;
        match total.as_mut() {
            Some(t) => t.add_assign(&g),
            None => total = Some(g),
        }
    }
    let mut grad = total.expect("batch is non-empty");
    let n = batch.len() as f64;
    grad.scale(1.0 / n);
    Ok((grad, loss / n, correct))
}

/// Mean loss and accuracy of `model` over `set`.
pub fn evaluate_loss(
    model: &GestureClassifier<f64>,
    set: &[Example],
) -> Result<(f64, f64), TrainError> {
    let per: Vec<Result<(f64, bool), TrainError>> = set
        .par_iter()
        .map(|ex| {
            let p = model.forward(&ex.input)?;
            let (l, _) = cross_entropy(&p.distribution, ex.label)?;
            Ok((l, p.distribution.index == ex.label))
        })
        .collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for r in per {
        let (l, ok) = r?;
        loss += l;
        correct += usize::from(ok);
    }
    let n = set.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains `model` in place on `train_set`, evaluating on `val_set` after
/// every epoch when it is non-empty.
pub fn train_model(
    mut model: GestureClassifier<f64>,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let num_classes = model.architecture().num_classes;
    for ex in train_set.iter().chain(val_set) {
        if ex.label >= num_classes {
            return Err(TrainError::Target {
                target: ex.label,
                num_classes,
            });
        }
    }
    let batch_size = config.effective_batch_size(train_set.len());
    let mut rng = SeededRng::derive(config.seed, SHUFFLE_STREAM);
    let mut state = AdamState::for_params(model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_set[i]).collect();
            let (mut grad, loss, c) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            if let Some(max) = config.clip_norm {
                let norm = grad.sum_of_squares().sqrt();
                if norm > max {
                    grad.scale(max / norm);
                }
            }
            loss_sum += loss * batch.len() as f64;
            correct += c;
            let grads = grad.tensors();
            adam_step(&mut model.params_mut().tensors_mut(), &grads, &mut state, config);
        }
        if !model.params().is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: train_set.len().div_ceil(batch_size) - 1,
            });
        }
        let n = train_set.len() as f64;
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(&model, val_set)?;
            (Some(l), Some(a))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        tracing::info!(
            epoch,
            train_loss = record.train_loss,
            train_accuracy = record.train_accuracy,
            val_loss = record.val_loss,
            val_accuracy = record.val_accuracy,
            seconds = record.seconds,
            "epoch finished"
        );
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { model, history })
}

/// Builds a Glorot-initialised model of the configured variant (seeded by
/// `config.seed`) and trains it.
pub fn train(
    arch: Architecture,
    class_names: Vec<String>,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if arch.variant != config.variant {
        return Err(TrainError::Config(format!(
            "architecture is {} but the configuration asks for {}",
            arch.variant, config.variant
        )));
    }
    let model = GestureClassifier::new(arch, class_names, config.seed)?;
    train_model(model, train_set, val_set, config, |_| {})
}

/// Learning curves as CSV: `epoch,train_loss,train_acc,val_loss,val_acc,seconds`.
pub fn curves_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6}",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            opt(r.val_loss),
            opt(r.val_accuracy),
            r.seconds
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch(variant: Variant) -> Architecture {
        Architecture {
            variant,
            timesteps: 3,
            input_dim: 4,
            gru_units: [2, 3, 2],
            dense_units: [6, 5],
            num_classes: 3,
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn random_examples(n: usize, arch: &Architecture, seed: u64) -> Vec<Example> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|i| Example {
                input: Matrix::from_vec(
                    arch.timesteps,
                    arch.input_dim,
                    (0..arch.timesteps * arch.input_dim)
                        .map(|_| rng.uniform(-1.0, 1.0))
                        .collect(),
                )
                .unwrap(),
                label: i % arch.num_classes,
            })
            .collect()
    }

    #[test]
    fn cross_entropy_cases() {
        let d = ClassDistribution::from_probabilities(vec![0.0, 1.0, 0.0]);
        let (l, g) = cross_entropy(&d, 1).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));

        let d = ClassDistribution::from_probabilities(vec![1.0 / 21.0; 21]);
        let (l, _) = cross_entropy(&d, 5).unwrap();
        assert!((l - 21f64.ln()).abs() < 1e-12);
        assert!((l - 3.044_522_437_723_423).abs() < 1e-12);

        // softmax([0.3, -1.2, 2.0, 0.5]) against target 0, computed with
        // Python's math module: -log(p0) = 2.0691993073690185.
        let d = ClassDistribution::from_logits(vec![0.3, -1.2, 2.0, 0.5]);
        let (l, g) = cross_entropy(&d, 0).unwrap();
        assert!((l - 2.069_199_307_369_018_5).abs() < 1e-12, "{l}");
        let s: f64 = g.iter().sum();
        assert!(s.abs() < 1e-12);

        assert!(matches!(cross_entropy(&d, 4), Err(TrainError::Target { .. })));
        let d = ClassDistribution::from_probabilities(vec![1.0, 0.0]);
        assert!((cross_entropy(&d, 1).unwrap().0 + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn adam_scalar_first_step_is_lr() {
        let cfg = TrainConfig::default();
        let mut p = Matrix::from_vec(1, 1, vec![0.5]).unwrap();
        let g = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mut st = AdamState::new([(1, 1)]);
        adam_step(&mut [&mut p], &[&g], &mut st, &cfg);
        // m̂ = v̂ = 1, so the step is lr / (1 + ε).
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((p.get(0, 0) - expected).abs() < 1e-15);
        assert_eq!(st.t, 1);
        // With a constant gradient every bias-corrected step stays lr/(1+ε).
        for k in 2..=5 {
            adam_step(&mut [&mut p], &[&g], &mut st, &cfg);
            let expected = 0.5 - k as f64 * 1e-3 / (1.0 + 1e-8);
            assert!((p.get(0, 0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_and_identical_tensors() {
        let cfg = TrainConfig::default();
        let mut a = Matrix::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.25]).unwrap();
        let mut b = a.clone();
        let zero = Matrix::zeros(2, 2);
        let mut st = AdamState::new([(2, 2), (2, 2)]);
        for _ in 0..10 {
            adam_step(&mut [&mut a, &mut b], &[&zero, &zero], &mut st, &cfg);
        }
        assert_eq!(a.as_slice(), &[1.0, -2.0, 3.0, 0.25]);

        let g = Matrix::from_vec(2, 2, vec![0.3, -0.7, 1e-4, 5.0]).unwrap();
        for _ in 0..10 {
            adam_step(&mut [&mut a, &mut b], &[&g, &g], &mut st, &cfg);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..ok }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..ok }.validate().is_err());
        assert!(TrainConfig { learning_rate: f64::NAN, ..ok }.validate().is_err());
        assert!(TrainConfig { beta2: 1.0, ..ok }.validate().is_err());
        assert!(TrainConfig { clip_norm: Some(0.0), ..ok }.validate().is_err());
        assert_eq!(ok.effective_batch_size(504), 128);
        assert_eq!(ok.effective_batch_size(5), 5);
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let arch = tiny_arch(Variant::MlaGru);
        let data = random_examples(1, &arch, 3);
        let model = GestureClassifier::new(arch, names(3), 9).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train_model(model.clone(), &data, &[], &cfg, |_| {}).unwrap();
        assert_eq!(out.model, model);
    }

    #[test]
    fn single_sample_overfits() {
        for variant in [Variant::MlaGru, Variant::ClassicalGru] {
            let arch = tiny_arch(variant);
            let data = random_examples(1, &arch, 5);
            let model = GestureClassifier::new(arch, names(3), 1).unwrap();
            let cfg = TrainConfig {
                epochs: 200,
                learning_rate: 0.05,
                variant,
                ..TrainConfig::default()
            };
            let out = train_model(model, &data, &[], &cfg, |_| {}).unwrap();
            let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
            assert!(*losses.last().unwrap() < 1e-3, "{variant}: {:?}", &losses[190..]);
            for w in losses[5..].windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9), "{variant}: loss rose {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn same_seed_same_weights_regardless_of_threads() {
        let arch = tiny_arch(Variant::MlaGru);
        let data = random_examples(30, &arch, 8);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 7,
            learning_rate: 0.01,
            seed: 4,
            ..TrainConfig::default()
        };
        let a = train(arch, names(3), &data, &data[..6], &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| train(arch, names(3), &data, &data[..6], &cfg).unwrap());
        assert_eq!(a.model, b.model);
        assert!(a.history.iter().zip(&b.history).all(|(x, y)| x.same_metrics(y)));
    }

    #[test]
    fn summary_picks_first_best_epoch() {
        let rec = |epoch, acc| EpochRecord {
            epoch,
            train_loss: 1.0,
            train_accuracy: 0.5,
            val_loss: Some(1.0),
            val_accuracy: Some(acc),
            seconds: 0.0,
        };
        let s = TrainSummary::from_history(&[rec(1, 0.2), rec(2, 0.9), rec(3, 0.9), rec(4, 0.8)])
            .unwrap();
        assert_eq!(s.best_epoch, Some(2));
        assert_eq!(s.best_val_accuracy, Some(0.9));
        assert_eq!(s.final_val_accuracy, Some(0.8));
        let csv = curves_csv(&[rec(1, 0.25)]);
        assert_eq!(csv.lines().nth(1).unwrap(), "1,1,0.5,1,0.25,0.000000");
    }
}

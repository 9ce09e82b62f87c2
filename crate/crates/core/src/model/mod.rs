//! Gesture classifiers: the multi-layer attention GRU and the classical GRU
//! baseline that shares its recurrent stack and dense head.
//!
//! Both variants run three stacked GRU layers (each consumes the previous
//! layer's full output sequence). The attention variant concatenates the
//! three output sequences per timestep, uses the last timestep as the query
//! over all timesteps and feeds the context vector to the head; the baseline
//! feeds the last hidden state of the third layer to the same head.

mod attention;
pub mod format;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gru::{GruError, GruParams, GruSequence};
use crate::numerics::{
    argmax, matvec_acc, matvec_t_acc, outer_acc, softmax_in_place, Matrix, NumericsError, Real,
    SeededRng,
};

pub use attention::{attend, AttentionTrace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid class table: {0}")]
    ClassTable(String),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("forward cache does not match: {0}")]
    CacheMismatch(String),
    #[error(transparent)]
    Gru(#[from] GruError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    MlaGru,
    ClassicalGru,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::MlaGru => "mla-gru",
            Variant::ClassicalGru => "classical-gru",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::MlaGru => "MLA-GRU",
            Variant::ClassicalGru => "GRU",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mla-gru" | "mla" => Ok(Variant::MlaGru),
            "classical-gru" | "gru" | "classical" => Ok(Variant::ClassicalGru),
            other => Err(format!("unknown model variant `{other}`")),
        }
    }
}

/// Layer sizes and sequence geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub variant: Variant,
    pub timesteps: usize,
    pub input_dim: usize,
    pub gru_units: [usize; 3],
    pub dense_units: [usize; 2],
    pub num_classes: usize,
}

impl Architecture {
    /// 30 × 1662 input, GRU 64/128/64, dense 256/128, 21 classes.
    pub fn standard(variant: Variant) -> Self {
        Architecture {
            variant,
            timesteps: crate::dataset::TIMESTEPS,
            input_dim: crate::dataset::FEATURE_DIM,
            gru_units: [64, 128, 64],
            dense_units: [256, 128],
            num_classes: crate::dataset::NUM_CLASSES,
        }
    }

    /// Width of the vector entering the dense head.
    pub fn head_input(&self) -> usize {
        match self.variant {
            Variant::MlaGru => self.concat_width(),
            Variant::ClassicalGru => self.gru_units[2],
        }
    }

    pub fn concat_width(&self) -> usize {
        self.gru_units.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.timesteps,
            self.input_dim,
            self.gru_units[0],
            self.gru_units[1],
            self.gru_units[2],
            self.dense_units[0],
            self.dense_units[1],
            self.num_classes,
        ];
        if dims.contains(&0) {
            return Err(ModelError::Architecture(format!(
                "all dimensions must be positive: {self:?}"
            )));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Architecture("need at least two classes".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let gru = |input: usize, units: usize| 3 * (units * input + units * units + units);
        let dense = |input: usize, units: usize| units * input + units;
        let [u1, u2, u3] = self.gru_units;
        let [d1, d2] = self.dense_units;
        gru(self.input_dim, u1)
            + gru(u1, u2)
            + gru(u2, u3)
            + dense(self.head_input(), d1)
            + dense(d1, d2)
            + dense(d2, self.num_classes)
    }
}

/// Fully connected layer; `bias` is a column (`units × 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(input: usize, units: usize) -> Self {
        Dense {
            weight: Matrix::zeros(units, input),
            bias: Matrix::zeros(units, 1),
        }
    }

    pub fn glorot(input: usize, units: usize, rng: &mut SeededRng) -> Self {
        Dense {
            weight: Matrix::glorot(units, input, rng),
            bias: Matrix::zeros(units, 1),
        }
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        let mut out = self.bias.as_slice().to_vec();
        matvec_acc(&self.weight, x, &mut out);
        out
    }

    fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Every trainable tensor of a classifier. Also used for gradients and
/// optimiser moments, which mirror the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub grus: [GruParams<T>; 3],
    pub dense1: Dense<T>,
    pub dense2: Dense<T>,
    pub output: Dense<T>,
}

/// Number of tensors in a [`ParamSet`].
pub const TENSOR_COUNT: usize = 33;

impl<T: Real> ParamSet<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        let [u1, u2, u3] = arch.gru_units;
        let [d1, d2] = arch.dense_units;
        ParamSet {
            grus: [
                GruParams::zeros(arch.input_dim, u1),
                GruParams::zeros(u1, u2),
                GruParams::zeros(u2, u3),
            ],
            dense1: Dense::zeros(arch.head_input(), d1),
            dense2: Dense::zeros(d1, d2),
            output: Dense::zeros(d2, arch.num_classes),
        }
    }

    pub fn glorot(arch: &Architecture, rng: &mut SeededRng) -> Self {
        let [u1, u2, u3] = arch.gru_units;
        let [d1, d2] = arch.dense_units;
        ParamSet {
            grus: [
                GruParams::glorot(arch.input_dim, u1, rng),
                GruParams::glorot(u1, u2, rng),
                GruParams::glorot(u2, u3, rng),
            ],
            dense1: Dense::glorot(arch.head_input(), d1, rng),
            dense2: Dense::glorot(d1, d2, rng),
            output: Dense::glorot(d2, arch.num_classes, rng),
        }
    }

    /// Tensors in file order: gru1 (W_r, U_r, B_r, W_z, U_z, B_z, W_h, U_h,
    /// B_h), gru2, gru3, dense1 (W, b), dense2 (W, b), output (W, b).
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut out: Vec<&Matrix<T>> = Vec::with_capacity(TENSOR_COUNT);
        for g in &self.grus {
            out.extend(g.tensors());
        }
        for d in [&self.dense1, &self.dense2, &self.output] {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out: Vec<&mut Matrix<T>> = Vec::with_capacity(TENSOR_COUNT);
        let ParamSet {
            grus,
            dense1,
            dense2,
            output,
        } = self;
        for g in grus.iter_mut() {
            out.extend(g.tensors_mut());
        }
        for d in [dense1, dense2, output] {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn tensor_names() -> Vec<String> {
        let mut names = Vec::with_capacity(TENSOR_COUNT);
        for layer in 1..=3 {
            for t in ["W_r", "U_r", "B_r", "W_z", "U_z", "B_z", "W_h", "U_h", "B_h"] {
                names.push(format!("gru{layer}.{t}"));
            }
        }
        for d in ["dense1", "dense2", "output"] {
            names.push(format!("{d}.W"));
            names.push(format!("{d}.b"));
        }
        names
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|m| m.as_slice().len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for m in z.tensors_mut() {
            m.as_mut_slice().fill(T::zero());
        }
        z
    }

    pub fn add_assign(&mut self, other: &ParamSet<T>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for m in self.tensors_mut() {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn sum_of_squares(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|m| m.as_slice().iter())
            .map(|v| *v * *v)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            grus: [self.grus[0].cast(), self.grus[1].cast(), self.grus[2].cast()],
            dense1: self.dense1.cast(),
            dense2: self.dense2.cast(),
            output: self.output.cast(),
        }
    }

    /// Tensor shapes implied by an architecture, in [`ParamSet::tensors`] order.
    pub fn shapes_for(arch: &Architecture) -> Vec<(usize, usize)> {
        let [u1, u2, u3] = arch.gru_units;
        let [d1, d2] = arch.dense_units;
        let mut shapes = Vec::with_capacity(TENSOR_COUNT);
        for (input, units) in [(arch.input_dim, u1), (u1, u2), (u2, u3)] {
            for _ in 0..3 {
                shapes.extend([(units, input), (units, units), (units, 1)]);
            }
        }
        for (input, units) in [(arch.head_input(), d1), (d1, d2), (d2, arch.num_classes)] {
            shapes.extend([(units, input), (units, 1)]);
        }
        shapes
    }

    fn shapes_match(&self, arch: &Architecture) -> bool {
        let tensors = self.tensors();
        tensors.len() == TENSOR_COUNT
            && tensors
                .iter()
                .zip(Self::shapes_for(arch))
                .all(|(a, b)| a.shape() == b)
    }
}

/// Softmax output of a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution<T> {
    pub probabilities: Vec<T>,
    pub index: usize,
    pub confidence: T,
}

impl<T: Real> ClassDistribution<T> {
    pub fn from_logits(mut logits: Vec<T>) -> Self {
        softmax_in_place(&mut logits);
        Self::from_probabilities(logits)
    }

    pub fn from_probabilities(probabilities: Vec<T>) -> Self {
        let index = argmax(&probabilities);
        let confidence = probabilities[index];
        ClassDistribution {
            probabilities,
            index,
            confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub distribution: ClassDistribution<T>,
    /// Present for the attention variant only.
    pub attention: Option<AttentionTrace<T>>,
}

/// Every intermediate of a forward pass needed by [`GestureClassifier::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub layers: [GruSequence<T>; 3],
    pub attention: Option<AttentionTrace<T>>,
    pub head_input: Vec<T>,
    pub hidden1: Vec<T>,
    pub hidden2: Vec<T>,
    pub distribution: ClassDistribution<T>,
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: ParamSet<T>,
    /// ∂L/∂input, one row per timestep, when requested.
    pub input: Option<Matrix<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureClassifier<T> {
    arch: Architecture,
    params: ParamSet<T>,
    class_names: Vec<String>,
}

fn validate_class_names(names: &[String], num_classes: usize) -> Result<()> {
    if names.len() != num_classes {
        return Err(ModelError::ClassTable(format!(
            "{} names for {num_classes} classes",
            names.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(ModelError::ClassTable(format!("duplicate class name `{n}`")));
        }
    }
    Ok(())
}

impl<T: Real> GestureClassifier<T> {
    /// Glorot-initialised model. Same seed and architecture give
    /// bit-identical weights.
    pub fn new(arch: Architecture, class_names: Vec<String>, seed: u64) -> Result<Self> {
        arch.validate()?;
        validate_class_names(&class_names, arch.num_classes)?;
        let mut rng = SeededRng::new(seed);
        Ok(GestureClassifier {
            arch,
            params: ParamSet::glorot(&arch, &mut rng),
            class_names,
        })
    }

    pub fn from_params(arch: Architecture, params: ParamSet<T>, class_names: Vec<String>) -> Result<Self> {
        arch.validate()?;
        validate_class_names(&class_names, arch.num_classes)?;
        if !params.shapes_match(&arch) {
            return Err(ModelError::Shape(
                "parameter shapes do not match the architecture".into(),
            ));
        }
        if !params.is_finite() {
            return Err(ModelError::NonFinite("parameters"));
        }
        Ok(GestureClassifier {
            arch,
            params,
            class_names,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn cast<U: Real>(&self) -> GestureClassifier<U> {
        GestureClassifier {
            arch: self.arch,
            params: self.params.cast(),
            class_names: self.class_names.clone(),
        }
    }

    fn check_input(&self, seq: &Matrix<T>) -> Result<()> {
        if seq.shape() != (self.arch.timesteps, self.arch.input_dim) {
            return Err(ModelError::Shape(format!(
                "expected a {}x{} sequence, got {}x{}",
                self.arch.timesteps,
                self.arch.input_dim,
                seq.rows(),
                seq.cols()
            )));
        }
        if !seq.is_finite() {
            return Err(ModelError::NonFinite("input sequence"));
        }
        Ok(())
    }

    /// Inference: class distribution plus the attention trace (attention
    /// variant only).
    pub fn forward(&self, seq: &Matrix<T>) -> Result<Prediction<T>> {
        let cache = self.forward_cached(seq)?;
        Ok(Prediction {
            distribution: cache.distribution,
            attention: cache.attention,
        })
    }

    pub fn forward_cached(&self, seq: &Matrix<T>) -> Result<ForwardCache<T>> {
        self.check_input(seq)?;
        let [g1, g2, g3] = &self.params.grus;
        let s1 = g1.forward(seq)?;
        let s2 = g2.forward(&s1.hidden)?;
        let s3 = g3.forward(&s2.hidden)?;

        let (head_input, attention) = match self.arch.variant {
            Variant::MlaGru => {
                let concat = concat_columns(&[&s1.hidden, &s2.hidden, &s3.hidden]);
                let query = concat.row(concat.rows() - 1).to_vec();
                let key_dim = T::lit(concat.cols() as f64);
                let (scores, context) = attend(&query, &concat, &concat, key_dim)?;
                let trace = AttentionTrace {
                    query,
                    values: concat,
                    scores,
                    context: context.clone(),
                    key_dim,
                };
                (context, Some(trace))
            }
            Variant::ClassicalGru => (s3.last_hidden().to_vec(), None),
        };

        let hidden1 = relu_owned(self.params.dense1.apply(&head_input));
        let hidden2 = relu_owned(self.params.dense2.apply(&hidden1));
        let logits = self.params.output.apply(&hidden2);
        if !crate::numerics::all_finite(&logits) {
            return Err(ModelError::NonFinite("output logits"));
        }
        Ok(ForwardCache {
            layers: [s1, s2, s3],
            attention,
            head_input,
            hidden1,
            hidden2,
            distribution: ClassDistribution::from_logits(logits),
        })
    }

    /// Backpropagates `d_logits` (∂L/∂logits) through the head, attention
    /// and the three GRU layers.
    pub fn backward(
        &self,
        seq: &Matrix<T>,
        cache: &ForwardCache<T>,
        d_logits: &[T],
        want_input_grad: bool,
    ) -> Result<Gradients<T>> {
        let mut params = ParamSet::zeros(&self.arch);
        let input = self.backward_into(seq, cache, d_logits, &mut params, want_input_grad)?;
        Ok(Gradients { params, input })
    }

    /// Like [`GestureClassifier::backward`], but adds the parameter
    /// gradients into `acc`. Returns ∂L/∂input when requested.
    pub fn backward_into(
        &self,
        seq: &Matrix<T>,
        cache: &ForwardCache<T>,
        d_logits: &[T],
        acc: &mut ParamSet<T>,
        want_input_grad: bool,
    ) -> Result<Option<Matrix<T>>> {
        if d_logits.len() != self.arch.num_classes {
            return Err(ModelError::Shape(format!(
                "{} logit gradients for {} classes",
                d_logits.len(),
                self.arch.num_classes
            )));
        }
        if cache.head_input.len() != self.arch.head_input()
            || cache.layers[0].len() != seq.rows()
            || cache.layers[0].hidden.cols() != self.arch.gru_units[0]
        {
            return Err(ModelError::CacheMismatch(
                "cache was produced by a different model or input".into(),
            ));
        }
        if !acc.shapes_match(&self.arch) {
            return Err(ModelError::Shape(
                "gradient accumulator does not match the architecture".into(),
            ));
        }
        let p = &self.params;

        // Output layer.
        outer_acc(&mut acc.output.weight, d_logits, &cache.hidden2);
        add_slice(acc.output.bias.as_mut_slice(), d_logits);
        let mut d_h2 = vec![T::zero(); cache.hidden2.len()];
        matvec_t_acc(&p.output.weight, d_logits, &mut d_h2);
        relu_mask(&mut d_h2, &cache.hidden2);

        outer_acc(&mut acc.dense2.weight, &d_h2, &cache.hidden1);
        add_slice(acc.dense2.bias.as_mut_slice(), &d_h2);
        let mut d_h1 = vec![T::zero(); cache.hidden1.len()];
        matvec_t_acc(&p.dense2.weight, &d_h2, &mut d_h1);
        relu_mask(&mut d_h1, &cache.hidden1);

        outer_acc(&mut acc.dense1.weight, &d_h1, &cache.head_input);
        add_slice(acc.dense1.bias.as_mut_slice(), &d_h1);
        let mut d_head = vec![T::zero(); cache.head_input.len()];
        matvec_t_acc(&p.dense1.weight, &d_h1, &mut d_head);

        let steps = seq.rows();
        let [u1, u2, u3] = self.arch.gru_units;
        let (mut up1, mut up2, up3) = match (&cache.attention, self.arch.variant) {
            (Some(trace), Variant::MlaGru) => {
                let d_concat = attention::self_attend_backward(trace, &d_head);
                (
                    d_concat.column_block(0, u1),
                    d_concat.column_block(u1, u2),
                    d_concat.column_block(u1 + u2, u3),
                )
            }
            (None, Variant::ClassicalGru) => {
                let mut up3 = Matrix::zeros(steps, u3);
                up3.row_mut(steps - 1).copy_from_slice(&d_head);
                (Matrix::zeros(steps, u1), Matrix::zeros(steps, u2), up3)
            }
            _ => {
                return Err(ModelError::CacheMismatch(
                    "attention trace does not match the model variant".into(),
                ))
            }
        };

        let [s1, s2, s3] = &cache.layers;
        let [a1, a2, a3] = &mut acc.grus;
        let dx3 = p.grus[2].backward_into(&s2.hidden, s3, &up3, a3, true)?;
        add_matrix(&mut up2, dx3.as_ref().expect("requested"));
        let dx2 = p.grus[1].backward_into(&s1.hidden, s2, &up2, a2, true)?;
        add_matrix(&mut up1, dx2.as_ref().expect("requested"));
        Ok(p.grus[0].backward_into(seq, s1, &up1, a1, want_input_grad)?)
    }
}

fn add_slice<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += *b;
    }
}

fn relu_owned<T: Real>(mut v: Vec<T>) -> Vec<T> {
    for x in v.iter_mut() {
        if !(*x > T::zero()) {
            *x = T::zero();
        }
    }
    v
}

/// Zeroes gradient entries whose activation was clipped by ReLU.
fn relu_mask<T: Real>(grad: &mut [T], activation: &[T]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if !(*a > T::zero()) {
            *g = T::zero();
        }
    }
}

fn add_matrix<T: Real>(dst: &mut Matrix<T>, src: &Matrix<T>) {
    for (a, b) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *a += *b;
    }
}

/// Per-row concatenation along the feature axis.
fn concat_columns<T: Real>(parts: &[&Matrix<T>]) -> Matrix<T> {
    let rows = parts[0].rows();
    let cols: usize = parts.iter().map(|m| m.cols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let mut offset = 0;
        let row = out.row_mut(r);
        for m in parts {
            row[offset..offset + m.cols()].copy_from_slice(m.row(r));
            offset += m.cols();
        }
    }
    out
}

//! Scaled dot-product attention over timesteps with a single query.

use crate::numerics::{self, axpy, dot, softmax_in_place, Matrix, Real};

use super::{ModelError, Result};

/// Inputs and outputs of one attention evaluation. Keys and values are the
/// same matrix (the concatenated GRU outputs), so it is stored once.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace<T> {
    pub query: Vec<T>,
    pub values: Matrix<T>,
    pub scores: Vec<T>,
    pub context: Vec<T>,
    pub key_dim: T,
}

/// `scores = softmax(K·q / sqrt(d_k))`, `context = Σ_t scores_t · V_t`.
pub fn attend<T: Real>(
    query: &[T],
    keys: &Matrix<T>,
    values: &Matrix<T>,
    key_dim: T,
) -> Result<(Vec<T>, Vec<T>)> {
    if query.len() != keys.cols() || keys.rows() != values.rows() {
        return Err(ModelError::Shape(format!(
            "attend: q[{}], K {:?}, V {:?}",
            query.len(),
            keys.shape(),
            values.shape()
        )));
    }
    if keys.rows() == 0 {
        return Err(ModelError::Shape("attend: no timesteps".into()));
    }
    if !(key_dim > T::zero()) {
        return Err(ModelError::Shape("attend: d_k must be positive".into()));
    }
    let scale = T::one() / key_dim.sqrt();
    let mut scores: Vec<T> = (0..keys.rows())
        .map(|t| dot(keys.row(t), query) * scale)
        .collect();
    softmax_in_place(&mut scores);
    let mut context = vec![T::zero(); values.cols()];
    for (t, &s) in scores.iter().enumerate() {
        axpy(s, values.row(t), &mut context);
    }
    if !numerics::all_finite(&context) {
        return Err(ModelError::NonFinite("attention context"));
    }
    Ok((scores, context))
}

/// Gradient of the self-attention block where the query is the last row of
/// `values` and keys equal values. Returns ∂L/∂values given ∂L/∂context.
pub(crate) fn self_attend_backward<T: Real>(trace: &AttentionTrace<T>, d_context: &[T]) -> Matrix<T> {
    let h = &trace.values;
    let steps = h.rows();
    let scale = T::one() / trace.key_dim.sqrt();
    let mut d_h = Matrix::zeros(steps, h.cols());

    // Value path and the softmax Jacobian.
    let d_scores: Vec<T> = (0..steps).map(|t| dot(h.row(t), d_context)).collect();
    let mean: T = trace
        .scores
        .iter()
        .zip(&d_scores)
        .map(|(s, d)| *s * *d)
        .sum();
    let mut d_query = vec![T::zero(); h.cols()];
    for t in 0..steps {
        let s = trace.scores[t];
        let d_logit = s * (d_scores[t] - mean) * scale;
        let row = d_h.row_mut(t);
        axpy(s, d_context, row);
        // Key path.
        axpy(d_logit, &trace.query, row);
        axpy(d_logit, h.row(t), &mut d_query);
    }
    // Query is the last timestep.
    axpy(T::one(), &d_query, d_h.row_mut(steps - 1));
    d_h
}

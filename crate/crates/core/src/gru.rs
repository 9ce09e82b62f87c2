//! Classical GRU cell and sequence layer with hand-derived backpropagation
//! through time.
//!
//! ```text
//! r_t = σ(W_r x_t + U_r h_{t-1} + b_r)
//! z_t = σ(W_z x_t + U_z h_{t-1} + b_z)
//! h̃_t = tanh(W_h x_t + U_h (r_t ⊙ h_{t-1}) + b_h)
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ h̃_t
//! ```
//!
//! The initial state is always zero unless [`GruParams::forward_from`] is
//! used explicitly.

use thiserror::Error;

use crate::numerics::{
    self, all_finite, gemm_nn_acc, gemm_nt, gemm_tn_acc, matvec_acc, matvec_t_acc, sigmoid_scalar,
    tanh_scalar, Matrix, NumericsError, Real, SeededRng,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GruError {
    #[error("GRU shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in GRU {0}")]
    NonFinite(&'static str),
    #[error("empty input sequence")]
    EmptySequence,
    #[error("forward cache does not match this call: {0}")]
    CacheMismatch(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, GruError>;

/// Weights of one GRU layer. Input weights are `units × input_dim`,
/// recurrent weights `units × units`, biases `units × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<T> {
    pub w_r: Matrix<T>,
    pub u_r: Matrix<T>,
    pub b_r: Matrix<T>,
    pub w_z: Matrix<T>,
    pub u_z: Matrix<T>,
    pub b_z: Matrix<T>,
    pub w_h: Matrix<T>,
    pub u_h: Matrix<T>,
    pub b_h: Matrix<T>,
}

/// Gate activations and new state for a single timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep<T> {
    pub reset: Vec<T>,
    pub update: Vec<T>,
    pub candidate: Vec<T>,
    pub hidden: Vec<T>,
}

/// Forward cache for a whole sequence: one row per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct GruSequence<T> {
    pub h0: Vec<T>,
    pub reset: Matrix<T>,
    pub update: Matrix<T>,
    pub candidate: Matrix<T>,
    pub hidden: Matrix<T>,
}

impl<T: Real> GruSequence<T> {
    pub fn len(&self) -> usize {
        self.hidden.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self, t: usize) -> GruStep<T> {
        GruStep {
            reset: self.reset.row(t).to_vec(),
            update: self.update.row(t).to_vec(),
            candidate: self.candidate.row(t).to_vec(),
            hidden: self.hidden.row(t).to_vec(),
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = GruStep<T>> + '_ {
        (0..self.len()).map(|t| self.step(t))
    }

    /// Hidden state after the final timestep.
    pub fn last_hidden(&self) -> &[T] {
        self.hidden.row(self.len() - 1)
    }

    fn previous(&self, t: usize) -> &[T] {
        if t == 0 {
            &self.h0
        } else {
            self.hidden.row(t - 1)
        }
    }
}

impl<T: Real> GruParams<T> {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        GruParams {
            w_r: Matrix::zeros(units, input_dim),
            u_r: Matrix::zeros(units, units),
            b_r: Matrix::zeros(units, 1),
            w_z: Matrix::zeros(units, input_dim),
            u_z: Matrix::zeros(units, units),
            b_z: Matrix::zeros(units, 1),
            w_h: Matrix::zeros(units, input_dim),
            u_h: Matrix::zeros(units, units),
            b_h: Matrix::zeros(units, 1),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(input_dim: usize, units: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(input_dim, units);
        p.w_r = Matrix::glorot(units, input_dim, rng);
        p.u_r = Matrix::glorot(units, units, rng);
        p.w_z = Matrix::glorot(units, input_dim, rng);
        p.u_z = Matrix::glorot(units, units, rng);
        p.w_h = Matrix::glorot(units, input_dim, rng);
        p.u_h = Matrix::glorot(units, units, rng);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.cols()
    }

    pub fn units(&self) -> usize {
        self.w_r.rows()
    }

    /// Tensors in declaration order: W_r, U_r, B_r, W_z, U_z, B_z, W_h, U_h, B_h.
    pub fn tensors(&self) -> [&Matrix<T>; 9] {
        [
            &self.w_r, &self.u_r, &self.b_r, &self.w_z, &self.u_z, &self.b_z, &self.w_h,
            &self.u_h, &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 9] {
        [
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|m| m.as_slice().len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.units(), self.input_dim());
        let expect = [(n, d), (n, n), (n, 1)];
        for (i, m) in self.tensors().iter().enumerate() {
            if m.shape() != expect[i % 3] {
                return Err(GruError::Shape(format!(
                    "tensor {i} is {:?}, expected {:?}",
                    m.shape(),
                    expect[i % 3]
                )));
            }
            if !m.is_finite() {
                return Err(GruError::NonFinite("parameters"));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> GruParams<U> {
        GruParams {
            w_r: self.w_r.cast(),
            u_r: self.u_r.cast(),
            b_r: self.b_r.cast(),
            w_z: self.w_z.cast(),
            u_z: self.u_z.cast(),
            b_z: self.b_z.cast(),
            w_h: self.w_h.cast(),
            u_h: self.u_h.cast(),
            b_h: self.b_h.cast(),
        }
    }

    /// One step of the recurrence given the input projections
    /// `W_* x_t + b_*` for this timestep.
    fn step_from_projection(
        &self,
        proj_r: &[T],
        proj_z: &[T],
        proj_h: &[T],
        h_prev: &[T],
        out: StepOut<'_, T>,
    ) {
        let n = self.units();
        let mut pre_r = proj_r.to_vec();
        let mut pre_z = proj_z.to_vec();
        matvec_acc(&self.u_r, h_prev, &mut pre_r);
        matvec_acc(&self.u_z, h_prev, &mut pre_z);
        for i in 0..n {
            out.reset[i] = sigmoid_scalar(pre_r[i]);
            out.update[i] = sigmoid_scalar(pre_z[i]);
        }
        let gated: Vec<T> = (0..n).map(|i| out.reset[i] * h_prev[i]).collect();
        let mut pre_h = proj_h.to_vec();
        matvec_acc(&self.u_h, &gated, &mut pre_h);
        for i in 0..n {
            let cand = tanh_scalar(pre_h[i]);
            out.candidate[i] = cand;
            out.hidden[i] = (T::one() - out.update[i]) * h_prev[i] + out.update[i] * cand;
        }
    }

    pub fn cell_forward(&self, x: &[T], h_prev: &[T]) -> Result<GruStep<T>> {
        let n = self.units();
        if x.len() != self.input_dim() || h_prev.len() != n {
            return Err(GruError::Shape(format!(
                "cell expects x[{}], h[{n}]; got x[{}], h[{}]",
                self.input_dim(),
                x.len(),
                h_prev.len()
            )));
        }
        if !all_finite(x) || !all_finite(h_prev) {
            return Err(GruError::NonFinite("input"));
        }
        let mut proj = [
            self.b_r.as_slice().to_vec(),
            self.b_z.as_slice().to_vec(),
            self.b_h.as_slice().to_vec(),
        ];
        matvec_acc(&self.w_r, x, &mut proj[0]);
        matvec_acc(&self.w_z, x, &mut proj[1]);
        matvec_acc(&self.w_h, x, &mut proj[2]);
        let mut step = GruStep {
            reset: vec![T::zero(); n],
            update: vec![T::zero(); n],
            candidate: vec![T::zero(); n],
            hidden: vec![T::zero(); n],
        };
        self.step_from_projection(
            &proj[0],
            &proj[1],
            &proj[2],
            h_prev,
            StepOut {
                reset: &mut step.reset,
                update: &mut step.update,
                candidate: &mut step.candidate,
                hidden: &mut step.hidden,
            },
        );
        Ok(step)
    }

    /// Runs the layer over `xs` (one row per timestep) from a zero state.
    pub fn forward(&self, xs: &Matrix<T>) -> Result<GruSequence<T>> {
        self.forward_from(xs, &vec![T::zero(); self.units()])
    }

    pub fn forward_from(&self, xs: &Matrix<T>, h0: &[T]) -> Result<GruSequence<T>> {
        let (steps, n) = (xs.rows(), self.units());
        if steps == 0 {
            return Err(GruError::EmptySequence);
        }
        if xs.cols() != self.input_dim() || h0.len() != n {
            return Err(GruError::Shape(format!(
                "layer expects {}-wide inputs and h0[{n}]; got {}-wide, h0[{}]",
                self.input_dim(),
                xs.cols(),
                h0.len()
            )));
        }
        if !xs.is_finite() || !all_finite(h0) {
            return Err(GruError::NonFinite("input"));
        }
        let proj_r = project(xs, &self.w_r, &self.b_r)?;
        let proj_z = project(xs, &self.w_z, &self.b_z)?;
        let proj_h = project(xs, &self.w_h, &self.b_h)?;
        let mut seq = GruSequence {
            h0: h0.to_vec(),
            reset: Matrix::zeros(steps, n),
            update: Matrix::zeros(steps, n),
            candidate: Matrix::zeros(steps, n),
            hidden: Matrix::zeros(steps, n),
        };
        let mut h_prev = h0.to_vec();
        for t in 0..steps {
            self.step_from_projection(
                proj_r.row(t),
                proj_z.row(t),
                proj_h.row(t),
                &h_prev,
                StepOut {
                    reset: seq.reset.row_mut(t),
                    update: seq.update.row_mut(t),
                    candidate: seq.candidate.row_mut(t),
                    hidden: seq.hidden.row_mut(t),
                },
            );
            h_prev.copy_from_slice(seq.hidden.row(t));
        }
        Ok(seq)
    }

    /// Backpropagation through time.
    ///
    /// `upstream` holds ∂L/∂h_t for every timestep (rows). Returns the
    /// parameter gradients and, when requested, ∂L/∂x_t as a matrix shaped
    /// like `xs`.
    pub fn backward(
        &self,
        xs: &Matrix<T>,
        seq: &GruSequence<T>,
        upstream: &Matrix<T>,
        want_input_grad: bool,
    ) -> Result<(GruParams<T>, Option<Matrix<T>>)> {
        let mut grads = GruParams::zeros(self.input_dim(), self.units());
        let dx = self.backward_into(xs, seq, upstream, &mut grads, want_input_grad)?;
        Ok((grads, dx))
    }

    /// Like [`GruParams::backward`], but adds the parameter gradients into
    /// `grads` instead of allocating them.
    pub fn backward_into(
        &self,
        xs: &Matrix<T>,
        seq: &GruSequence<T>,
        upstream: &Matrix<T>,
        grads: &mut GruParams<T>,
        want_input_grad: bool,
    ) -> Result<Option<Matrix<T>>> {
        let (steps, n) = (seq.len(), self.units());
        if xs.rows() != steps || xs.cols() != self.input_dim() {
            return Err(GruError::CacheMismatch(format!(
                "cache covers {steps} steps, inputs are {:?}",
                xs.shape()
            )));
        }
        if seq.hidden.cols() != n || seq.h0.len() != n {
            return Err(GruError::CacheMismatch(format!(
                "cache width {} for a {n}-unit layer",
                seq.hidden.cols()
            )));
        }
        if upstream.shape() != (steps, n) {
            return Err(GruError::Shape(format!(
                "upstream gradient is {:?}, expected ({steps}, {n})",
                upstream.shape()
            )));
        }

        if grads.input_dim() != self.input_dim() || grads.units() != n {
            return Err(GruError::Shape(format!(
                "gradient accumulator is {}→{}, layer is {}→{n}",
                grads.input_dim(),
                grads.units(),
                self.input_dim()
            )));
        }
        let mut d_pre_r = Matrix::zeros(steps, n);
        let mut d_pre_z = Matrix::zeros(steps, n);
        let mut d_pre_h = Matrix::zeros(steps, n);
        // Previous states and gated states, one row per timestep, for the
        // batched recurrent-weight gradients.
        let mut prev = Matrix::zeros(steps, n);
        let mut gated = Matrix::zeros(steps, n);

        let mut carry = vec![T::zero(); n];
        let mut d_gated = vec![T::zero(); n];
        for t in (0..steps).rev() {
            let h_prev = seq.previous(t);
            let (r, z, cand) = (seq.reset.row(t), seq.update.row(t), seq.candidate.row(t));
            let dh: Vec<T> = upstream
                .row(t)
                .iter()
                .zip(&carry)
                .map(|(a, b)| *a + *b)
                .collect();

            let mut next_carry = vec![T::zero(); n];
            {
                let dph = d_pre_h.row_mut(t);
                for i in 0..n {
                    dph[i] = dh[i] * z[i] * (T::one() - cand[i] * cand[i]);
                }
            }
            {
                let dpz = d_pre_z.row_mut(t);
                for i in 0..n {
                    let dz = dh[i] * (cand[i] - h_prev[i]);
                    dpz[i] = dz * z[i] * (T::one() - z[i]);
                    next_carry[i] = dh[i] * (T::one() - z[i]);
                }
            }
            d_gated.iter_mut().for_each(|v| *v = T::zero());
            matvec_t_acc(&self.u_h, d_pre_h.row(t), &mut d_gated);
            {
                let dpr = d_pre_r.row_mut(t);
                for i in 0..n {
                    dpr[i] = d_gated[i] * h_prev[i] * r[i] * (T::one() - r[i]);
                    next_carry[i] += d_gated[i] * r[i];
                }
            }
            matvec_t_acc(&self.u_r, d_pre_r.row(t), &mut next_carry);
            matvec_t_acc(&self.u_z, d_pre_z.row(t), &mut next_carry);

            prev.row_mut(t).copy_from_slice(h_prev);
            let g = gated.row_mut(t);
            for i in 0..n {
                g[i] = r[i] * h_prev[i];
            }
            carry = next_carry;
        }

        gemm_tn_acc(&d_pre_r, xs, &mut grads.w_r)?;
        gemm_tn_acc(&d_pre_z, xs, &mut grads.w_z)?;
        gemm_tn_acc(&d_pre_h, xs, &mut grads.w_h)?;
        gemm_tn_acc(&d_pre_r, &prev, &mut grads.u_r)?;
        gemm_tn_acc(&d_pre_z, &prev, &mut grads.u_z)?;
        gemm_tn_acc(&d_pre_h, &gated, &mut grads.u_h)?;
        for (b, d) in [
            (&mut grads.b_r, &d_pre_r),
            (&mut grads.b_z, &d_pre_z),
            (&mut grads.b_h, &d_pre_h),
        ] {
            for (acc, v) in b.as_mut_slice().iter_mut().zip(d.column_sums()) {
                *acc += v;
            }
        }

        let input_grad = if want_input_grad {
            let mut dx = Matrix::zeros(steps, self.input_dim());
            gemm_nn_acc(&d_pre_r, &self.w_r, &mut dx)?;
            gemm_nn_acc(&d_pre_z, &self.w_z, &mut dx)?;
            gemm_nn_acc(&d_pre_h, &self.w_h, &mut dx)?;
            Some(dx)
        } else {
            None
        };
        Ok(input_grad)
    }
}

struct StepOut<'a, T> {
    reset: &'a mut [T],
    update: &'a mut [T],
    candidate: &'a mut [T],
    hidden: &'a mut [T],
}

/// `xs · Wᵀ + b` broadcast over rows.
fn project<T: Real>(xs: &Matrix<T>, w: &Matrix<T>, b: &Matrix<T>) -> numerics::Result<Matrix<T>> {
    let mut p = gemm_nt(xs, w)?;
    for t in 0..p.rows() {
        for (v, bias) in p.row_mut(t).iter_mut().zip(b.as_slice()) {
            *v += *bias;
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn random_params(input: usize, units: usize, rng: &mut SeededRng, scale: f64) -> GruParams<f64> {
        let mut p = GruParams::<f64>::zeros(input, units);
        for m in p.tensors_mut() {
            for v in m.as_mut_slice() {
                *v = rng.uniform(-scale, scale);
            }
        }
        p
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix<f64> {
        let data = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_cell() {
        let p = GruParams::<f64>::zeros(3, 2);
        let s = p.cell_forward(&[0.0; 3], &[0.0; 2]).unwrap();
        assert_eq!(s.reset, vec![0.5, 0.5]);
        assert_eq!(s.update, vec![0.5, 0.5]);
        assert_eq!(s.candidate, vec![0.0, 0.0]);
        assert_eq!(s.hidden, vec![0.0, 0.0]);
    }

    #[test]
    fn closed_update_gate_carries_state() {
        let mut p = GruParams::<f64>::zeros(2, 2);
        p.b_z.as_mut_slice().fill(-60.0);
        let h = [0.3, -0.7];
        let s = p.cell_forward(&[1.0, -1.0], &h).unwrap();
        for (a, b) in s.hidden.iter().zip(h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_cell_matches_hand_evaluation() {
        let mut p = GruParams::<f64>::zeros(1, 1);
        for m in [&mut p.w_r, &mut p.u_r, &mut p.w_z, &mut p.u_z, &mut p.w_h, &mut p.u_h] {
            m.as_mut_slice()[0] = 1.0;
        }
        let (x, h) = (1.0f64, 0.5f64);
        let r = sig(x + h);
        let z = sig(x + h);
        let c = (x + r * h).tanh();
        let expect = (1.0 - z) * h + z * c;
        let s = p.cell_forward(&[x], &[h]).unwrap();
        assert!((s.reset[0] - r).abs() < 1e-15);
        assert!((s.update[0] - z).abs() < 1e-15);
        assert!((s.candidate[0] - c).abs() < 1e-15);
        assert!((s.hidden[0] - expect).abs() < 1e-15);
        // Independent evaluation in Python's math module.
        assert!((s.hidden[0] - 0.816_594_531_856_201_2).abs() < 1e-15);
    }

    #[test]
    fn cell_rejects_bad_input() {
        let p = GruParams::<f64>::zeros(3, 2);
        assert!(matches!(
            p.cell_forward(&[0.0; 2], &[0.0; 2]),
            Err(GruError::Shape(_))
        ));
        assert_eq!(
            p.cell_forward(&[f64::NAN, 0.0, 0.0], &[0.0; 2]),
            Err(GruError::NonFinite("input"))
        );
    }

    #[test]
    fn layer_of_length_one_equals_cell() {
        let mut rng = SeededRng::new(9);
        let p = random_params(4, 3, &mut rng, 0.8);
        let x = random_matrix(1, 4, &mut rng);
        let seq = p.forward(&x).unwrap();
        let cell = p.cell_forward(x.row(0), &[0.0; 3]).unwrap();
        let step = seq.step(0);
        for (a, b) in step.hidden.iter().zip(&cell.hidden) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in step.reset.iter().zip(&cell.reset) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_inputs_keep_zero_state() {
        let mut rng = SeededRng::new(1);
        let p = GruParams::<f64>::glorot(5, 4, &mut rng);
        let seq = p.forward(&Matrix::zeros(7, 5)).unwrap();
        assert!(seq.hidden.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_sequence_rejected() {
        let p = GruParams::<f64>::zeros(2, 2);
        assert_eq!(p.forward(&Matrix::zeros(0, 2)), Err(GruError::EmptySequence));
    }

    #[test]
    fn layer_matches_scalar_fold() {
        let mut rng = SeededRng::new(77);
        let p = random_params(1, 1, &mut rng, 1.0);
        let xs = [0.3, -1.2, 0.8];
        let seq = p
            .forward(&Matrix::from_vec(3, 1, xs.to_vec()).unwrap())
            .unwrap();
        let g = |m: &Matrix<f64>| m.as_slice()[0];
        let mut h = 0.0;
        for (t, &x) in xs.iter().enumerate() {
            let r = sig(g(&p.w_r) * x + g(&p.u_r) * h + g(&p.b_r));
            let z = sig(g(&p.w_z) * x + g(&p.u_z) * h + g(&p.b_z));
            let c = (g(&p.w_h) * x + g(&p.u_h) * (r * h) + g(&p.b_h)).tanh();
            h = (1.0 - z) * h + z * c;
            assert!((seq.hidden.get(t, 0) - h).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = SeededRng::new(4);
        let p = random_params(3, 2, &mut rng, 1.0);
        let xs = random_matrix(4, 3, &mut rng);
        let seq = p.forward(&xs).unwrap();
        let (g, dx) = p.backward(&xs, &seq, &Matrix::zeros(4, 2), true).unwrap();
        assert!(g.tensors().iter().all(|m| m.as_slice().iter().all(|&v| v == 0.0)));
        assert!(dx.unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        let mut rng = SeededRng::new(5);
        let p = random_params(3, 2, &mut rng, 1.0);
        let xs = random_matrix(3, 3, &mut rng);
        let seq = p.forward(&xs).unwrap();
        let up = random_matrix(3, 2, &mut rng);
        let mut up2 = up.clone();
        up2.as_mut_slice().iter_mut().for_each(|v| *v *= 2.0);
        let (g1, _) = p.backward(&xs, &seq, &up, false).unwrap();
        let (g2, _) = p.backward(&xs, &seq, &up2, false).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((2.0 * x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let mut rng = SeededRng::new(6);
        let p = random_params(3, 2, &mut rng, 1.0);
        let xs = random_matrix(3, 3, &mut rng);
        let seq = p.forward(&xs).unwrap();
        let other = random_matrix(4, 3, &mut rng);
        assert!(matches!(
            p.backward(&other, &seq, &Matrix::zeros(3, 2), false),
            Err(GruError::CacheMismatch(_))
        ));
    }

    /// Loss `Σ_t ⟨g_t, h_t⟩` evaluated with the forward pass only.
    fn probe_loss(p: &GruParams<f64>, xs: &Matrix<f64>, g: &Matrix<f64>) -> f64 {
        let seq = p.forward(xs).unwrap();
        seq.hidden
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(h, w)| h * w)
            .sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn finite_difference_check(seed: u64, input: usize, units: usize, steps: usize) -> f64 {
        let mut rng = SeededRng::new(seed);
        let p = random_params(input, units, &mut rng, 1.0);
        let xs = random_matrix(steps, input, &mut rng);
        let g = random_matrix(steps, units, &mut rng);
        let seq = p.forward(&xs).unwrap();
        let (grads, dx) = p.backward(&xs, &seq, &g, true).unwrap();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for k in 0..9 {
            let len = p.tensors()[k].as_slice().len();
            for i in 0..len {
                let mut plus = p.clone();
                plus.tensors_mut()[k].as_mut_slice()[i] += eps;
                let mut minus = p.clone();
                minus.tensors_mut()[k].as_mut_slice()[i] -= eps;
                let numeric = (probe_loss(&plus, &xs, &g) - probe_loss(&minus, &xs, &g)) / (2.0 * eps);
                worst = worst.max(rel_err(grads.tensors()[k].as_slice()[i], numeric));
            }
        }
        let dx = dx.unwrap();
        for i in 0..xs.as_slice().len() {
            let mut plus = xs.clone();
            plus.as_mut_slice()[i] += eps;
            let mut minus = xs.clone();
            minus.as_mut_slice()[i] -= eps;
            let numeric = (probe_loss(&p, &plus, &g) - probe_loss(&p, &minus, &g)) / (2.0 * eps);
            worst = worst.max(rel_err(dx.as_slice()[i], numeric));
        }
        worst
    }

    #[test]
    fn tiny_cell_matches_finite_differences() {
        let worst = finite_difference_check(2024, 3, 2, 2);
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn randomized_gradient_checks() {
        for seed in 0..24u64 {
            let mut rng = SeededRng::new(seed ^ 0xABCD);
            let units = 1 + rng.below(3);
            let input = 1 + rng.below(4);
            let steps = 1 + rng.below(3);
            let worst = finite_difference_check(seed, input, units, steps);
            assert!(worst < 1e-4, "seed {seed}: max relative error {worst}");
        }
    }

    proptest! {
        #[test]
        fn gates_and_state_bounded(seed in any::<u64>(), steps in 1usize..12) {
            let mut rng = SeededRng::new(seed);
            let p = random_params(4, 3, &mut rng, 3.0);
            let xs = Matrix::from_vec(
                steps,
                4,
                (0..steps * 4).map(|_| rng.uniform(-10.0, 10.0)).collect(),
            )
            .unwrap();
            let seq = p.forward(&xs).unwrap();
            for s in seq.steps() {
                prop_assert!(s.reset.iter().all(|&v| v > 0.0 && v < 1.0));
                prop_assert!(s.update.iter().all(|&v| v > 0.0 && v < 1.0));
                prop_assert!(s.candidate.iter().all(|&v| v > -1.0 && v < 1.0));
                prop_assert!(s.hidden.iter().all(|&v| v > -1.0 && v < 1.0));
            }
        }

        #[test]
        fn forward_is_deterministic(seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let p = random_params(3, 2, &mut rng, 1.0);
            let xs = random_matrix(5, 3, &mut rng);
            prop_assert_eq!(p.forward(&xs).unwrap(), p.forward(&xs).unwrap());
        }
    }
}

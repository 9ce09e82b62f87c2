//! Dense linear algebra, elementwise activations and the seeded RNG shared by
//! every model component.
//!
//! Matrices are row-major. The hot products (`gemm_*`) are backed by the
//! `matrixmultiply` kernels; everything else is written out directly.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

fn shape_err(op: &'static str, detail: impl Into<String>) -> NumericsError {
    NumericsError::Shape {
        op,
        detail: detail.into(),
    }
}

/// On-disk/float-width code. Values are part of the model file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloatWidth {
    F32 = 4,
    F64 = 8,
}

impl FloatWidth {
    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            4 => Some(FloatWidth::F32),
            8 => Some(FloatWidth::F64),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        self as usize
    }
}

/// Scalar type the models are generic over: `f64` for training and gradient
/// checks, `f32` for latency-sensitive inference.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const WIDTH: FloatWidth;

    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    /// `c <- alpha * a(m x k) * b(k x n) + beta * c` with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

impl Real for f64 {
    const WIDTH: FloatWidth = FloatWidth::F64;

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: callers in this module pass slices whose lengths cover the
        // strided extents; every public entry point validates shapes first.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

impl Real for f32 {
    const WIDTH: FloatWidth = FloatWidth::F32;

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: see the f64 implementation.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(shape_err(
                "Matrix::from_vec",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(shape_err(
                    "Matrix::from_rows",
                    format!("row {i} has {} values, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Glorot/Xavier uniform initialisation in `±sqrt(6 / (rows + cols))`.
    pub fn glorot(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::lit(rng.uniform(-limit, limit)))
            .collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Column sums, i.e. `1ᵀ M`.
    pub fn column_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += *v;
            }
        }
        out
    }

    /// Copies columns `[start, start + width)` into a new matrix.
    pub fn column_block(&self, start: usize, width: usize) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }
}

/// Checked matrix-vector product `m · v`.
pub fn matvec<T: Real>(m: &Matrix<T>, v: &[T]) -> Result<Vec<T>> {
    if m.cols != v.len() {
        return Err(shape_err(
            "matvec",
            format!("matrix is {}x{}, vector has length {}", m.rows, m.cols, v.len()),
        ));
    }
    let mut out = vec![T::zero(); m.rows];
    matvec_acc(m, v, &mut out);
    if !all_finite(&out) {
        return Err(NumericsError::NonFinite { op: "matvec" });
    }
    Ok(out)
}

/// `out += m · v`, unchecked beyond debug assertions.
#[inline]
pub fn matvec_acc<T: Real>(m: &Matrix<T>, v: &[T], out: &mut [T]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.cols.max(1))) {
        *o += dot(row, v);
    }
}

/// `out += mᵀ · v`.
#[inline]
pub fn matvec_t_acc<T: Real>(m: &Matrix<T>, v: &[T], out: &mut [T]) {
    debug_assert_eq!(m.rows, v.len());
    debug_assert_eq!(m.cols, out.len());
    for (row, &s) in m.data.chunks_exact(m.cols.max(1)).zip(v) {
        if s != T::zero() {
            axpy(s, row, out);
        }
    }
}

/// `m += a ⊗ b` (rank-one update).
#[inline]
pub fn outer_acc<T: Real>(m: &mut Matrix<T>, a: &[T], b: &[T]) {
    debug_assert_eq!(m.rows, a.len());
    debug_assert_eq!(m.cols, b.len());
    let cols = m.cols;
    for (row, &s) in m.data.chunks_exact_mut(cols.max(1)).zip(a) {
        if s != T::zero() {
            axpy(s, b, row);
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `y += alpha * x`.
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `A · Bᵀ` for `A: m×k`, `B: n×k`.
pub fn gemm_nt<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(shape_err(
            "gemm_nt",
            format!("{}x{} · ({}x{})ᵀ", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut c = Matrix::zeros(a.rows, b.rows);
    T::gemm(
        a.rows,
        a.cols,
        b.rows,
        T::one(),
        &a.data,
        a.cols as isize,
        1,
        &b.data,
        1,
        b.cols as isize,
        T::zero(),
        &mut c.data,
        b.rows as isize,
        1,
    );
    Ok(c)
}

/// `A · B` for `A: m×k`, `B: k×n`.
pub fn gemm_nn<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(shape_err(
            "gemm_nn",
            format!("{}x{} · {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm_nn_acc(a, b, &mut c)?;
    Ok(c)
}

/// `C += A · B`.
pub fn gemm_nn_acc<T: Real>(a: &Matrix<T>, b: &Matrix<T>, c: &mut Matrix<T>) -> Result<()> {
    if a.cols != b.rows || c.rows != a.rows || c.cols != b.cols {
        return Err(shape_err(
            "gemm_nn_acc",
            format!(
                "{}x{} · {}x{} into {}x{}",
                a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
            ),
        ));
    }
    T::gemm(
        a.rows,
        a.cols,
        b.cols,
        T::one(),
        &a.data,
        a.cols as isize,
        1,
        &b.data,
        b.cols as isize,
        1,
        T::one(),
        &mut c.data,
        c.cols as isize,
        1,
    );
    Ok(())
}

/// `C += Aᵀ · B` for `A: k×m`, `B: k×n`, `C: m×n`.
pub fn gemm_tn_acc<T: Real>(a: &Matrix<T>, b: &Matrix<T>, c: &mut Matrix<T>) -> Result<()> {
    if a.rows != b.rows || c.rows != a.cols || c.cols != b.cols {
        return Err(shape_err(
            "gemm_tn_acc",
            format!(
                "({}x{})ᵀ · {}x{} into {}x{}",
                a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
            ),
        ));
    }
    T::gemm(
        a.cols,
        a.rows,
        b.cols,
        T::one(),
        &a.data,
        1,
        a.cols as isize,
        &b.data,
        b.cols as isize,
        1,
        T::one(),
        &mut c.data,
        c.cols as isize,
        1,
    );
    Ok(())
}

pub fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Largest representable value strictly below one.
#[inline]
fn below_one<T: Real>() -> T {
    T::one() - T::epsilon() / T::lit(2.0)
}

#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    // Branching on sign keeps exp() from overflowing for large |x|.
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    s.max(T::min_positive_value()).min(below_one())
}

#[inline]
pub fn tanh_scalar<T: Real>(x: T) -> T {
    let lim = below_one::<T>();
    x.tanh().max(-lim).min(lim)
}

/// Elementwise logistic function. Saturated outputs are held at the nearest
/// representable value inside `(0, 1)`.
pub fn sigmoid<T: Real>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

/// Elementwise tanh, held strictly inside `(-1, 1)`.
pub fn tanh<T: Real>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| tanh_scalar(x)).collect()
}

pub fn relu<T: Real>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    if v.is_empty() {
        return;
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x = *x / sum;
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// SplitMix64 generator.
///
/// State advances by the golden-ratio increment `0x9E3779B97F4A7C15`; each
/// output is the state passed through the finaliser
/// `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9; z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^ (z >> 31)`.
/// Uniform doubles take the top 53 bits. The stream is identical on every
/// platform and trivial to reproduce in other languages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    state: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { state: seed }
    }

    /// Independent stream derived from this seed and a label.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut mixer = SeededRng::new(seed ^ stream.rotate_left(32));
        SeededRng::new(mixer.next_u64() ^ stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by rejection (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Standard normal via Box-Muller (one draw per two uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

//! Small dense linear algebra, a pinned random source, and the Gaussian CDF.
//!
//! Everything the GP engine needs and nothing more: row-major matrices, a
//! Cholesky factorization with an escalating jitter ladder, and a seeded
//! ChaCha8 stream so experiment logs replay bit-identically.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// First rung of the jitter ladder, relative to the mean diagonal.
pub const JITTER_START: f64 = 1e-8;
/// Last rung of the jitter ladder, relative to the mean diagonal.
pub const JITTER_CAP: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is not positive definite (jitter escalated to {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("cannot draw {k} distinct indices from a population of {population}")]
    KTooLarge { k: usize, population: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out_row);
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Symmetry within `1e-12 * max(1, |a_ij|)`.
    pub fn check_symmetric(&self) -> Result<(), NumericsError> {
        if !self.is_square() {
            return Err(NumericsError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        for i in 0..self.rows {
            for j in 0..i {
                let (a, b) = (self[(i, j)], self[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(NumericsError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lower-triangular Cholesky factor together with the diagonal jitter that
/// made the factorization succeed.
#[derive(Debug, Clone)]
pub struct Cholesky {
    factor: Matrix,
    jitter: f64,
}

impl Cholesky {
    /// The lower-triangular `L` with `L Lᵀ = A + jitter I`.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    pub fn into_factor(self) -> Matrix {
        self.factor
    }

    /// Absolute jitter added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.factor.rows
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.factor;
        let n = l.rows;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 0..n {
            let row = l.row(i);
            let s = x[i] - dot(&row[..i], &x[..i]);
            x[i] = s / row[i];
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.factor;
        let n = l.rows;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let row = l.row(i);
            x[i] /= row[i];
            let xi = x[i];
            for (xj, lij) in x[..i].iter_mut().zip(&row[..i]) {
                *xj -= lij * xi;
            }
        }
        x
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Solves `L X = B` for a block of right-hand sides stored row-major.
    pub fn solve_lower_matrix(&self, b: &Matrix) -> Matrix {
        let l = &self.factor;
        let n = l.rows;
        assert_eq!(b.rows, n);
        let mut x = b.clone();
        let cols = x.cols;
        for i in 0..n {
            let (done, rest) = x.data.split_at_mut(i * cols);
            let xi = &mut rest[..cols];
            let lrow = l.row(i);
            for k in 0..i {
                let lik = lrow[k];
                if lik != 0.0 {
                    axpy(-lik, &done[k * cols..(k + 1) * cols], xi);
                }
            }
            let inv = 1.0 / lrow[i];
            xi.iter_mut().for_each(|v| *v *= inv);
        }
        x
    }

    /// `log det(L Lᵀ)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L⁻¹`, lower triangular.
    pub fn inverse_factor(&self) -> Matrix {
        self.solve_lower_matrix(&Matrix::identity(self.dim()))
    }

    /// `tr((L Lᵀ)⁻¹) = ‖L⁻¹‖²_F`.
    pub fn inverse_trace(&self) -> f64 {
        self.inverse_factor().data.iter().map(|v| v * v).sum()
    }
}

fn try_cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (li, lj) = (i * n, j * n);
            let s = a.data[li + j] - dot(&l.data[li..li + j], &l.data[lj..lj + j]);
            if i == j {
                let d = s + jitter;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l.data[li + i] = d.sqrt();
            } else {
                l.data[li + j] = s / l.data[lj + j];
            }
        }
    }
    Some(l)
}

/// Cholesky factorization of a symmetric matrix with an escalating jitter
/// ladder.
///
/// The first attempt adds `jitter` to the diagonal. On failure the jitter
/// climbs from `JITTER_START` by factors of ten up to `JITTER_CAP`, both
/// relative to the mean absolute diagonal.
pub fn cholesky(a: &Matrix, jitter: f64) -> Result<Cholesky, NumericsError> {
    a.check_symmetric()?;
    assert!(jitter >= 0.0, "jitter must be non-negative");
    let n = a.rows;
    if let Some(factor) = try_cholesky(a, jitter) {
        return Ok(Cholesky { factor, jitter });
    }
    let mean_diag = if n == 0 {
        1.0
    } else {
        a.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64
    };
    let scale = if mean_diag > 0.0 && mean_diag.is_finite() { mean_diag } else { 1.0 };
    let cap = JITTER_CAP * scale;
    let mut current = (jitter * 10.0).max(JITTER_START * scale);
    while current <= cap * (1.0 + 1e-12) {
        if let Some(factor) = try_cholesky(a, current) {
            return Ok(Cholesky {
                factor,
                jitter: current,
            });
        }
        current *= 10.0;
    }
    Err(NumericsError::NotPositiveDefinite { max_jitter: cap })
}

/// Eigen-decomposition of a symmetric matrix: `(eigenvalues, eigenvectors)`
/// with eigenvectors stored as the columns of the returned matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix), NumericsError> {
    a.check_symmetric()?;
    let n = a.rows;
    let m = nalgebra::DMatrix::from_row_slice(n, n, &a.data);
    let eig = m.symmetric_eigen();
    let vectors = Matrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)]);
    Ok((eig.eigenvalues.iter().copied().collect(), vectors))
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF via the complementary error function.
///
/// Each half-line evaluates the tail directly, so `Φ(z) + Φ(−z) = 1` holds to
/// rounding and deep negative tails keep full relative precision.
pub fn normal_cdf(z: f64) -> f64 {
    let t = z.abs() / std::f64::consts::SQRT_2;
    let tail = 0.5 * libm::erfc(t);
    if z < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Seeded random source with a pinned algorithm (ChaCha8).
///
/// Streams are identical across platforms for a given `(seed, stream)`.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    seed: u64,
}

impl Rng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    /// An independent sub-stream of the generator seeded with `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives a fresh generator from this one's output.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.inner.next_u64())
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// `k` distinct indices from `0..population`, sorted ascending.
pub fn sample_without_replacement(
    rng: &mut Rng,
    population: usize,
    k: usize,
) -> Result<Vec<usize>, NumericsError> {
    if k > population {
        return Err(NumericsError::KTooLarge { k, population });
    }
    if k == population {
        return Ok((0..population).collect());
    }
    let mut idx = rand::seq::index::sample(&mut rng.inner, population, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

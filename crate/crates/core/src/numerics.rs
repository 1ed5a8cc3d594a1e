//! Dense linear algebra and log-domain kernels.
//!
//! Everything here is a pure function over immutable inputs. Reductions run
//! in a fixed order with compensated summation, so results do not depend on
//! how callers schedule work across threads.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite matrix entry at row {}, column {}",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// Copy of the rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Neumaier-compensated sum, evaluated strictly left to right.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unbiased sample covariance (divisor n - 1) of the rows of `samples`.
///
/// Two passes: column means first, then centred cross products. Only the
/// upper triangle is accumulated and mirrored, so the result is bitwise
/// symmetric.
pub fn covariance(samples: &Matrix) -> Result<Matrix> {
    let (n, d) = samples.shape();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    let means: Vec<f64> = (0..d)
        .map(|j| compensated_sum((0..n).map(|k| samples[(k, j)])) / n as f64)
        .collect();
    let denom = (n - 1) as f64;
    let mut cov = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let s = compensated_sum(
                (0..n).map(|k| (samples[(k, i)] - means[i]) * (samples[(k, j)] - means[j])),
            );
            cov[(i, j)] = s / denom;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    Ok(cov)
}

/// Lower-triangular Cholesky factor of `A + jitter_used * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: Matrix,
    jitter_used: f64,
    log_det: f64,
}

/// Jitter grows by this factor on each failed attempt.
const JITTER_GROWTH: f64 = 10.0;
/// Give up once jitter exceeds this multiple of the mean diagonal.
const JITTER_LIMIT: f64 = 1e6;
const SYMMETRY_TOL: f64 = 1e-10;

impl CholeskyFactor {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// ln |A + jitter I|.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// L L^T, i.e. the regularized matrix that was factorized.
    pub fn reconstruct(&self) -> Matrix {
        self.lower
            .matmul(&self.lower.transpose())
            .expect("square factor")
    }

    /// Solves L y = v.
    pub fn forward_solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
        let l = &self.lower;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let s = dot(&l.row(i)[..i], &y[..i]);
            y[i] = (v[i] - s) / l[(i, i)];
        }
        Ok(y)
    }

    /// Solves L^T x = y.
    pub fn backward_solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: y.len(),
            });
        }
        let l = &self.lower;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = 0.0;
            for k in i + 1..n {
                s += l[(k, i)] * x[k];
            }
            x[i] = (y[i] - s) / l[(i, i)];
        }
        Ok(x)
    }

    /// Explicit inverse of the regularized matrix, column by column.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = solve_spd(self, &e).expect("dimensions agree");
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // symmetrize against round-off
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// Plain Cholesky of `a + shift * I`; `None` if a pivot is not positive.
fn try_cholesky(a: &Matrix, shift: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let row_j = &l.row(j)[..j];
        let d = a[(j, j)] + shift - dot(row_j, row_j);
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let s = dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = (a[(i, j)] - s) / ljj;
        }
    }
    Some(l)
}

/// Cholesky factorization with escalating diagonal regularization.
///
/// The first attempt adds `base_jitter * mean(diag(A))` to the diagonal (a
/// unit scale is used when the mean diagonal is not positive). Each failure
/// multiplies the jitter by ten; a zero starting jitter escalates from
/// `f64::EPSILON * scale`. Fails once the jitter exceeds `1e6 * scale`.
pub fn cholesky_with_jitter(a: &Matrix, base_jitter: f64) -> Result<CholeskyFactor> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.cols(),
        });
    }
    if !(base_jitter >= 0.0) || !base_jitter.is_finite() {
        return Err(Error::InvalidInput(format!(
            "jitter must be finite and non-negative, got {base_jitter}"
        )));
    }
    let max_abs = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = SYMMETRY_TOL * max_abs.max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            if (a[(i, j)] - a[(j, i)]).abs() > tol {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mean_diag = if n == 0 {
        0.0
    } else {
        compensated_sum(a.diag()) / n as f64
    };
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let limit = JITTER_LIMIT * scale;
    let mut jitter = base_jitter * scale;
    loop {
        if let Some(lower) = try_cholesky(a, jitter) {
            let log_det = 2.0 * compensated_sum(lower.diag().into_iter().map(f64::ln));
            return Ok(CholeskyFactor {
                lower,
                jitter_used: jitter,
                log_det,
            });
        }
        jitter = if jitter == 0.0 {
            f64::EPSILON * scale
        } else {
            jitter * JITTER_GROWTH
        };
        if jitter > limit {
            return Err(Error::Singular { jitter });
        }
    }
}

/// Solves `(A + jitter I) x = v` by forward and back substitution.
pub fn solve_spd(factor: &CholeskyFactor, v: &[f64]) -> Result<Vec<f64>> {
    let y = factor.forward_solve(v)?;
    factor.backward_solve(&y)
}

/// Squared Mahalanobis distance `(x - mu)^T A^{-1} (x - mu)` via one
/// triangular solve.
pub fn mahalanobis_sq(factor: &CholeskyFactor, x: &[f64], mu: &[f64]) -> Result<f64> {
    if x.len() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: mu.len(),
        });
    }
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let y = factor.forward_solve(&diff)?;
    Ok(dot(&y, &y))
}

/// Max-shifted `ln Σ exp(v_i)`. Entries may be `-inf`; `+inf` and NaN are
/// rejected.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("logsumexp of an empty vector".into()));
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Numerical(
            "logsumexp input contains NaN or +inf".into(),
        ));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum = compensated_sum(values.iter().map(|v| (v - max).exp()));
    Ok(max + sum.ln())
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const NEGATIVE_EIGEN_TOL: f64 = -1e-10;

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, in
/// diagonal order (unsorted).
///
/// Sweeps stop once the off-diagonal Frobenius mass falls below `1e-12`
/// relative to the full Frobenius norm.
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.cols(),
        });
    }
    let mut m = a.clone();
    let total = m.frobenius_norm();
    if total == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for _ in 0..=JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&m);
        if off <= JACOBI_TOL * total {
            return Ok(m.diag());
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
            }
        }
    }
    Err(Error::NoConvergence {
        what: "Jacobi eigen-decomposition",
        iterations: JACOBI_MAX_SWEEPS,
        residual: off_diagonal_norm(&m) / total,
    })
}

/// Gram matrix `P^T P` with compensated column-pair sums.
pub fn gram(p: &Matrix) -> Matrix {
    let (n, c) = p.shape();
    let mut g = Matrix::zeros(c, c);
    for i in 0..c {
        for j in i..c {
            let s = compensated_sum((0..n).map(|k| p[(k, i)] * p[(k, j)]));
            g[(i, j)] = s;
            g[(j, i)] = s;
        }
    }
    g
}

/// Sum of singular values, computed as `Σ sqrt(eig(P^T P))`, or from
/// `P P^T` when `P` has fewer rows than columns.
pub fn nuclear_norm(p: &Matrix) -> Result<f64> {
    let g = if p.rows() < p.cols() {
        gram(&p.transpose())
    } else {
        gram(p)
    };
    let eig = symmetric_eigenvalues(&g)?;
    let mut roots = Vec::with_capacity(eig.len());
    for lambda in eig {
        if lambda < NEGATIVE_EIGEN_TOL {
            return Err(Error::Numerical(format!(
                "Gram matrix has negative eigenvalue {lambda:e}"
            )));
        }
        roots.push(lambda.max(0.0).sqrt());
    }
    Ok(compensated_sum(roots))
}

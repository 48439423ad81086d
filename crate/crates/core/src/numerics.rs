//! Dense linear-algebra primitives: row-major matrices, Cholesky factorization
//! with jitter escalation, positive-definite solves and a central-difference
//! gradient oracle.
//!
//! Everything here is double precision and operates on plain `Vec<f64>`
//! storage; the matrices in this codebase stay small (a few hundred rows).

use crate::error::{Error, Result};

/// Relative base jitter added to a failing factorization, scaled by the mean
/// diagonal entry.
pub const BASE_JITTER_REL: f64 = 1e-6;
/// Maximum number of tenfold jitter escalations.
pub const MAX_JITTER_ESCALATIONS: u32 = 4;

/// Row-major dense matrix of finite `f64` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "expected {}x{}={} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix entries",
            });
        }
        Ok(Self { rows, cols, data })
    }

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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from a slice of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::dim("from_rows: no rows"));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("from_rows: ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Single-row matrix wrapping one point.
    pub fn from_row(row: &[f64]) -> Result<Self> {
        Self::new(1, row.len(), row.to_vec())
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(v.is_finite());
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::dim(format!(
                "matvec: {}x{} * vec[{}]",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a * b)
                    .sum::<f64>()
            })
            .collect())
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(Error::dim("vstack: column counts differ"));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(DenseMatrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// New matrix keeping the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let scale = self
            .data
            .iter()
            .fold(1.0_f64, |acc, v| acc.max(v.abs()));
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.get(i, j) - self.get(j, i)).abs() > tol * scale {
                    return false;
                }
            }
        }
        true
    }

    fn mean_diag(&self) -> f64 {
        let n = self.rows.min(self.cols);
        if n == 0 {
            return 0.0;
        }
        (0..n).map(|i| self.get(i, i)).sum::<f64>() / n as f64
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = A + jitter·I`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    lower: DenseMatrix,
    dim: usize,
    /// Jitter that was actually applied to the diagonal.
    jitter: f64,
}

impl CholeskyFactor {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn lower(&self) -> &DenseMatrix {
        &self.lower
    }

    #[inline]
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// log det(A + jitter·I) = 2·Σ ln L_ii.
    pub fn log_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lower.get(i, i).ln())
            .sum::<f64>()
            * 2.0
    }

    /// Solves `A·x = b` for a single right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim {
            return Err(Error::dim(format!(
                "solve_vec: factor dim {} vs rhs len {}",
                self.dim,
                b.len()
            )));
        }
        let n = self.dim;
        let l = &self.lower;
        // forward: L y = b
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l.get(k, i) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        Ok(y)
    }

    /// Dense inverse of the factored matrix, column by column.
    pub fn inverse(&self) -> Result<DenseMatrix> {
        let n = self.dim;
        let mut out = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve_vec(&e)?;
            e[j] = 0.0;
            for i in 0..n {
                out.set(i, j, col[i]);
            }
        }
        Ok(out)
    }
}

fn try_factor(a: &DenseMatrix, jitter: f64) -> Option<DenseMatrix> {
    let n = a.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut s = a.get(j, j) + jitter;
        for k in 0..j {
            let v = l.get(j, k);
            s -= v * v;
        }
        if !(s > 0.0) || !s.is_finite() {
            return None;
        }
        let d = s.sqrt();
        l.set(j, j, d);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Some(l)
}

/// Cholesky factorization of `a + jitter·I`.
///
/// If the factorization fails, the jitter is escalated from
/// `BASE_JITTER_REL` times the mean diagonal entry by factors of ten, at most
/// [`MAX_JITTER_ESCALATIONS`] times and never beyond `cap`, before giving up
/// with [`Error::NotPositiveDefinite`].
pub fn cholesky_with_cap(a: &DenseMatrix, jitter: f64, cap: f64) -> Result<CholeskyFactor> {
    if a.rows() != a.cols() {
        return Err(Error::dim(format!(
            "cholesky: matrix is {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_symmetric(1e-10) {
        return Err(Error::NotSymmetric {
            context: "cholesky input",
        });
    }
    if !jitter.is_finite() || jitter < 0.0 {
        return Err(Error::NonFinite { context: "jitter" });
    }

    if let Some(l) = try_factor(a, jitter) {
        return Ok(CholeskyFactor {
            lower: l,
            dim: a.rows(),
            jitter,
        });
    }

    let base = BASE_JITTER_REL * a.mean_diag().abs().max(f64::MIN_POSITIVE);
    let mut j = base.max(jitter * 10.0);
    for _ in 0..=MAX_JITTER_ESCALATIONS {
        if j > cap * (1.0 + 1e-12) {
            break;
        }
        if let Some(l) = try_factor(a, j) {
            return Ok(CholeskyFactor {
                lower: l,
                dim: a.rows(),
                jitter: j,
            });
        }
        j *= 10.0;
    }
    Err(Error::NotPositiveDefinite { cap })
}

/// [`cholesky_with_cap`] with the default cap of `1e-2` times the mean
/// diagonal entry.
pub fn cholesky(a: &DenseMatrix, jitter: f64) -> Result<CholeskyFactor> {
    let cap = 1e-2 * a.mean_diag().abs().max(1.0);
    cholesky_with_cap(a, jitter, cap)
}

/// Solves `A·X = B` given the Cholesky factor of `A`.
pub fn solve_psd(chol: &CholeskyFactor, b: &DenseMatrix) -> Result<DenseMatrix> {
    if b.rows() != chol.dim() {
        return Err(Error::dim(format!(
            "solve_psd: factor dim {} vs rhs rows {}",
            chol.dim(),
            b.rows()
        )));
    }
    let n = chol.dim();
    let m = b.cols();
    let mut out = DenseMatrix::zeros(n, m);
    let mut col = vec![0.0; n];
    for j in 0..m {
        for i in 0..n {
            col[i] = b.get(i, j);
        }
        let x = chol.solve_vec(&col)?;
        for i in 0..n {
            out.set(i, j, x[i]);
        }
    }
    Ok(out)
}

/// Central-difference gradient estimate of a scalar function.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::NonFinite {
            context: "finite_diff_grad step",
        });
    }
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_diff_grad evaluation",
            });
        }
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

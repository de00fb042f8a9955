//! Small dense symmetric linear algebra for conditional covariance matrices.
//!
//! Everything here is sized for a handful of assets, so the routines are plain
//! row-major loops rather than blocked kernels.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Pivots below this trigger one jittered retry of the factorization.
pub const PIVOT_FLOOR: f64 = 1e-12;
/// Relative jitter added to the diagonal on retry, scaled by `trace / n`.
pub const JITTER_SCALE: f64 = 1e-10;

/// Symmetric covariance matrix, stored row-major, with a lazily computed
/// Cholesky factor.
#[derive(Debug)]
pub struct CovMatrix {
    n: usize,
    entries: Vec<f64>,
    chol: OnceLock<std::result::Result<Vec<f64>, usize>>,
}

impl Clone for CovMatrix {
    fn clone(&self) -> Self {
        Self::from_symmetric(self.n, self.entries.clone())
    }
}

impl PartialEq for CovMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.entries == other.entries
    }
}

impl CovMatrix {
    /// Builds a covariance matrix from row-major entries. The input is
    /// symmetrized as `(M + Mᵀ) / 2` to absorb floating-point drift.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n}x{n} entries, got {}",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("covariance has non-finite entries".into()));
        }
        Ok(Self::from_symmetric(n, symmetrize(n, &entries)))
    }

    pub fn identity(n: usize) -> Self {
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            e[i * n + i] = 1.0;
        }
        Self::from_symmetric(n, e)
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut e = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            e[i * n + i] = *d;
        }
        Self::from_symmetric(n, e)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_symmetric(1, vec![v])
    }

    fn from_symmetric(n: usize, entries: Vec<f64>) -> Self {
        Self {
            n,
            entries,
            chol: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Lower-triangular Cholesky factor (row-major, zeros above the diagonal).
    pub fn cholesky(&self) -> Result<&[f64]> {
        match self.chol.get_or_init(|| factor_with_jitter(self.n, &self.entries)) {
            Ok(l) => Ok(l),
            Err(pivot) => Err(Error::NotPositiveDefinite { pivot: *pivot }),
        }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_ok()
    }

    /// Half-vectorization (lower triangle, row by row): the layout used when
    /// covariance paths are written to disk.
    pub fn vech(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n + 1) / 2);
        for i in 0..self.n {
            for j in 0..=i {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

pub fn symmetrize(n: usize, m: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = 0.5 * (m[i * n + j] + m[j * n + i]);
        }
    }
    out
}

/// Plain Cholesky. Returns the failing pivot index on a pivot below
/// [`PIVOT_FLOOR`].
pub fn factor(n: usize, a: &[f64]) -> std::result::Result<Vec<f64>, usize> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d >= PIVOT_FLOOR) {
            return Err(j);
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(l)
}

/// Symmetrizes, factors, and on a small pivot retries once with
/// `JITTER_SCALE * trace / n` added to the diagonal.
pub fn factor_with_jitter(n: usize, a: &[f64]) -> std::result::Result<Vec<f64>, usize> {
    let sym = symmetrize(n, a);
    match factor(n, &sym) {
        Ok(l) => Ok(l),
        Err(_) => {
            let jittered = jitter(n, &sym);
            factor(n, &jittered)
        }
    }
}

/// The matrix actually factored by [`factor_with_jitter`]: symmetrized, and
/// jittered only if the plain factorization fails.
pub fn effective_matrix(n: usize, a: &[f64]) -> Vec<f64> {
    let sym = symmetrize(n, a);
    if factor(n, &sym).is_ok() {
        sym
    } else {
        jitter(n, &sym)
    }
}

fn jitter(n: usize, sym: &[f64]) -> Vec<f64> {
    let trace: f64 = (0..n).map(|i| sym[i * n + i]).sum();
    let eps = JITTER_SCALE * trace.abs() / n as f64;
    let mut out = sym.to_vec();
    for i in 0..n {
        out[i * n + i] += eps;
    }
    out
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(n: usize, l: &[f64], b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(n: usize, l: &[f64], b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solves `A x = b` given the Cholesky factor of `A`.
pub fn chol_solve(n: usize, l: &[f64], b: &[f64]) -> Vec<f64> {
    let y = solve_lower(n, l, b);
    solve_lower_transpose(n, l, &y)
}

/// Inverse of `A` from its Cholesky factor, row-major.
pub fn chol_inverse(n: usize, l: &[f64]) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = chol_solve(n, l, &e);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    inv
}

pub fn logdet_from_chol(n: usize, l: &[f64]) -> f64 {
    2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>()
}

/// `vᵀ A⁻¹ v` via one triangular solve: `‖L⁻¹ v‖²`.
pub fn quadform_from_chol(n: usize, l: &[f64], v: &[f64]) -> f64 {
    solve_lower(n, l, v).iter().map(|y| y * y).sum()
}

/// Returns `(log|m|, vᵀ m⁻¹ v)`.
pub fn logdet_and_quadform(m: &CovMatrix, v: &[f64]) -> Result<(f64, f64)> {
    let n = m.dim();
    if v.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "vector of length {} against {n}x{n} matrix",
            v.len()
        )));
    }
    let l = m.cholesky()?;
    Ok((logdet_from_chol(n, l), quadform_from_chol(n, l, v)))
}

/// `Aᵀ A` for a row-major `n×n` matrix.
pub fn gram(n: usize, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| a[k * n + i] * a[k * n + j]).sum();
        }
    }
    out
}

/// Sample covariance (divisor `T`) of the rows of a `T×n` matrix, about zero
/// mean when `demean` is false.
pub fn sample_covariance(rows: &[Vec<f64>], demean: bool) -> Vec<f64> {
    let t = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    let mut mean = vec![0.0; n];
    if demean && t > 0 {
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / t as f64;
            }
        }
    }
    let mut cov = vec![0.0; n * n];
    for r in rows {
        for i in 0..n {
            for j in 0..n {
                cov[i * n + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= t.max(1) as f64);
    cov
}

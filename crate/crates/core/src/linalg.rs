//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

/// Largest absolute difference `|m[i,j] - m[j,i]|`. Non-square input is
/// reported as infinitely asymmetric.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetry test with a tolerance relative to the largest entry (floored at 1).
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    max_asymmetry(m) <= rel_tol * scale
}

/// `(M + Mᵀ) / 2`, which is exactly symmetric in floating point.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Copies the upper triangle onto the lower one so the matrix is bitwise
/// symmetric.
pub fn mirror_upper(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// `P diag(values) Pᵀ`, returned exactly symmetric.
pub fn from_eigen(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (mut col, &v) in scaled.column_iter_mut().zip(values.iter()) {
        col *= v;
    }
    let mut out = scaled * vectors.transpose();
    mirror_upper(&mut out);
    out
}

pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite(what))
}

pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// Inverse of an SPD matrix from its factorization, mirrored to exact symmetry.
pub fn spd_inverse(chol: &Cholesky<f64, Dyn>) -> DMatrix<f64> {
    let mut inv = chol.inverse();
    mirror_upper(&mut inv);
    inv
}

pub fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

/// Row-stacks a list of equally sized vectors into an `n × d` matrix.
pub fn stack_rows(rows: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j])
}

//! Small dense linear-algebra helpers shared by the bound and solver code.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::math::abs;
use crate::{Error, Result};

/// Relative tolerance used when checking symmetry of covariance-like matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Smallest diagonal shift applied when a matrix with zero trace has to be regularized.
pub const REGULARIZATION_FLOOR: f64 = 1e-12;

pub fn is_symmetric(q: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !q.is_square() {
        return false;
    }
    let scale = q.iter().fold(0.0_f64, |acc, v| acc.max(abs(*v))).max(1.0);
    for i in 0..q.nrows() {
        for j in (i + 1)..q.ncols() {
            if abs(q[(i, j)] - q[(j, i)]) > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Diagonal shift `1e-10 * trace(Q) / d`, floored at [`REGULARIZATION_FLOOR`].
pub fn regularization_shift(q: &DMatrix<f64>) -> f64 {
    let d = q.nrows().max(1) as f64;
    (1e-10 * q.trace() / d).max(REGULARIZATION_FLOOR)
}

/// Cholesky factorization; on failure the matrix is shifted by
/// [`regularization_shift`] and factored again.
///
/// Returns the factor, the (possibly shifted) matrix and whether a shift was applied.
pub fn cholesky_regularized(
    q: &DMatrix<f64>,
) -> Result<(Cholesky<f64, Dyn>, DMatrix<f64>, bool)> {
    if let Some(ch) = Cholesky::new(q.clone()) {
        if ch.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Ok((ch, q.clone(), false));
        }
    }
    let mut shift = regularization_shift(q);
    // A rank-deficient matrix with a tiny trace may need a few doublings.
    for _ in 0..40 {
        let shifted = q + DMatrix::<f64>::identity(q.nrows(), q.ncols()) * shift;
        if let Some(ch) = Cholesky::new(shifted.clone()) {
            log::debug!("regularized covariance with diagonal shift {shift:e}");
            return Ok((ch, shifted, true));
        }
        shift *= 2.0;
    }
    Err(Error::NotPositiveDefinite)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean(vectors: &[DVector<f64>]) -> Option<DVector<f64>> {
    let first = vectors.first()?;
    let mut acc = DVector::zeros(first.len());
    for v in vectors {
        acc += v;
    }
    Some(acc / vectors.len() as f64)
}

/// Sample covariance with the `1/(N-1)` normalization (zero for a single sample).
pub fn covariance(vectors: &[DVector<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let d = mean.len();
    let mut cov = DMatrix::zeros(d, d);
    if vectors.len() < 2 {
        return cov;
    }
    for v in vectors {
        let c = v - mean;
        cov += &c * c.transpose();
    }
    cov /= (vectors.len() - 1) as f64;
    // symmetrize away round-off
    let t = cov.transpose();
    (cov + t) * 0.5
}

pub fn to_columns(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    m.column_iter().map(|c| c.into_owned()).collect()
}

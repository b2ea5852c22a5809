//! Small dense linear-algebra helpers shared by the kernel and feature solvers.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagnostics from an SPD solve.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveInfo {
    /// Diagonal jitter added after a failed first factorization (0 if none).
    pub jitter: f64,
    /// `|A x - b| / |b|` for the unjittered system, filled in by callers that
    /// know the original operator.
    pub relative_residual: f64,
}

/// Solves `a x = b` for symmetric positive-definite `a` by Cholesky.
///
/// If the first factorization fails, `1e-10 * trace / dim` is added to the
/// diagonal once before giving up.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, SolveInfo)> {
    let x = solve_spd_multi(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok((x.0.column(0).into_owned(), x.1))
}

/// Multi right-hand-side version of [`solve_spd`].
pub fn solve_spd_multi(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, SolveInfo)> {
    let dim = a.nrows();
    if a.ncols() != dim || b.nrows() != dim {
        return Err(Error::input(format!(
            "solve shape mismatch: {}x{} system, {} rhs rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "system contains non-finite entries",
            f64::INFINITY,
        ));
    }
    let mut fa = Mat::<f64>::from_fn(dim, dim, |i, j| a[(i, j)]);
    let fb = Mat::<f64>::from_fn(dim, b.ncols(), |i, j| b[(i, j)]);
    let mut info = SolveInfo::default();
    let llt = match fa.llt(Side::Lower) {
        Ok(l) => l,
        Err(_) => {
            let jitter = 1e-10 * a.trace() / dim as f64;
            for i in 0..dim {
                fa[(i, i)] += jitter;
            }
            info.jitter = jitter;
            fa.llt(Side::Lower).map_err(|_| {
                Error::numerical(
                    "Cholesky factorization failed after jitter",
                    diagonal_condition(&a),
                )
            })?
        }
    };
    let fx = llt.solve(&fb);
    let x = DMatrix::from_fn(dim, b.ncols(), |i, j| fx[(i, j)]);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "solution contains non-finite entries",
            diagonal_condition(&a),
        ));
    }
    Ok((x, info))
}

/// Cheap conditioning indicator: ratio of the largest to smallest diagonal entry.
fn diagonal_condition(a: &DMatrix<f64>) -> f64 {
    let d = a.diagonal();
    let max = d.iter().cloned().fold(f64::MIN, f64::max);
    let min = d.iter().cloned().fold(f64::MAX, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// The canonical symplectic matrix `[[0, I], [-I, 0]]`.
pub fn symplectic_matrix(n: usize) -> DMatrix<f64> {
    let m = n / 2;
    let mut j = DMatrix::zeros(n, n);
    for i in 0..m {
        j[(i, i + m)] = 1.0;
        j[(i + m, i)] = -1.0;
    }
    j
}

/// `J v` without forming `J`.
pub fn apply_j(v: &[f64]) -> Vec<f64> {
    let m = v.len() / 2;
    let mut out = vec![0.0; v.len()];
    for i in 0..m {
        out[i] = v[i + m];
        out[i + m] = -v[i];
    }
    out
}

/// `J^T v` without forming `J`.
pub fn apply_jt(v: &[f64]) -> Vec<f64> {
    let m = v.len() / 2;
    let mut out = vec![0.0; v.len()];
    for i in 0..m {
        out[i] = -v[i + m];
        out[i + m] = v[i];
    }
    out
}

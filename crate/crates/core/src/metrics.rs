//! Evaluation quantities: trajectory MSE, odd error, Hamiltonian statistics
//! and symplecticity diagnostics.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symplectic_matrix;
use crate::sim::Trajectory;
use crate::systems::VectorField;

/// Population mean and variance.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// `(1/T) sum_t |x_t - xhat_t|^2` for one pair of trajectories.
pub fn single_trajectory_mse(truth: &Trajectory, learned: &Trajectory) -> Result<f64> {
    if truth.times.len() != learned.times.len() || truth.times.is_empty() {
        return Err(Error::input(format!(
            "trajectory lengths differ or are empty: {} vs {}",
            truth.times.len(),
            learned.times.len()
        )));
    }
    let mut total = 0.0;
    for ((ta, a), (tb, b)) in truth
        .times
        .iter()
        .zip(&truth.states)
        .zip(learned.times.iter().zip(&learned.states))
    {
        if (ta - tb).abs() > 1e-12 * (1.0 + ta.abs()) {
            return Err(Error::input(format!("timestamps differ: {ta} vs {tb}")));
        }
        if a.len() != b.len() {
            return Err(Error::input("state dimensions differ"));
        }
        total += (a - b).norm_squared();
    }
    Ok(total / truth.times.len() as f64)
}

/// Mean over trajectories of the per-trajectory time-averaged squared error.
pub fn trajectory_mse(truth: &[Trajectory], learned: &[Trajectory]) -> Result<f64> {
    Ok(per_trajectory_mse(truth, learned)?.iter().sum::<f64>() / truth.len() as f64)
}

pub fn per_trajectory_mse(truth: &[Trajectory], learned: &[Trajectory]) -> Result<Vec<f64>> {
    if truth.len() != learned.len() || truth.is_empty() {
        return Err(Error::input(format!(
            "trajectory counts differ or are empty: {} vs {}",
            truth.len(),
            learned.len()
        )));
    }
    truth
        .iter()
        .zip(learned)
        .map(|(a, b)| single_trajectory_mse(a, b))
        .collect()
}

/// Axis-aligned sampling box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SampleBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::input("box bounds must be nonempty and equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::input("box lower bound exceeds upper bound"));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// `|f(x) + f(-x)|` at `count` uniform points of the box with `x_1 >= 0`.
///
/// Returns the mean and population variance.
pub fn odd_error<F: VectorField + ?Sized>(
    f: &F,
    bounds: &SampleBox,
    count: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if count == 0 {
        return Err(Error::input("odd error needs at least one sample"));
    }
    if bounds.dim() != f.dim() {
        return Err(Error::input(format!(
            "box has dimension {} but the field has {}",
            bounds.dim(),
            f.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errs = Vec::with_capacity(count);
    let mut x = vec![0.0; bounds.dim()];
    let mut neg = x.clone();
    for _ in 0..count {
        for (k, xi) in x.iter_mut().enumerate() {
            let lo = if k == 0 {
                bounds.lower[0].max(0.0)
            } else {
                bounds.lower[k]
            };
            let hi = bounds.upper[k];
            *xi = if hi > lo {
                rng.random_range(lo..hi)
            } else {
                hi
            };
        }
        neg.iter_mut().zip(&x).for_each(|(n, v)| *n = -v);
        errs.push((f.eval(&x)? + f.eval(&neg)?).norm());
    }
    Ok(mean_var(&errs))
}

/// Mean and population variance of `h` over the trajectory's states.
pub fn hamiltonian_stats<H>(h: H, trajectory: &Trajectory) -> Result<(f64, f64)>
where
    H: Fn(&[f64]) -> Result<f64>,
{
    if trajectory.states.is_empty() {
        return Err(Error::input("trajectory is empty"));
    }
    let values = trajectory
        .states
        .iter()
        .map(|s| h(s.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_var(&values))
}

/// Central-difference Jacobian with step `fd_step * (1 + |x|)`.
pub fn fd_jacobian<F: VectorField + ?Sized>(
    f: &F,
    x: &[f64],
    fd_step: f64,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = fd_step * (1.0 + norm);
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for k in 0..n {
        xp[k] = x[k] + h;
        let fp = f.eval(&xp)?;
        xp[k] = x[k] - h;
        let fm = f.eval(&xp)?;
        xp[k] = x[k];
        jac.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

/// `|A - A^T|_F` with `A = J^T Df(x)`; zero for Hamiltonian fields.
pub fn symplecticity_residual<F: VectorField + ?Sized>(
    f: &F,
    x: &[f64],
    fd_step: f64,
) -> Result<f64> {
    if !(fd_step > 0.0 && fd_step <= 1e-2) {
        return Err(Error::input(format!(
            "finite-difference step {fd_step} outside (0, 1e-2]"
        )));
    }
    if x.len() != f.dim() || !x.len().is_multiple_of(2) {
        return Err(Error::input(
            "state dimension must match the field and be even",
        ));
    }
    let a = symplectic_matrix(x.len()).transpose() * fd_jacobian(f, x, fd_step)?;
    Ok((&a - a.transpose()).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub variance: f64,
}

impl From<(f64, f64)> for Stat {
    fn from((mean, variance): (f64, f64)) -> Self {
        Self { mean, variance }
    }
}

/// Hamiltonian statistics along one test trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianReport {
    pub truth: Stat,
    pub learned: Option<Stat>,
    /// Statistics of `Hhat - H`; a small variance means a constant offset.
    pub offset: Option<Stat>,
}

/// Evaluation summary for one model on one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub model: String,
    pub per_trajectory_mse: Vec<f64>,
    pub mse: f64,
    pub odd_error: Stat,
    pub true_odd_error: Stat,
    pub hamiltonian: Vec<HamiltonianReport>,
    pub symplecticity: Vec<f64>,
    #[serde(default)]
    pub config_digest: Option<String>,
}

impl EvalReport {
    /// Recomputes the aggregate MSE from the per-trajectory values.
    pub fn is_consistent(&self) -> bool {
        let n = self.per_trajectory_mse.len() as f64;
        let agg = self.per_trajectory_mse.iter().sum::<f64>() / n;
        (agg - self.mse).abs() <= 1e-12 * agg.abs().max(1e-300)
    }
}

fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

/// Aligned plain-text table, one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let header = [
        "system",
        "model",
        "mse",
        "e_odd mean",
        "e_odd var",
        "H mean",
        "H var",
        "Hhat mean",
        "Hhat var",
        "offset var",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in reports {
        let h = r.hamiltonian.first();
        let opt = |s: Option<Stat>, f: fn(Stat) -> f64| {
            s.map(|s| sci(f(s))).unwrap_or_else(|| "-".into())
        };
        rows.push(vec![
            r.system.clone(),
            r.model.clone(),
            sci(r.mse),
            sci(r.odd_error.mean),
            sci(r.odd_error.variance),
            opt(h.map(|h| h.truth), |s| s.mean),
            opt(h.map(|h| h.truth), |s| s.variance),
            opt(h.and_then(|h| h.learned), |s| s.mean),
            opt(h.and_then(|h| h.learned), |s| s.variance),
            opt(h.and_then(|h| h.offset), |s| s.variance),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

//! Exact matrix-valued kernels and the closed-form kernel ridge solve.
//!
//! All families are shift-invariant, `K(x, z) = G(x - z)`, with an even
//! signature `G`. The odd and even transforms use `G(x + z)` in place of
//! `K(-x, z)`, which is the same matrix since `G` is even.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SolveInfo};
use crate::sim::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    GaussianSeparable,
    CurlFree,
    Symplectic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    #[default]
    None,
    Odd,
    Even,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma: f64,
    #[serde(default)]
    pub parity: Parity,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma: f64, parity: Parity) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::config(format!(
                "bandwidth must be positive, got {sigma}"
            )));
        }
        Ok(Self {
            family,
            sigma,
            parity,
        })
    }

    /// Checks that the kernel can act on states of dimension `n`.
    pub fn check_dim(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::input("state dimension must be positive"));
        }
        if self.family == KernelFamily::Symplectic && !n.is_multiple_of(2) {
            return Err(Error::config(format!(
                "symplectic kernel needs an even state dimension, got {n}"
            )));
        }
        Ok(())
    }

    /// Adds `scale * G(u)` into the column-major `n x n` buffer `out`.
    fn add_signature(&self, u: &[f64], scale: f64, out: &mut [f64]) {
        let n = u.len();
        let s2 = self.sigma * self.sigma;
        let sq: f64 = u.iter().map(|v| v * v).sum();
        let k = (-sq / (2.0 * s2)).exp();
        match self.family {
            KernelFamily::GaussianSeparable => {
                for i in 0..n {
                    out[i * n + i] += scale * k;
                }
            }
            KernelFamily::CurlFree => {
                let c = scale * k / s2;
                for j in 0..n {
                    for i in 0..n {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        out[j * n + i] += c * (delta - u[i] * u[j] / s2);
                    }
                }
            }
            KernelFamily::Symplectic => {
                // J G_c(u) J^T, entry (i, j) = s_i s_j G_c(u)[pi(i), pi(j)]
                // where (J v)_i = s_i v_{pi(i)}.
                let m = n / 2;
                let c = scale * k / s2;
                let perm = |i: usize| if i < m { (i + m, 1.0) } else { (i - m, -1.0) };
                for j in 0..n {
                    let (pj, sj) = perm(j);
                    for i in 0..n {
                        let (pi, si) = perm(i);
                        let delta = if pi == pj { 1.0 } else { 0.0 };
                        out[j * n + i] += si * sj * (c * (delta - u[pi] * u[pj] / s2));
                    }
                }
            }
        }
    }

    /// Writes `K(x, z)` (with parity applied) into `out` as column-major `n x n`.
    pub(crate) fn eval_into(&self, x: &[f64], z: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        let n = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        scratch.clear();
        scratch.extend(x.iter().zip(z).map(|(a, b)| a - b));
        match self.parity {
            Parity::None => self.add_signature(scratch, 1.0, out),
            Parity::Odd | Parity::Even => {
                self.add_signature(scratch, 0.5, out);
                scratch.clear();
                scratch.extend(x.iter().zip(z).map(|(a, b)| a + b));
                let sign = if self.parity == Parity::Odd {
                    -0.5
                } else {
                    0.5
                };
                self.add_signature(scratch, sign, out);
            }
        }
        debug_assert_eq!(out.len(), n * n);
    }

    /// Scalar potential whose gradient, multiplied by `J`, reproduces the
    /// symplectic section `G_s(u) a`: `h(u) = k(u) u^T c / sigma^2` with `c = J^T a`.
    fn potential(&self, u: &[f64], c: &[f64]) -> f64 {
        let s2 = self.sigma * self.sigma;
        let sq: f64 = u.iter().map(|v| v * v).sum();
        let dot: f64 = u.iter().zip(c).map(|(a, b)| a * b).sum();
        (-sq / (2.0 * s2)).exp() * dot / s2
    }
}

/// Scalar Gaussian kernel `exp(-|x - z|^2 / (2 sigma^2))`.
pub fn gaussian_scalar(x: &[f64], z: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            z.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::config(format!(
            "bandwidth must be positive, got {sigma}"
        )));
    }
    let sq: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-sq / (2.0 * sigma * sigma)).exp())
}

/// Evaluates the `n x n` kernel matrix `K(x, z)`.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<DMatrix<f64>> {
    if x.len() != z.len() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            z.len()
        )));
    }
    spec.check_dim(x.len())?;
    let n = x.len();
    let mut out = vec![0.0; n * n];
    spec.eval_into(x, z, &mut out, &mut Vec::with_capacity(n));
    Ok(DMatrix::from_vec(n, n, out))
}

fn common_dim(points: &[DVector<f64>]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::input("point list is empty"))?;
    let n = first.len();
    if let Some(p) = points.iter().find(|p| p.len() != n) {
        return Err(Error::input(format!(
            "inconsistent point dimensions: {} vs {}",
            n,
            p.len()
        )));
    }
    Ok(n)
}

/// Assembles the dense `Nn x Nn` Gram matrix with block `(i, j) = K(x_i, x_j)`.
pub fn gram(spec: &KernelSpec, points: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let n = common_dim(points)?;
    spec.check_dim(n)?;
    let big = points.len() * n;
    let mut g = DMatrix::zeros(big, big);
    let mut block = vec![0.0; n * n];
    let mut scratch = Vec::with_capacity(n);
    for j in 0..points.len() {
        for i in 0..=j {
            spec.eval_into(
                points[i].as_slice(),
                points[j].as_slice(),
                &mut block,
                &mut scratch,
            );
            for c in 0..n {
                for r in 0..n {
                    let v = block[c * n + r];
                    g[(i * n + r, j * n + c)] = v;
                    g[(j * n + c, i * n + r)] = v;
                }
            }
        }
    }
    Ok(g)
}

/// The regularized linear system `(K + N lambda I) a = y`.
#[derive(Debug, Clone)]
pub struct GramSystem {
    pub gram: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub lambda: f64,
    pub n_samples: usize,
}

impl GramSystem {
    pub fn assemble(
        spec: &KernelSpec,
        xs: &[DVector<f64>],
        ys: &[DVector<f64>],
        lambda: f64,
    ) -> Result<Self> {
        check_lambda(lambda)?;
        if xs.len() != ys.len() {
            return Err(Error::input(format!(
                "{} inputs but {} targets",
                xs.len(),
                ys.len()
            )));
        }
        let n = common_dim(xs)?;
        if ys.iter().any(|y| y.len() != n) {
            return Err(Error::input(
                "target dimension differs from input dimension",
            ));
        }
        let gram = gram(spec, xs)?;
        let rhs = DVector::from_iterator(xs.len() * n, ys.iter().flat_map(|y| y.iter().copied()));
        Ok(Self {
            gram,
            rhs,
            lambda,
            n_samples: xs.len(),
        })
    }

    /// Solves for the stacked coefficient vector.
    pub fn solve(&self) -> Result<(DVector<f64>, SolveInfo)> {
        let shift = self.n_samples as f64 * self.lambda;
        let mut a = self.gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += shift;
        }
        let (coef, mut info) = linalg::solve_spd(a, &self.rhs)?;
        let mut r = &self.gram * &coef + shift * &coef - &self.rhs;
        if info.jitter > 0.0 {
            r += info.jitter * &coef;
        }
        info.relative_residual = relative(r.norm(), self.rhs.norm());
        Ok((coef, info))
    }
}

pub(crate) fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::config(format!(
            "regularization must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// Kernel expansion `f(x) = sum_i K(x, x_i) a_i` fitted by kernel ridge regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactModel {
    pub spec: KernelSpec,
    pub lambda: f64,
    pub points: Vec<DVector<f64>>,
    pub coefficients: Vec<DVector<f64>>,
    /// Relative residual of the regularized Gram solve.
    pub solve_residual: f64,
}

pub fn exact_fit(dataset: &Dataset, spec: &KernelSpec, lambda: f64) -> Result<ExactModel> {
    exact_fit_points(&dataset.xs, &dataset.ys, spec, lambda)
}

pub fn exact_fit_points(
    xs: &[DVector<f64>],
    ys: &[DVector<f64>],
    spec: &KernelSpec,
    lambda: f64,
) -> Result<ExactModel> {
    let system = GramSystem::assemble(spec, xs, ys, lambda)?;
    let (coef, info) = system.solve()?;
    let n = xs[0].len();
    let coefficients = (0..xs.len())
        .map(|i| DVector::from_column_slice(&coef.as_slice()[i * n..(i + 1) * n]))
        .collect();
    Ok(ExactModel {
        spec: *spec,
        lambda,
        points: xs.to_vec(),
        coefficients,
        solve_residual: info.relative_residual,
    })
}

impl ExactModel {
    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn predict(&self, x: &[f64]) -> Result<DVector<f64>> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::input(format!(
                "state has dimension {}, model expects {n}",
                x.len()
            )));
        }
        let mut out = DVector::zeros(n);
        let mut block = vec![0.0; n * n];
        let mut scratch = Vec::with_capacity(n);
        for (p, a) in self.points.iter().zip(&self.coefficients) {
            self.spec
                .eval_into(x, p.as_slice(), &mut block, &mut scratch);
            for c in 0..n {
                let ac = a[c];
                for r in 0..n {
                    out[r] += block[c * n + r] * ac;
                }
            }
        }
        Ok(out)
    }

    /// Learned Hamiltonian of a symplectic-family model, `f = J grad H`.
    pub fn hamiltonian(&self, x: &[f64]) -> Result<f64> {
        if self.spec.family != KernelFamily::Symplectic {
            return Err(Error::Unsupported(format!(
                "no Hamiltonian for {:?} kernels",
                self.spec.family
            )));
        }
        let n = self.dim();
        if x.len() != n {
            return Err(Error::input(format!(
                "state has dimension {}, model expects {n}",
                x.len()
            )));
        }
        let mut u = vec![0.0; n];
        let mut total = 0.0;
        for (p, a) in self.points.iter().zip(&self.coefficients) {
            let c = linalg::apply_jt(a.as_slice());
            for k in 0..n {
                u[k] = x[k] - p[k];
            }
            let direct = self.spec.potential(&u, &c);
            total += match self.spec.parity {
                Parity::None => direct,
                Parity::Odd | Parity::Even => {
                    for k in 0..n {
                        u[k] = x[k] + p[k];
                    }
                    let reflected = self.spec.potential(&u, &c);
                    if self.spec.parity == Parity::Odd {
                        0.5 * (direct - reflected)
                    } else {
                        0.5 * (direct + reflected)
                    }
                }
            };
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn gaussian_scalar_values() {
        assert_eq!(
            gaussian_scalar(&[0.3, -1.0], &[0.3, -1.0], 2.5).unwrap(),
            1.0
        );
        let k = gaussian_scalar(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
        assert_relative_eq!(k, (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(k, 0.367879, epsilon = 1e-6);
        let a = gaussian_scalar(&[0.2, 0.7], &[-1.1, 0.4], 0.8).unwrap();
        let b = gaussian_scalar(&[-1.1, 0.4], &[0.2, 0.7], 0.8).unwrap();
        assert_eq!(a, b);
        assert!(gaussian_scalar(&[1.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn curl_free_at_zero_offset() {
        let spec = KernelSpec::new(KernelFamily::CurlFree, 2.0, Parity::None).unwrap();
        let k = eval_kernel(&spec, &[0.4, 1.0, -2.0], &[0.4, 1.0, -2.0]).unwrap();
        assert_eq!(k, DMatrix::identity(3, 3) * 0.25);
    }

    #[test]
    fn odd_symplectic_vanishes_at_origin() {
        let spec = KernelSpec::new(KernelFamily::Symplectic, 1.3, Parity::Odd).unwrap();
        let k = eval_kernel(&spec, &[0.0, 0.0], &[0.7, -0.2]).unwrap();
        assert_eq!(k, DMatrix::zeros(2, 2));
    }

    #[test]
    fn symplectic_diagonal_is_identity_for_unit_bandwidth() {
        let spec = KernelSpec::new(KernelFamily::Symplectic, 1.0, Parity::None).unwrap();
        let k = eval_kernel(&spec, &[0.5, 0.1], &[0.5, 0.1]).unwrap();
        assert_eq!(k, DMatrix::identity(2, 2));
    }

    #[test]
    fn symplectic_rejects_odd_dimension() {
        let spec = KernelSpec::new(KernelFamily::Symplectic, 1.0, Parity::None).unwrap();
        assert!(matches!(
            eval_kernel(&spec, &[0.0; 3], &[1.0; 3]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bad_bandwidth_rejected() {
        assert!(KernelSpec::new(KernelFamily::CurlFree, 0.0, Parity::None).is_err());
        assert!(KernelSpec::new(KernelFamily::CurlFree, f64::NAN, Parity::None).is_err());
    }

    #[test]
    fn gram_single_point_separable() {
        let spec = KernelSpec::new(KernelFamily::GaussianSeparable, 0.7, Parity::None).unwrap();
        let g = gram(&spec, &[v(&[1.0, 2.0, 3.0])]).unwrap();
        assert_eq!(g, DMatrix::identity(3, 3));
        assert!(gram(&spec, &[]).is_err());
    }

    #[test]
    fn gram_odd_reflected_pair_flips_sign() {
        let spec = KernelSpec::new(KernelFamily::Symplectic, 1.5, Parity::Odd).unwrap();
        let x = v(&[0.8, -0.3]);
        let g = gram(&spec, &[x.clone(), -x.clone()]).unwrap();
        let b11 = g.view((0, 0), (2, 2)).into_owned();
        let b12 = g.view((0, 2), (2, 2)).into_owned();
        assert_eq!(b12, -b11);
    }

    #[test]
    fn exact_fit_single_sample_closed_form() {
        let spec = KernelSpec::new(KernelFamily::GaussianSeparable, 1.0, Parity::None).unwrap();
        let y = v(&[2.0, -1.0]);
        let lambda = 0.25;
        let m =
            exact_fit_points(&[v(&[0.1, 0.2])], std::slice::from_ref(&y), &spec, lambda).unwrap();
        assert_relative_eq!(m.coefficients[0], y / (1.0 + lambda), epsilon = 1e-14);
    }

    #[test]
    fn exact_fit_zero_targets() {
        let spec = KernelSpec::new(KernelFamily::Symplectic, 1.0, Parity::Odd).unwrap();
        let xs = vec![v(&[0.1, 0.2]), v(&[-0.5, 0.9]), v(&[1.5, -0.4])];
        let ys = vec![DVector::zeros(2); 3];
        let m = exact_fit_points(&xs, &ys, &spec, 1e-3).unwrap();
        assert!(m.coefficients.iter().all(|a| a.iter().all(|&c| c == 0.0)));
        assert!(m.predict(&[0.3, 0.3]).unwrap().iter().all(|&c| c == 0.0));
        assert_eq!(m.hamiltonian(&[0.3, 0.3]).unwrap(), 0.0);
    }

    #[test]
    fn heavy_regularization_limit() {
        let spec = KernelSpec::new(KernelFamily::CurlFree, 1.0, Parity::None).unwrap();
        let xs = vec![v(&[0.1, 0.2]), v(&[-0.5, 0.9]), v(&[1.5, -0.4])];
        let ys = vec![v(&[1.0, 2.0]), v(&[-1.0, 0.5]), v(&[0.3, 0.3])];
        let lambda = 1e6;
        let m = exact_fit_points(&xs, &ys, &spec, lambda).unwrap();
        let a_norm: f64 = m
            .coefficients
            .iter()
            .map(|a| a.norm_squared())
            .sum::<f64>()
            .sqrt();
        let y_norm: f64 = ys.iter().map(|y| y.norm_squared()).sum::<f64>().sqrt();
        assert_relative_eq!(a_norm, y_norm / (3.0 * lambda), max_relative = 1e-5);
    }

    #[test]
    fn hamiltonian_rejected_for_non_symplectic() {
        let spec = KernelSpec::new(KernelFamily::CurlFree, 1.0, Parity::None).unwrap();
        let m = exact_fit_points(&[v(&[0.0, 1.0])], &[v(&[1.0, 0.0])], &spec, 0.1).unwrap();
        assert!(matches!(
            m.hamiltonian(&[0.0, 0.0]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn predict_dimension_mismatch() {
        let spec = KernelSpec::new(KernelFamily::CurlFree, 1.0, Parity::None).unwrap();
        let m = exact_fit_points(&[v(&[0.0, 1.0])], &[v(&[1.0, 0.0])], &spec, 0.1).unwrap();
        assert!(m.predict(&[0.0]).is_err());
    }
}

//! Random Fourier feature maps for the shift-invariant kernel families and
//! their odd/even variants, plus the feature-space ridge solve.
//!
//! Every family factors as `Psi(x) = diag(s(x)) B` where `s(x)` holds scalar
//! trigonometric features `cos(w_j^T x)/sqrt(d)` and/or `sin(w_j^T x)/sqrt(d)`
//! and `B` stacks the matrices `B(w_j)^T`. For the curl-free and symplectic
//! families `B(w)` is a single column (`w` or `J w`); for the separable
//! families it is the identity, which decouples the solve per output
//! component. The solvers below work with the scalar feature Gram `S S^T`
//! instead of the full `D x D` normal matrix.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_lambda, relative, KernelFamily, KernelSpec, Parity};
use crate::linalg::{self, SolveInfo};
use crate::sim::Dataset;

/// Samples per chunk when accumulating normal equations.
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamily {
    GaussianSeparable,
    CurlFree,
    Symplectic,
    OddSymplectic,
    EvenSymplectic,
    OddSeparable,
    EvenSeparable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Trig {
    Both,
    Sin,
    Cos,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 7] = [
        FeatureFamily::GaussianSeparable,
        FeatureFamily::CurlFree,
        FeatureFamily::Symplectic,
        FeatureFamily::OddSymplectic,
        FeatureFamily::EvenSymplectic,
        FeatureFamily::OddSeparable,
        FeatureFamily::EvenSeparable,
    ];

    fn trig(self) -> Trig {
        use FeatureFamily::*;
        match self {
            GaussianSeparable | CurlFree | Symplectic => Trig::Both,
            OddSymplectic | OddSeparable => Trig::Sin,
            EvenSymplectic | EvenSeparable => Trig::Cos,
        }
    }

    fn is_separable(self) -> bool {
        use FeatureFamily::*;
        matches!(self, GaussianSeparable | OddSeparable | EvenSeparable)
    }

    pub fn is_symplectic(self) -> bool {
        use FeatureFamily::*;
        matches!(self, Symplectic | OddSymplectic | EvenSymplectic)
    }

    /// Number of scalar trigonometric features for `d` frequencies.
    fn scalar_dim(self, d: usize) -> usize {
        match self.trig() {
            Trig::Both => 2 * d,
            Trig::Sin | Trig::Cos => d,
        }
    }

    /// Row count `D` of `Psi(x)`.
    pub fn feature_dim(self, d: usize, n: usize) -> usize {
        let m = self.scalar_dim(d);
        if self.is_separable() {
            m * n
        } else {
            m
        }
    }

    /// The exact kernel approximated by this feature map.
    pub fn exact_kernel(self, sigma: f64) -> Result<KernelSpec> {
        use FeatureFamily::*;
        let (family, parity) = match self {
            GaussianSeparable => (KernelFamily::GaussianSeparable, Parity::None),
            CurlFree => (KernelFamily::CurlFree, Parity::None),
            Symplectic => (KernelFamily::Symplectic, Parity::None),
            OddSymplectic => (KernelFamily::Symplectic, Parity::Odd),
            EvenSymplectic => (KernelFamily::Symplectic, Parity::Even),
            OddSeparable => (KernelFamily::GaussianSeparable, Parity::Odd),
            EvenSeparable => (KernelFamily::GaussianSeparable, Parity::Even),
        };
        KernelSpec::new(family, sigma, parity)
    }
}

/// Draws `d` i.i.d. frequencies from `N(0, sigma^-2 I_n)`, one per row.
pub fn draw_frequencies(sigma: f64, d: usize, n: usize, seed: u64) -> DMatrix<f64> {
    standard_normals(d, n, seed) / sigma
}

fn standard_normals(d: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..d * n)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    DMatrix::from_row_slice(d, n, &vals)
}

/// A frozen spectral sample together with its feature family.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub family: FeatureFamily,
    pub sigma: f64,
    pub seed: u64,
    /// `d x n`, row `j` is `w_j`.
    pub frequencies: DMatrix<f64>,
    /// `d x n`, row `j` is `B(w_j)` for the single-column families.
    directions: Option<DMatrix<f64>>,
}

impl FeatureMap {
    pub fn new(family: FeatureFamily, sigma: f64, d: usize, n: usize, seed: u64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::config(format!(
                "bandwidth must be positive, got {sigma}"
            )));
        }
        if d == 0 || n == 0 {
            return Err(Error::config(
                "feature count and dimension must be positive",
            ));
        }
        Self::from_frequencies(family, sigma, seed, draw_frequencies(sigma, d, n, seed))
    }

    /// Rebuilds a map from explicitly stored frequencies.
    pub fn from_frequencies(
        family: FeatureFamily,
        sigma: f64,
        seed: u64,
        frequencies: DMatrix<f64>,
    ) -> Result<Self> {
        let n = frequencies.ncols();
        if family.is_symplectic() && !n.is_multiple_of(2) {
            return Err(Error::config(format!(
                "symplectic features need an even state dimension, got {n}"
            )));
        }
        if frequencies.nrows() == 0 || n == 0 {
            return Err(Error::config("empty frequency sample"));
        }
        let directions = if family.is_separable() {
            None
        } else if family.is_symplectic() {
            let mut b = DMatrix::zeros(frequencies.nrows(), n);
            for j in 0..frequencies.nrows() {
                let w: Vec<f64> = frequencies.row(j).iter().copied().collect();
                for (k, v) in linalg::apply_j(&w).into_iter().enumerate() {
                    b[(j, k)] = v;
                }
            }
            Some(b)
        } else {
            Some(frequencies.clone())
        };
        Ok(Self {
            family,
            sigma,
            seed,
            frequencies,
            directions,
        })
    }

    pub fn d(&self) -> usize {
        self.frequencies.nrows()
    }

    pub fn n(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.family.feature_dim(self.d(), self.n())
    }

    fn scalar_dim(&self) -> usize {
        self.family.scalar_dim(self.d())
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::input(format!(
                "state has dimension {}, feature map expects {}",
                x.len(),
                self.n()
            )));
        }
        Ok(())
    }

    fn projections(&self, x: &[f64]) -> DVector<f64> {
        &self.frequencies * DVector::from_column_slice(x)
    }

    /// Scalar trigonometric features `s(x)` (length `m`).
    fn scalar_features_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d();
        let scale = 1.0 / (d as f64).sqrt();
        let p = self.projections(x);
        match self.family.trig() {
            Trig::Both => {
                for j in 0..d {
                    let (s, c) = p[j].sin_cos();
                    out[j] = c * scale;
                    out[d + j] = s * scale;
                }
            }
            Trig::Sin => {
                for j in 0..d {
                    out[j] = p[j].sin() * scale;
                }
            }
            Trig::Cos => {
                for j in 0..d {
                    out[j] = p[j].cos() * scale;
                }
            }
        }
    }

    /// `m x N` matrix of scalar features for a batch of states.
    fn scalar_matrix(&self, xs: &[DVector<f64>]) -> DMatrix<f64> {
        let m = self.scalar_dim();
        let mut s = DMatrix::zeros(m, xs.len());
        for (i, x) in xs.iter().enumerate() {
            self.scalar_features_into(x.as_slice(), s.column_mut(i).as_mut_slice());
        }
        s
    }

    /// `m x n` matrix whose row `r` is the direction paired with scalar feature `r`.
    fn stacked_directions(&self) -> Option<DMatrix<f64>> {
        let b = self.directions.as_ref()?;
        let d = self.d();
        let m = self.scalar_dim();
        Some(DMatrix::from_fn(m, self.n(), |r, k| b[(r % d, k)]))
    }

    /// Evaluates the `D x n` feature matrix `Psi(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        let n = self.n();
        let m = self.scalar_dim();
        let mut s = vec![0.0; m];
        self.scalar_features_into(x, &mut s);
        let mut psi = DMatrix::zeros(self.feature_dim(), n);
        match &self.directions {
            None => {
                for r in 0..m {
                    for k in 0..n {
                        psi[(r * n + k, k)] = s[r];
                    }
                }
            }
            Some(b) => {
                let d = self.d();
                for r in 0..m {
                    for k in 0..n {
                        psi[(r, k)] = s[r] * b[(r % d, k)];
                    }
                }
            }
        }
        Ok(psi)
    }

    /// `f(x) = Psi(x)^T alpha`.
    pub fn apply(&self, x: &[f64], alpha: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        if alpha.len() != self.feature_dim() {
            return Err(Error::input(format!(
                "coefficient vector has length {}, expected {}",
                alpha.len(),
                self.feature_dim()
            )));
        }
        let n = self.n();
        let m = self.scalar_dim();
        let mut s = vec![0.0; m];
        self.scalar_features_into(x, &mut s);
        let mut out = DVector::zeros(n);
        match &self.directions {
            None => {
                for r in 0..m {
                    for k in 0..n {
                        out[k] += alpha[r * n + k] * s[r];
                    }
                }
            }
            Some(b) => {
                let d = self.d();
                for r in 0..m {
                    let c = alpha[r] * s[r];
                    for k in 0..n {
                        out[k] += c * b[(r % d, k)];
                    }
                }
            }
        }
        Ok(out)
    }

    /// `Gamma(x)^T alpha`, the scalar potential with `Psi(x)^T alpha = J grad`.
    pub fn potential(&self, x: &[f64], alpha: &DVector<f64>) -> Result<f64> {
        self.check_state(x)?;
        if !self.family.is_symplectic() {
            return Err(Error::Unsupported(format!(
                "no Hamiltonian for {:?} features",
                self.family
            )));
        }
        let d = self.d();
        let scale = 1.0 / (d as f64).sqrt();
        let p = self.projections(x);
        // d/dx sin(w.x) = cos(w.x) w and d/dx -cos(w.x) = sin(w.x) w.
        let h = match self.family {
            FeatureFamily::Symplectic => (0..d)
                .map(|j| {
                    let (s, c) = p[j].sin_cos();
                    alpha[j] * s - alpha[d + j] * c
                })
                .sum::<f64>(),
            FeatureFamily::OddSymplectic => -(0..d).map(|j| alpha[j] * p[j].cos()).sum::<f64>(),
            FeatureFamily::EvenSymplectic => (0..d).map(|j| alpha[j] * p[j].sin()).sum::<f64>(),
            _ => unreachable!(),
        };
        Ok(h * scale)
    }

    /// Explicit `D x Nn` design matrix `[Psi(x_1) ... Psi(x_N)]`.
    pub fn design_matrix(&self, xs: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let n = self.n();
        let mut phi = DMatrix::zeros(self.feature_dim(), xs.len() * n);
        for (i, x) in xs.iter().enumerate() {
            let psi = self.eval(x.as_slice())?;
            phi.view_mut((0, i * n), (psi.nrows(), n)).copy_from(&psi);
        }
        Ok(phi)
    }

    /// Accumulates the sufficient statistics of the normal equations.
    pub(crate) fn normal_stats(&self, xs: &[DVector<f64>], ys: &[DVector<f64>]) -> NormalStats {
        let m = self.scalar_dim();
        let n = self.n();
        let dirs = self.stacked_directions();
        let rhs_cols = if dirs.is_some() { 1 } else { n };
        let mut stats = NormalStats {
            scalar_gram: DMatrix::zeros(m, m),
            rhs: DMatrix::zeros(m, rhs_cols),
            count: 0,
        };
        for (xc, yc) in xs.chunks(CHUNK).zip(ys.chunks(CHUNK)) {
            let s = self.scalar_matrix(xc);
            stats.scalar_gram += &s * s.transpose();
            let y = DMatrix::from_fn(yc.len(), n, |i, k| yc[i][k]);
            match &dirs {
                None => stats.rhs += &s * y,
                Some(b) => {
                    let proj = b * y.transpose();
                    let mut col = stats.rhs.column_mut(0);
                    for r in 0..m {
                        col[r] += s.row(r).dot(&proj.row(r));
                    }
                }
            }
            stats.count += xc.len();
        }
        stats
    }

    /// Solves the primal normal equations from accumulated statistics.
    pub(crate) fn solve_stats(
        &self,
        stats: &NormalStats,
        lambda: f64,
    ) -> Result<(DVector<f64>, SolveInfo)> {
        let shift = stats.count as f64 * lambda;
        let m = self.scalar_dim();
        match self.stacked_directions() {
            None => {
                let mut a = stats.scalar_gram.clone();
                for i in 0..m {
                    a[(i, i)] += shift;
                }
                let (coef, mut info) = linalg::solve_spd_multi(a, &stats.rhs)?;
                let r = &stats.scalar_gram * &coef + shift * &coef - &stats.rhs;
                info.relative_residual = relative(r.norm(), stats.rhs.norm());
                // row-major (feature, component) ordering
                let n = self.n();
                let alpha = DVector::from_fn(m * n, |i, _| coef[(i / n, i % n)]);
                Ok((alpha, info))
            }
            Some(b) => {
                let op = stats.scalar_gram.component_mul(&(&b * b.transpose()));
                let mut a = op.clone();
                for i in 0..m {
                    a[(i, i)] += shift;
                }
                let rhs = stats.rhs.column(0).into_owned();
                let (alpha, mut info) = linalg::solve_spd(a, &rhs)?;
                let r = &op * &alpha + shift * &alpha - &rhs;
                info.relative_residual = relative(r.norm(), rhs.norm());
                Ok((alpha, info))
            }
        }
    }

    /// Solves through the `Nn x Nn` dual system, `alpha = Phi (Phi^T Phi + N lambda I)^-1 y`.
    fn solve_dual(
        &self,
        xs: &[DVector<f64>],
        ys: &[DVector<f64>],
        lambda: f64,
    ) -> Result<(DVector<f64>, SolveInfo)> {
        let shift = xs.len() as f64 * lambda;
        let phi = self.design_matrix(xs)?;
        let y = DVector::from_iterator(phi.ncols(), ys.iter().flat_map(|y| y.iter().copied()));
        let mut k = phi.transpose() * &phi;
        for i in 0..k.nrows() {
            k[(i, i)] += shift;
        }
        let (beta, mut info) = linalg::solve_spd(k, &y)?;
        let alpha = &phi * beta;
        let rhs = &phi * &y;
        let r = &phi * (phi.transpose() * &alpha) + shift * &alpha - &rhs;
        info.relative_residual = relative(r.norm(), rhs.norm());
        Ok((alpha, info))
    }

    /// Whether the dual system is smaller than the primal one for `count` samples.
    fn prefers_dual(&self, count: usize) -> bool {
        count * self.n() < self.scalar_dim()
    }

    /// Fits coefficients for the samples, picking the cheaper equivalent solve.
    pub(crate) fn fit_coefficients(
        &self,
        xs: &[DVector<f64>],
        ys: &[DVector<f64>],
        lambda: f64,
    ) -> Result<(DVector<f64>, SolveInfo)> {
        if self.prefers_dual(xs.len()) {
            self.solve_dual(xs, ys, lambda)
        } else {
            self.solve_stats(&self.normal_stats(xs, ys), lambda)
        }
    }
}

/// Additive sufficient statistics of the feature normal equations.
#[derive(Debug, Clone)]
pub(crate) struct NormalStats {
    pub scalar_gram: DMatrix<f64>,
    pub rhs: DMatrix<f64>,
    pub count: usize,
}

impl NormalStats {
    pub fn minus(&self, other: &NormalStats) -> NormalStats {
        NormalStats {
            scalar_gram: &self.scalar_gram - &other.scalar_gram,
            rhs: &self.rhs - &other.rhs,
            count: self.count - other.count,
        }
    }

    pub fn plus(&self, other: &NormalStats) -> NormalStats {
        NormalStats {
            scalar_gram: &self.scalar_gram + &other.scalar_gram,
            rhs: &self.rhs + &other.rhs,
            count: self.count + other.count,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_samples: usize,
    pub noise_std: Option<f64>,
    pub system: Option<String>,
}

/// Feature-space ridge model `f(x) = Psi(x)^T alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct RffModel {
    pub map: FeatureMap,
    pub alpha: DVector<f64>,
    pub lambda: f64,
    pub meta: TrainingMeta,
    pub solve_residual: f64,
}

pub fn rff_fit(dataset: &Dataset, map: &FeatureMap, lambda: f64) -> Result<RffModel> {
    let mut model = rff_fit_points(&dataset.xs, &dataset.ys, map, lambda)?;
    model.meta.noise_std = Some(dataset.meta.sigma_n);
    model.meta.system = Some(dataset.meta.system.clone());
    Ok(model)
}

pub fn rff_fit_points(
    xs: &[DVector<f64>],
    ys: &[DVector<f64>],
    map: &FeatureMap,
    lambda: f64,
) -> Result<RffModel> {
    check_lambda(lambda)?;
    if xs.is_empty() {
        return Err(Error::input("dataset is empty"));
    }
    if xs.len() != ys.len() {
        return Err(Error::input(format!(
            "{} inputs but {} targets",
            xs.len(),
            ys.len()
        )));
    }
    let n = map.n();
    if xs.iter().chain(ys).any(|v| v.len() != n) {
        return Err(Error::input(format!(
            "sample dimension differs from feature map dimension {n}"
        )));
    }
    let (alpha, info) = map.fit_coefficients(xs, ys, lambda)?;
    Ok(RffModel {
        map: map.clone(),
        alpha,
        lambda,
        meta: TrainingMeta {
            n_samples: xs.len(),
            ..Default::default()
        },
        solve_residual: info.relative_residual,
    })
}

impl RffModel {
    pub fn predict(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.map.apply(x, &self.alpha)
    }

    pub fn hamiltonian(&self, x: &[f64]) -> Result<f64> {
        self.map.potential(x, &self.alpha)
    }
}

//! Ground-truth Hamiltonian benchmark systems.
//!
//! States are ordered `x = (q, p)`. The cart-pole and two-link robot share a
//! mechanical structure `H = p^T M(q)^-1 p / 2 + U(q)` with a 2x2 mass matrix.

use std::f64::consts::PI;

use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A time-invariant vector field `x' = f(x)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<DVector<f64>>;
}

/// Wraps a closure as a [`VectorField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok((self.f)(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub m: f64,
    pub l: f64,
    pub g: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            l: 1.0,
            g: 9.81,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleParams {
    pub m_c: f64,
    pub m_p: f64,
    pub l: f64,
    pub g: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            m_c: 0.8,
            m_p: 0.5,
            l: 1.0,
            g: 9.81,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLinkParams {
    pub m1: f64,
    pub m2: f64,
    /// Link lengths.
    pub len1: f64,
    pub len2: f64,
    /// Pivot to center-of-mass distances.
    pub com1: f64,
    pub com2: f64,
    pub g: f64,
}

impl Default for TwoLinkParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            len1: 1.0,
            len2: 2.0,
            com1: 0.5,
            com2: 1.0,
            g: 9.81,
        }
    }
}

impl TwoLinkParams {
    /// Slender-rod inertia about the center of mass, `m L^2 / 12`.
    pub fn inertia1(&self) -> f64 {
        self.m1 * self.len1 * self.len1 / 12.0
    }

    pub fn inertia2(&self) -> f64 {
        self.m2 * self.len2 * self.len2 / 12.0
    }
}

/// One of the benchmark systems with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", content = "params", rename_all = "snake_case")]
pub enum System {
    Pendulum(PendulumParams),
    #[serde(rename = "cartpole")]
    CartPole(CartPoleParams),
    #[serde(rename = "twolink")]
    TwoLink(TwoLinkParams),
}

fn all_positive(vals: &[f64]) -> bool {
    vals.iter().all(|v| v.is_finite() && *v > 0.0)
}

impl System {
    /// Builds a system from its id with the default parameter set.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "pendulum" => Ok(System::Pendulum(PendulumParams::default())),
            "cartpole" => Ok(System::CartPole(CartPoleParams::default())),
            "twolink" => Ok(System::TwoLink(TwoLinkParams::default())),
            other => Err(Error::config(format!("unknown system id {other:?}"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            System::Pendulum(_) => "pendulum",
            System::CartPole(_) => "cartpole",
            System::TwoLink(_) => "twolink",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            System::Pendulum(p) => all_positive(&[p.m, p.l, p.g]),
            System::CartPole(p) => all_positive(&[p.m_c, p.m_p, p.l, p.g]),
            System::TwoLink(p) => {
                all_positive(&[p.m1, p.m2, p.len1, p.len2, p.com1, p.com2, p.g])
                    && p.com1 <= p.len1
                    && p.com2 <= p.len2
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "invalid parameters for {}",
                self.id()
            )))
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            System::Pendulum(_) => 2,
            System::CartPole(_) | System::TwoLink(_) => 4,
        }
    }

    /// Box used for initial conditions and odd-error sampling.
    pub fn state_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            System::Pendulum(_) => (vec![-PI, -8.0], vec![PI, 8.0]),
            System::CartPole(_) => (vec![-2.0, -PI, -2.0, -2.0], vec![2.0, PI, 2.0, 2.0]),
            System::TwoLink(_) => (vec![-PI, -PI, -2.0, -2.0], vec![PI, PI, 2.0, 2.0]),
        }
    }

    /// Mass matrix of the mechanical systems at configuration `q`.
    pub fn mass_matrix(&self, q: &[f64]) -> Option<Matrix2<f64>> {
        match self {
            System::Pendulum(_) => None,
            System::CartPole(p) => {
                let off = p.m_p * p.l * q[1].cos();
                Some(Matrix2::new(p.m_c + p.m_p, off, off, p.m_p * p.l * p.l))
            }
            System::TwoLink(p) => {
                let (i1, i2) = (p.inertia1(), p.inertia2());
                let c2 = q[1].cos();
                let m3 = p.m2 * p.com2 * p.com2 + i2;
                let m2 = m3 + p.m2 * p.com2 * p.len1 * c2;
                let m1 = p.m1 * p.com1 * p.com1
                    + p.m2 * p.com2 * p.com2
                    + p.m2 * p.len1 * p.len1
                    + i1
                    + i2
                    + 2.0 * p.m2 * p.com2 * p.len1 * c2;
                Some(Matrix2::new(m1, m2, m2, m3))
            }
        }
    }

    /// `dM/dq_k` for `k = 0, 1`.
    fn mass_matrix_derivatives(&self, q: &[f64]) -> [Matrix2<f64>; 2] {
        match self {
            System::Pendulum(_) => [Matrix2::zeros(); 2],
            System::CartPole(p) => {
                let off = -p.m_p * p.l * q[1].sin();
                [Matrix2::zeros(), Matrix2::new(0.0, off, off, 0.0)]
            }
            System::TwoLink(p) => {
                let s = p.m2 * p.com2 * p.len1 * q[1].sin();
                [Matrix2::zeros(), Matrix2::new(-2.0 * s, -s, -s, 0.0)]
            }
        }
    }

    /// Potential energy `U(q)`.
    pub fn potential(&self, q: &[f64]) -> f64 {
        match self {
            System::Pendulum(p) => p.m * p.g * p.l * (1.0 - q[0].cos()),
            System::CartPole(p) => p.m_p * p.g * p.l * q[1].cos(),
            System::TwoLink(p) => {
                p.g * (-(p.m1 * p.com1 + p.m2 * p.len1) * q[0].cos()
                    - p.m2 * p.com2 * (q[0] + q[1]).cos())
            }
        }
    }

    fn potential_gradient(&self, q: &[f64]) -> Vector2<f64> {
        match self {
            System::Pendulum(_) => unreachable!("pendulum has a scalar configuration"),
            System::CartPole(p) => Vector2::new(0.0, -p.m_p * p.g * p.l * q[1].sin()),
            System::TwoLink(p) => {
                let s12 = (q[0] + q[1]).sin();
                Vector2::new(
                    p.g * ((p.m1 * p.com1 + p.m2 * p.len1) * q[0].sin() + p.m2 * p.com2 * s12),
                    p.g * p.m2 * p.com2 * s12,
                )
            }
        }
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::input(format!(
                "{} expects a state of dimension {}, got {}",
                self.id(),
                self.state_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn dynamics(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_state(x)?;
        match self {
            System::Pendulum(p) => {
                let (q, mom) = (x[0], x[1]);
                Ok(DVector::from_column_slice(&[
                    mom / (p.m * p.l * p.l),
                    -p.m * p.g * p.l * q.sin(),
                ]))
            }
            _ => {
                let q = &x[..2];
                let mom = Vector2::new(x[2], x[3]);
                let minv = inverse2(&self.mass_matrix(q).expect("mechanical system"))?;
                let qdot = minv * mom;
                // dH/dq_k = -qdot^T (dM/dq_k) qdot / 2 + dU/dq_k
                let dm = self.mass_matrix_derivatives(q);
                let du = self.potential_gradient(q);
                let pdot = Vector2::new(
                    0.5 * qdot.dot(&(dm[0] * qdot)) - du[0],
                    0.5 * qdot.dot(&(dm[1] * qdot)) - du[1],
                );
                Ok(DVector::from_column_slice(&[
                    qdot[0], qdot[1], pdot[0], pdot[1],
                ]))
            }
        }
    }

    pub fn hamiltonian(&self, x: &[f64]) -> Result<f64> {
        self.check_state(x)?;
        match self {
            System::Pendulum(p) => {
                Ok(x[1] * x[1] / (2.0 * p.m * p.l * p.l) + self.potential(&x[..1]))
            }
            _ => {
                let q = &x[..2];
                let mom = Vector2::new(x[2], x[3]);
                let minv = inverse2(&self.mass_matrix(q).expect("mechanical system"))?;
                Ok(0.5 * mom.dot(&(minv * mom)) + self.potential(q))
            }
        }
    }
}

impl VectorField for System {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.dynamics(x)
    }
}

/// Closed-form adjugate inverse of a 2x2 matrix.
fn inverse2(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let scale = m.abs().max();
    if !det.is_finite() || det.abs() <= 1e-14 * scale * scale {
        return Err(Error::numerical("singular mass matrix", f64::INFINITY));
    }
    Ok(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(sys: &System, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (lo, hi) = sys.state_box();
        lo.iter()
            .zip(&hi)
            .map(|(a, b)| rng.random_range(*a..*b))
            .collect()
    }

    fn systems() -> [System; 3] {
        [
            System::from_id("pendulum").unwrap(),
            System::from_id("cartpole").unwrap(),
            System::from_id("twolink").unwrap(),
        ]
    }

    fn fd_gradient(sys: &System, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[k] += h;
                b[k] -= h;
                (sys.hamiltonian(&a).unwrap() - sys.hamiltonian(&b).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn pendulum_values() {
        let sys = System::from_id("pendulum").unwrap();
        assert_eq!(sys.dynamics(&[0.0, 0.0]).unwrap().as_slice(), &[0.0, 0.0]);
        let f = sys.dynamics(&[PI / 2.0, 0.0]).unwrap();
        assert_eq!(f[0], 0.0);
        assert_relative_eq!(f[1], -9.81, epsilon = 1e-15);
        assert_eq!(sys.hamiltonian(&[0.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(
            sys.hamiltonian(&[PI / 2.0, 0.0]).unwrap(),
            9.81,
            epsilon = 1e-14
        );
    }

    #[test]
    fn cartpole_values() {
        let sys = System::from_id("cartpole").unwrap();
        assert_relative_eq!(sys.hamiltonian(&[0.0; 4]).unwrap(), 4.905, epsilon = 1e-14);
        let f = sys.dynamics(&[0.0; 4]).unwrap();
        assert!(f.iter().all(|v| *v == 0.0));
        let m = sys.mass_matrix(&[0.3, 0.0]).unwrap();
        assert_relative_eq!(m, Matrix2::new(1.3, 0.5, 0.5, 0.5), epsilon = 1e-15);
    }

    #[test]
    fn twolink_values() {
        let sys = System::from_id("twolink").unwrap();
        let m = sys.mass_matrix(&[0.7, 0.0]).unwrap();
        // 0.25 + 1 + 1 + 1/12 + 1/3 + 2
        assert_relative_eq!(m[(0, 0)], 4.666_666_666_666_667, epsilon = 1e-12);
        assert_relative_eq!(m[(0, 1)], 2.333_333_333_333_333, epsilon = 1e-12);
        assert_relative_eq!(m[(1, 1)], 1.333_333_333_333_333, epsilon = 1e-12);
        assert_relative_eq!(sys.potential(&[0.0, 0.0]), -24.525, epsilon = 1e-12);
    }

    #[test]
    fn true_fields_are_odd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for sys in systems() {
            for _ in 0..100 {
                let x = random_state(&sys, &mut rng);
                let neg: Vec<f64> = x.iter().map(|v| -v).collect();
                let s = sys.dynamics(&x).unwrap() + sys.dynamics(&neg).unwrap();
                assert!(s.norm() <= 1e-12, "{} {:?}", sys.id(), s);
            }
        }
    }

    #[test]
    fn fields_are_hamiltonian_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for sys in systems() {
            for _ in 0..100 {
                let x = random_state(&sys, &mut rng);
                let grad = fd_gradient(&sys, &x, 1e-6);
                let jg = crate::linalg::apply_j(&grad);
                let f = sys.dynamics(&x).unwrap();
                let err = (f.clone() - DVector::from_vec(jg)).norm();
                assert!(err <= 1e-5 * (1.0 + f.norm()), "{} err {err}", sys.id());
            }
        }
    }

    #[test]
    fn energy_rate_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sys in [
            System::from_id("cartpole").unwrap(),
            System::from_id("twolink").unwrap(),
        ] {
            for _ in 0..50 {
                let x = random_state(&sys, &mut rng);
                let grad = fd_gradient(&sys, &x, 1e-6);
                let f = sys.dynamics(&x).unwrap();
                let rate: f64 = grad.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
                assert!(rate.abs() <= 1e-6, "{} rate {rate}", sys.id());
            }
        }
    }

    #[test]
    fn jacobian_symplecticity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for sys in systems() {
            let n = sys.state_dim();
            let j = crate::linalg::symplectic_matrix(n);
            for _ in 0..20 {
                let x = random_state(&sys, &mut rng);
                let mut jac = nalgebra::DMatrix::zeros(n, n);
                for k in 0..n {
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[k] += h;
                    b[k] -= h;
                    let col = (sys.dynamics(&a).unwrap() - sys.dynamics(&b).unwrap()) / (2.0 * h);
                    jac.set_column(k, &col);
                }
                let a = j.transpose() * jac;
                assert!(
                    (&a - a.transpose()).norm() <= 1e-5 * (1.0 + a.norm()),
                    "{}",
                    sys.id()
                );
            }
        }
    }

    #[test]
    fn ids_and_validation() {
        for sys in systems() {
            assert_eq!(System::from_id(sys.id()).unwrap(), sys);
            sys.validate().unwrap();
        }
        assert!(System::from_id("acrobot").is_err());
        let bad = System::TwoLink(TwoLinkParams {
            com1: 2.0,
            ..Default::default()
        });
        assert!(bad.validate().is_err());
        assert!(System::from_id("pendulum")
            .unwrap()
            .dynamics(&[0.0; 4])
            .is_err());
    }

    #[test]
    fn serde_tagging() {
        let s = serde_json::to_string(&System::from_id("cartpole").unwrap()).unwrap();
        assert!(s.contains("\"id\":\"cartpole\""), "{s}");
        let back: System = serde_json::from_str(&s).unwrap();
        assert_eq!(back, System::from_id("cartpole").unwrap());
    }
}

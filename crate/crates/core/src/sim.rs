//! Trajectory integration and noisy dataset generation.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::{System, VectorField};

/// Output grid and accuracy requested from [`integrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub x0: Vec<f64>,
    pub t_end: f64,
    /// Number of equally spaced output samples, including both endpoints.
    pub n_steps: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

pub const DEFAULT_REL_TOL: f64 = 1e-10;
pub const DEFAULT_ABS_TOL: f64 = 1e-12;

impl TrajectorySpec {
    pub fn new(x0: Vec<f64>, t_end: f64, n_steps: usize) -> Self {
        Self {
            x0,
            t_end,
            n_steps,
            rel_tol: DEFAULT_REL_TOL,
            abs_tol: DEFAULT_ABS_TOL,
        }
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::input(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if self.n_steps < 2 {
            return Err(Error::input("need at least two output samples"));
        }
        for tol in [self.rel_tol, self.abs_tol] {
            if !(tol > 0.0 && tol <= 1e-2) {
                return Err(Error::input(format!("tolerance {tol} outside (0, 1e-2]")));
            }
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("initial state is not finite"));
        }
        Ok(())
    }

    pub fn output_times(&self) -> Vec<f64> {
        let last = (self.n_steps - 1) as f64;
        (0..self.n_steps)
            .map(|k| {
                if k + 1 == self.n_steps {
                    self.t_end
                } else {
                    self.t_end * k as f64 / last
                }
            })
            .collect()
    }
}

/// A sampled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

// Dormand-Prince 5(4) coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const MAX_STEPS: usize = 5_000_000;

fn eval_field<F: VectorField + ?Sized>(f: &F, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let y = f.eval(x.as_slice()).map_err(|e| Error::Integration {
        t,
        message: e.to_string(),
    })?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            t,
            message: "vector field returned a non-finite value".into(),
        });
    }
    Ok(y)
}

/// Stages two to six of a Dormand-Prince step of length `h` from `x` at `t`,
/// with `k1 = f(x)` already known. Returns the fifth-order state and stages.
fn dp_stages<F: VectorField + ?Sized>(
    f: &F,
    x: &DVector<f64>,
    k1: &DVector<f64>,
    t: f64,
    h: f64,
) -> Result<(DVector<f64>, [DVector<f64>; 5])> {
    let k2 = eval_field(f, &(x + h * A21 * k1), t + C2 * h)?;
    let k3 = eval_field(f, &(x + h * (A31 * k1 + A32 * &k2)), t + C3 * h)?;
    let k4 = eval_field(f, &(x + h * (A41 * k1 + A42 * &k2 + A43 * &k3)), t + C4 * h)?;
    let k5 = eval_field(
        f,
        &(x + h * (A51 * k1 + A52 * &k2 + A53 * &k3 + A54 * &k4)),
        t + C5 * h,
    )?;
    let k6 = eval_field(
        f,
        &(x + h * (A61 * k1 + A62 * &k2 + A63 * &k3 + A64 * &k4 + A65 * &k5)),
        t + h,
    )?;
    let x_new = x + h * (A71 * k1 + A73 * &k3 + A74 * &k4 + A75 * &k5 + A76 * &k6);
    Ok((x_new, [k2, k3, k4, k5, k6]))
}

/// Integrates `x' = f(x)` with adaptive Dormand-Prince 5(4) steps and samples
/// the solution on an equally spaced grid.
///
/// The step sequence is chosen by error control alone. An output time inside
/// an accepted step `[t, t + h]` is filled by a single shorter step from `t`,
/// whose local error is below that of the accepted step. The method's free
/// interpolant is only fourth order and misses the tolerance on fine grids.
pub fn integrate<F: VectorField + ?Sized>(f: &F, spec: &TrajectorySpec) -> Result<Trajectory> {
    spec.validate()?;
    if spec.x0.len() != f.dim() {
        return Err(Error::input(format!(
            "initial state has dimension {}, field expects {}",
            spec.x0.len(),
            f.dim()
        )));
    }
    let times = spec.output_times();
    let (rtol, atol) = (spec.rel_tol, spec.abs_tol);
    let mut t = 0.0;
    let mut x = DVector::from_column_slice(&spec.x0);
    let mut k1 = eval_field(f, &x, t)?;
    let mut states = Vec::with_capacity(times.len());
    states.push(x.clone());
    let mut next_out = 1;

    let err_norm = |v: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        let n = v.len() as f64;
        let s: f64 = v
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(e, (p, q))| {
                let sc = atol + rtol * p.abs().max(q.abs());
                (e / sc).powi(2)
            })
            .sum();
        (s / n).sqrt()
    };

    // Initial step guess.
    let mut h = {
        let zero = DVector::zeros(x.len());
        let d0 = err_norm(&x, &x, &zero);
        let d1 = err_norm(&k1, &x, &zero);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let x1 = &x + h0 * &k1;
        let k2 = eval_field(f, &x1, h0)?;
        let d2 = err_norm(&(&k2 - &k1), &x, &zero) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(spec.t_end)
    };

    let mut steps = 0;
    let mut last_accepted_err = 1e-4f64;
    while next_out < times.len() {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::Integration {
                t,
                message: "step budget exhausted".into(),
            });
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Integration {
                t,
                message: format!("step size underflow (h = {h:e})"),
            });
        }
        let h_step = h.min(spec.t_end - t);
        let (x_new, [_, k3, k4, k5, k6]) = dp_stages(f, &x, &k1, t, h_step)?;
        let k7 = eval_field(f, &x_new, t + h_step)?;
        let err_vec = h_step * (E1 * &k1 + E3 * &k3 + E4 * &k4 + E5 * &k5 + E6 * &k6 + E7 * &k7);
        let err = err_norm(&err_vec, &x, &x_new);

        if err <= 1.0 {
            let t_new = t + h_step;
            let t_new = if (spec.t_end - t_new).abs() <= 1e-14 * spec.t_end {
                spec.t_end
            } else {
                t_new
            };
            while next_out < times.len() && times[next_out] <= t_new {
                let tout = times[next_out];
                if tout == t_new {
                    states.push(x_new.clone());
                } else {
                    states.push(dp_stages(f, &x, &k1, t, tout - t)?.0);
                }
                next_out += 1;
            }
            t = t_new;
            x = x_new;
            k1 = k7;
            // PI step-size controller.
            let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * last_accepted_err.powf(0.4 / 5.0);
            h = h_step * fac.clamp(0.2, 10.0);
            last_accepted_err = err.max(1e-4);
        } else {
            let fac = 0.9 * err.powf(-0.2);
            h = h_step * fac.clamp(0.2, 1.0);
        }
    }
    Ok(Trajectory { times, states })
}

/// Draws `count` i.i.d. uniform points from the box `[lower, upper)`.
pub fn sample_ics(lower: &[f64], upper: &[f64], count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(Error::input(
            "box bounds must have equal, nonzero dimension",
        ));
    }
    if lower
        .iter()
        .zip(upper)
        .any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
    {
        return Err(Error::input("degenerate sampling box: need lower < upper"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            lower
                .iter()
                .zip(upper)
                .map(|(a, b)| rng.random_range(*a..*b))
                .collect()
        })
        .collect())
}

/// Whether derivative targets are taken at the clean or the noisy state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `y = f(x_clean) + e_y`, `x = x_clean + e_x`.
    #[default]
    CleanDerivative,
    /// `y = f(x_clean + e_x) + e_y`.
    NoisyStateDerivative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: String,
    pub params_digest: String,
    pub sigma_n: f64,
    pub seed: u64,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    /// Half-open sample index ranges, one per trajectory.
    pub trajectory_bounds: Vec<(usize, usize)>,
    /// Digest of the configuration that produced the data, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

/// Samples `(x_i, y_i)` with the trajectory and time each came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub traj_ids: Vec<usize>,
    pub times: Vec<f64>,
    pub xs: Vec<DVector<f64>>,
    pub ys: Vec<DVector<f64>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, |x| x.len())
    }

    /// Builds an unlabelled dataset from raw samples, one trajectory per sample.
    pub fn from_samples(xs: Vec<DVector<f64>>, ys: Vec<DVector<f64>>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::input("inputs and targets differ in count"));
        }
        let n = xs.first().map_or(0, |x| x.len());
        if xs.iter().chain(&ys).any(|v| v.len() != n) {
            return Err(Error::input("samples do not share a dimension"));
        }
        let count = xs.len();
        Ok(Self {
            traj_ids: (0..count).collect(),
            times: vec![0.0; count],
            xs,
            ys,
            meta: DatasetMeta {
                system: String::new(),
                params_digest: String::new(),
                sigma_n: 0.0,
                seed: 0,
                noise_mode: NoiseMode::default(),
                trajectory_bounds: (0..count).map(|i| (i, i + 1)).collect(),
                config_digest: None,
            },
        })
    }

    /// Subset by sample index, keeping metadata.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            traj_ids: idx.iter().map(|&i| self.traj_ids[i]).collect(),
            times: idx.iter().map(|&i| self.times[i]).collect(),
            xs: idx.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: idx.iter().map(|&i| self.ys[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }
}

/// Stable text digest of a system's parameters.
pub fn params_digest(system: &System) -> String {
    crate::io::digest(
        serde_json::to_string(system)
            .expect("system serializes")
            .as_bytes(),
    )
}

/// Per-trajectory RNG stream so serial and parallel generation agree.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecipe<'a> {
    pub system: &'a System,
    pub ics: &'a [Vec<f64>],
    pub t_end: f64,
    pub n_steps: usize,
    pub sigma_n: f64,
    pub seed: u64,
    pub noise_mode: NoiseMode,
}

fn noise_dist(sigma_n: f64) -> Result<Option<Normal<f64>>> {
    if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
        return Err(Error::input(format!(
            "noise level must be >= 0, got {sigma_n}"
        )));
    }
    if sigma_n == 0.0 {
        return Ok(None);
    }
    Ok(Some(
        Normal::new(0.0, sigma_n).map_err(|e| Error::input(e.to_string()))?,
    ))
}

fn noisy_sample(
    system: &System,
    clean: &DVector<f64>,
    noise: Option<&Normal<f64>>,
    mode: NoiseMode,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut x = clean.clone();
    if let Some(d) = noise {
        x.iter_mut().for_each(|v| *v += d.sample(rng));
    }
    let mut y = match mode {
        NoiseMode::CleanDerivative => system.dynamics(clean.as_slice())?,
        NoiseMode::NoisyStateDerivative => system.dynamics(x.as_slice())?,
    };
    if let Some(d) = noise {
        y.iter_mut().for_each(|v| *v += d.sample(rng));
    }
    Ok((x, y))
}

fn empty_dataset(system: &System, sigma_n: f64, seed: u64, noise_mode: NoiseMode) -> Dataset {
    Dataset {
        traj_ids: Vec::new(),
        times: Vec::new(),
        xs: Vec::new(),
        ys: Vec::new(),
        meta: DatasetMeta {
            system: system.id().to_string(),
            params_digest: params_digest(system),
            sigma_n,
            seed,
            noise_mode,
            trajectory_bounds: Vec::new(),
            config_digest: None,
        },
    }
}

/// Noisy derivative samples at scattered states, each its own one-sample
/// trajectory at `t = 0`.
pub fn generate_point_dataset(
    system: &System,
    points: &[Vec<f64>],
    sigma_n: f64,
    seed: u64,
    noise_mode: NoiseMode,
) -> Result<Dataset> {
    system.validate()?;
    let noise = noise_dist(sigma_n)?;
    let mut out = empty_dataset(system, sigma_n, seed, noise_mode);
    let mut rng = stream_rng(seed, u64::MAX);
    for (idx, p) in points.iter().enumerate() {
        if p.len() != system.state_dim() {
            return Err(Error::input(format!("point {idx} has the wrong dimension")));
        }
        let (x, y) = noisy_sample(
            system,
            &DVector::from_column_slice(p),
            noise.as_ref(),
            noise_mode,
            &mut rng,
        )?;
        out.traj_ids.push(idx);
        out.times.push(0.0);
        out.xs.push(x);
        out.ys.push(y);
        out.meta.trajectory_bounds.push((idx, idx + 1));
    }
    Ok(out)
}

/// Simulates each initial condition, samples derivatives, then adds noise.
pub fn generate_dataset(recipe: &DatasetRecipe<'_>) -> Result<Dataset> {
    let system = recipe.system;
    system.validate()?;
    let noise = noise_dist(recipe.sigma_n)?;
    let mut out = empty_dataset(system, recipe.sigma_n, recipe.seed, recipe.noise_mode);
    for (idx, ic) in recipe.ics.iter().enumerate() {
        let spec = TrajectorySpec::new(ic.clone(), recipe.t_end, recipe.n_steps);
        let traj = integrate(system, &spec).map_err(|e| match e {
            Error::Integration { t, message } => Error::Integration {
                t,
                message: format!("initial condition {idx}: {message}"),
            },
            other => other,
        })?;
        let mut rng = stream_rng(recipe.seed, idx as u64);
        let start = out.xs.len();
        for (t, clean) in traj.times.iter().zip(&traj.states) {
            let (x, y) = noisy_sample(system, clean, noise.as_ref(), recipe.noise_mode, &mut rng)?;
            out.traj_ids.push(idx);
            out.times.push(*t);
            out.xs.push(x);
            out.ys.push(y);
        }
        out.meta.trajectory_bounds.push((start, out.xs.len()));
    }
    Ok(out)
}

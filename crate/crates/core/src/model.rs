//! A single learned-model type over exact and random-feature fits.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureFamily, FeatureMap, RffModel};
use crate::kernels::{self, ExactModel, KernelFamily, KernelSpec, Parity};
use crate::sim::{self, Dataset, Trajectory, TrajectorySpec};
use crate::systems::VectorField;

/// What to fit, minus the hyperparameters `(sigma, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ModelKind {
    Exact {
        family: KernelFamily,
        #[serde(default)]
        parity: Parity,
    },
    Rff {
        family: FeatureFamily,
        d: usize,
        seed: u64,
    },
}

impl ModelKind {
    pub fn is_symplectic(&self) -> bool {
        match self {
            ModelKind::Exact { family, .. } => *family == KernelFamily::Symplectic,
            ModelKind::Rff { family, .. } => family.is_symplectic(),
        }
    }

    pub fn is_odd(&self) -> bool {
        match self {
            ModelKind::Exact { parity, .. } => *parity == Parity::Odd,
            ModelKind::Rff { family, .. } => matches!(
                family,
                FeatureFamily::OddSymplectic | FeatureFamily::OddSeparable
            ),
        }
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        match self {
            ModelKind::Exact { family, parity } => format!("exact {family:?}/{parity:?}"),
            ModelKind::Rff { family, d, .. } => format!("rff {family:?} d={d}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub sigma: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_digest: String,
    pub seed: u64,
    #[serde(default)]
    pub config_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    Exact(ExactModel),
    Rff(RffModel),
}

/// A fitted vector-field model; immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedModel {
    pub variant: Variant,
    pub hyper: Hyper,
    pub provenance: Provenance,
}

/// Fits a model of the given kind to the dataset.
pub fn fit(dataset: &Dataset, kind: &ModelKind, hyper: Hyper) -> Result<LearnedModel> {
    let mut model = fit_points(&dataset.xs, &dataset.ys, kind, hyper)?;
    if let Variant::Rff(r) = &mut model.variant {
        r.meta.noise_std = Some(dataset.meta.sigma_n);
        r.meta.system = Some(dataset.meta.system.clone());
    }
    model.provenance = Provenance {
        dataset_digest: crate::io::dataset_digest(dataset),
        seed: dataset.meta.seed,
        config_digest: None,
    };
    Ok(model)
}

pub fn fit_points(
    xs: &[DVector<f64>],
    ys: &[DVector<f64>],
    kind: &ModelKind,
    hyper: Hyper,
) -> Result<LearnedModel> {
    let n = xs
        .first()
        .ok_or_else(|| Error::input("dataset is empty"))?
        .len();
    let variant = match *kind {
        ModelKind::Exact { family, parity } => {
            let spec = KernelSpec::new(family, hyper.sigma, parity)?;
            Variant::Exact(kernels::exact_fit_points(xs, ys, &spec, hyper.lambda)?)
        }
        ModelKind::Rff { family, d, seed } => {
            let map = FeatureMap::new(family, hyper.sigma, d, n, seed)?;
            Variant::Rff(features::rff_fit_points(xs, ys, &map, hyper.lambda)?)
        }
    };
    Ok(LearnedModel {
        variant,
        hyper,
        provenance: Provenance::default(),
    })
}

impl LearnedModel {
    pub fn dim(&self) -> usize {
        match &self.variant {
            Variant::Exact(m) => m.dim(),
            Variant::Rff(m) => m.map.n(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match &self.variant {
            Variant::Exact(m) => ModelKind::Exact {
                family: m.spec.family,
                parity: m.spec.parity,
            },
            Variant::Rff(m) => ModelKind::Rff {
                family: m.map.family,
                d: m.map.d(),
                seed: m.map.seed,
            },
        }
    }

    pub fn solve_residual(&self) -> f64 {
        match &self.variant {
            Variant::Exact(m) => m.solve_residual,
            Variant::Rff(m) => m.solve_residual,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<DVector<f64>> {
        match &self.variant {
            Variant::Exact(m) => m.predict(x),
            Variant::Rff(m) => m.predict(x),
        }
    }

    /// The learned Hamiltonian, defined for symplectic-family models.
    pub fn hamiltonian(&self, x: &[f64]) -> Result<f64> {
        match &self.variant {
            Variant::Exact(m) => m.hamiltonian(x),
            Variant::Rff(m) => m.hamiltonian(x),
        }
    }

    /// Integrates the learned field from `x0` on `n_steps` output times.
    pub fn rollout(&self, x0: &[f64], t_end: f64, n_steps: usize) -> Result<Trajectory> {
        self.rollout_with(&TrajectorySpec::new(x0.to_vec(), t_end, n_steps))
    }

    pub fn rollout_with(&self, spec: &TrajectorySpec) -> Result<Trajectory> {
        sim::integrate(self, spec)
    }

    /// Training mean squared error `(1/N) sum |f(x_i) - y_i|^2`.
    pub fn training_mse(&self, dataset: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in dataset.xs.iter().zip(&dataset.ys) {
            total += (self.predict(x.as_slice())? - y).norm_squared();
        }
        Ok(total / dataset.len().max(1) as f64)
    }
}

impl VectorField for LearnedModel {
    fn dim(&self) -> usize {
        LearnedModel::dim(self)
    }

    fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.predict(x)
    }
}

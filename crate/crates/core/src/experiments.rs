//! End-to-end pipelines shared by the command-line tool and the benchmarks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, ExperimentConfig, HyperValue, ModelRecipe};
use crate::error::{Error, Result};
use crate::features::FeatureFamily;
use crate::kernels::Parity;
use crate::metrics::{self, EvalReport, HamiltonianReport, SampleBox, Stat};
use crate::model::{fit, Hyper, LearnedModel, ModelKind};
use crate::sim::{
    generate_dataset, generate_point_dataset, integrate, sample_ics, Dataset, DatasetRecipe,
    Trajectory, TrajectorySpec,
};
use crate::systems::System;
use crate::tuning::{
    tune, CvSettings, FoldGrouping, GaConfig, HyperBounds, SearchMethod, TuningRecord,
};

/// Training data described by the configuration.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    let b = cfg.ic_box();
    let noise_seed = derive_seed(cfg.seed, "noise");
    if d.ics.is_none() && d.n_ics.is_none() {
        if let Some(count) = d.points {
            let pts = sample_ics(&b.lower, &b.upper, count, derive_seed(cfg.seed, "points"))?;
            let mut data =
                generate_point_dataset(&cfg.system, &pts, d.sigma_n, noise_seed, d.noise_mode)?;
            data.meta.config_digest = Some(cfg.digest());
            return Ok(data);
        }
    }
    let ics = training_ics(cfg)?;
    if ics.is_empty() {
        return Err(Error::config("dataset needs `ics`, `n_ics` or `points`"));
    }
    let mut data = generate_dataset(&DatasetRecipe {
        system: &cfg.system,
        ics: &ics,
        t_end: d.t_end,
        n_steps: d.n_steps,
        sigma_n: d.sigma_n,
        seed: noise_seed,
        noise_mode: d.noise_mode,
    })?;
    data.meta.config_digest = Some(cfg.digest());
    Ok(data)
}

/// Test initial conditions described by the configuration.
pub fn test_ics(cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    match &cfg.evaluation.test_ics {
        Some(ics) => Ok(ics.clone()),
        None => {
            let b = cfg.test_box();
            sample_ics(
                &b.lower,
                &b.upper,
                cfg.evaluation.n_test,
                derive_seed(cfg.seed, "test"),
            )
        }
    }
}

/// Integrates `field` from each initial condition.
pub fn trajectories<F: crate::systems::VectorField + ?Sized>(
    field: &F,
    ics: &[Vec<f64>],
    t_end: f64,
    n_steps: usize,
) -> Result<Vec<Trajectory>> {
    ics.iter()
        .map(|x0| integrate(field, &TrajectorySpec::new(x0.clone(), t_end, n_steps)))
        .collect()
}

/// Draws a deterministic subsample of at most `max` samples.
pub fn subsample(dataset: &Dataset, max: usize, seed: u64) -> Dataset {
    if dataset.len() <= max {
        return dataset.clone();
    }
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), dataset.len(), max).into_vec();
    idx.sort_unstable();
    dataset.select(&idx)
}

/// Tunes whichever of `(sigma, lambda)` is not fixed; fixed values are held.
pub fn tune_hyper(
    dataset: &Dataset,
    kind: &ModelKind,
    sigma: HyperValue,
    lambda: HyperValue,
    cv: &CvSettings,
    bounds: &HyperBounds,
    method: &SearchMethod,
) -> Result<(Hyper, Option<TuningRecord>)> {
    if let (Some(s), Some(l)) = (sigma.fixed(), lambda.fixed()) {
        return Ok((
            Hyper {
                sigma: s,
                lambda: l,
            },
            None,
        ));
    }
    let pin = |v: HyperValue, range: (f64, f64)| match v.fixed() {
        // A degenerate range would fail validation, so widen by one ulp.
        Some(x) => (x, x * (1.0 + f64::EPSILON) + f64::MIN_POSITIVE),
        None => range,
    };
    let b = HyperBounds {
        sigma: pin(sigma, bounds.sigma),
        lambda: pin(lambda, bounds.lambda),
    };
    let mut rec = tune(dataset, kind, cv, &b, method)?;
    rec.sigma = sigma.fixed().unwrap_or(rec.sigma);
    rec.lambda = lambda.fixed().unwrap_or(rec.lambda);
    rec.bounds = *bounds;
    Ok((
        Hyper {
            sigma: rec.sigma,
            lambda: rec.lambda,
        },
        Some(rec),
    ))
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: LearnedModel,
    pub tuning: Option<TuningRecord>,
}

/// Resolves hyperparameters (tuning if asked) and fits the configured model.
pub fn train(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Trained> {
    let kind = cfg.model_kind();
    let t = &cfg.tuning;
    let tune_data = match t.subsample {
        Some(m) => subsample(dataset, m, derive_seed(cfg.seed, "subsample")),
        None => dataset.clone(),
    };
    let (hyper, tuning) = tune_hyper(
        &tune_data,
        &kind,
        cfg.model.sigma,
        cfg.model.lambda,
        &t.cv_settings(cfg.seed),
        &t.bounds,
        &t.resolved_method(cfg.seed),
    )?;
    let mut model = fit(dataset, &kind, hyper)?;
    model.provenance.seed = cfg.seed;
    model.provenance.config_digest = Some(cfg.digest());
    Ok(Trained { model, tuning })
}

/// Trajectory, odd-error, Hamiltonian and symplecticity metrics on the
/// configured test set.
pub fn evaluate(model: &LearnedModel, cfg: &ExperimentConfig) -> Result<EvalReport> {
    let e = &cfg.evaluation;
    let system = &cfg.system;
    let ics = test_ics(cfg)?;
    let truth = trajectories(system, &ics, e.t_end, e.n_steps)?;
    let learned = trajectories(model, &ics, e.t_end, e.n_steps)?;
    let per = metrics::per_trajectory_mse(&truth, &learned)?;
    let mse = per.iter().sum::<f64>() / per.len() as f64;

    let b = cfg.test_box();
    let odd_seed = derive_seed(cfg.seed, "odd");
    let odd_error = metrics::odd_error(model, &b, e.odd_samples, odd_seed)?.into();
    let true_odd_error = metrics::odd_error(system, &b, e.odd_samples, odd_seed)?.into();

    let symplectic = model.kind().is_symplectic();
    let hamiltonian = truth
        .iter()
        .zip(&learned)
        .map(|(t, l)| hamiltonian_report(system, symplectic.then_some(model), t, l))
        .collect::<Result<Vec<_>>>()?;

    let pts = sample_ics(
        &b.lower,
        &b.upper,
        e.symplecticity_points,
        derive_seed(cfg.seed, "fd"),
    )?;
    let symplecticity = pts
        .iter()
        .map(|x| metrics::symplecticity_residual(model, x, e.fd_step))
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalReport {
        system: system.id().to_string(),
        model: model.kind().label(),
        per_trajectory_mse: per,
        mse,
        odd_error,
        true_odd_error,
        hamiltonian,
        symplecticity,
        config_digest: Some(cfg.digest()),
    })
}

/// `H` along the true trajectory, `Hhat` along the learned rollout, and their
/// difference paired by output time.
pub fn hamiltonian_report(
    system: &System,
    model: Option<&LearnedModel>,
    truth: &Trajectory,
    learned: &Trajectory,
) -> Result<HamiltonianReport> {
    let h_true: Vec<f64> = truth
        .states
        .iter()
        .map(|s| system.hamiltonian(s.as_slice()))
        .collect::<Result<_>>()?;
    let truth_stat: Stat = metrics::mean_var(&h_true).into();
    let Some(model) = model else {
        return Ok(HamiltonianReport {
            truth: truth_stat,
            learned: None,
            offset: None,
        });
    };
    let h_hat: Vec<f64> = learned
        .states
        .iter()
        .map(|s| model.hamiltonian(s.as_slice()))
        .collect::<Result<_>>()?;
    let diff: Vec<f64> = h_hat.iter().zip(&h_true).map(|(a, b)| a - b).collect();
    Ok(HamiltonianReport {
        truth: truth_stat,
        learned: Some(metrics::mean_var(&h_hat).into()),
        offset: Some(metrics::mean_var(&diff).into()),
    })
}

/// The two models compared throughout: Gaussian separable and odd symplectic
/// random-feature models with equal coefficient counts.
pub fn comparison_kinds(system: &System, seed: u64) -> [ModelKind; 2] {
    let (dg, ds) = match system {
        System::TwoLink(_) => (100, 800),
        _ => (50, 400),
    };
    [
        ModelKind::Rff {
            family: FeatureFamily::GaussianSeparable,
            d: dg,
            seed,
        },
        ModelKind::Rff {
            family: FeatureFamily::OddSymplectic,
            d: ds,
            seed,
        },
    ]
}

/// A small GA budget used where many independent tunings are needed.
pub fn quick_ga(seed: u64) -> SearchMethod {
    SearchMethod::Ga(GaConfig {
        population: 12,
        generations: 10,
        seed,
        ..GaConfig::default()
    })
}

/// Per-step errors on the pendulum test trajectory for both comparison models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadlineRun {
    pub seed: u64,
    pub times: Vec<f64>,
    pub gaussian_error: Vec<f64>,
    pub symplectic_error: Vec<f64>,
    pub gaussian_mse: f64,
    pub symplectic_mse: f64,
    pub gaussian_hyper: Hyper,
    pub symplectic_hyper: Hyper,
}

impl HeadlineRun {
    /// Fraction of steps where the symplectic model is no worse, counting
    /// exact ties (such as `t = 0`) in its favour.
    pub fn fraction_not_worse(&self) -> f64 {
        let good = self
            .symplectic_error
            .iter()
            .zip(&self.gaussian_error)
            .filter(|(s, g)| s <= g)
            .count();
        good as f64 / self.times.len() as f64
    }
}

/// Trains both comparison models on the pendulum recipe and rolls them out
/// from the test initial condition.
pub fn pendulum_headline(seed: u64, method: Option<SearchMethod>) -> Result<HeadlineRun> {
    let mut cfg = ExperimentConfig::preset("pendulum")?;
    cfg.seed = seed;
    let data = build_dataset(&cfg)?;
    let feature_seed = derive_seed(seed, "features");
    let method = method.unwrap_or_else(|| cfg.tuning.resolved_method(seed));
    let e = &cfg.evaluation;
    let ics = test_ics(&cfg)?;
    let truth = trajectories(&cfg.system, &ics, e.t_end, e.n_steps)?.remove(0);
    let mut out = Vec::new();
    for kind in comparison_kinds(&cfg.system, feature_seed) {
        let (hyper, _) = tune_hyper(
            &data,
            &kind,
            HyperValue::TUNE,
            HyperValue::TUNE,
            &cfg.tuning.cv_settings(seed),
            &cfg.tuning.bounds,
            &method,
        )?;
        let model = fit(&data, &kind, hyper)?;
        let roll = trajectories(&model, &ics, e.t_end, e.n_steps)?.remove(0);
        let err: Vec<f64> = truth
            .states
            .iter()
            .zip(&roll.states)
            .map(|(a, b)| (a - b).norm())
            .collect();
        let mse = metrics::single_trajectory_mse(&truth, &roll)?;
        out.push((err, mse, hyper));
    }
    let (se, smse, sh) = out.pop().expect("two models");
    let (ge, gmse, gh) = out.pop().expect("two models");
    Ok(HeadlineRun {
        seed,
        times: truth.times,
        gaussian_error: ge,
        symplectic_error: se,
        gaussian_mse: gmse,
        symplectic_mse: smse,
        gaussian_hyper: gh,
        symplectic_hyper: sh,
    })
}

/// Mean test MSE of one model per initial-condition count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_ics: usize,
    pub model: String,
    pub train_mse: Vec<f64>,
    pub test_mse: Vec<f64>,
}

impl ScalingRow {
    pub fn mean_test(&self) -> f64 {
        self.test_mse.iter().sum::<f64>() / self.test_mse.len() as f64
    }
    pub fn mean_train(&self) -> f64 {
        self.train_mse.iter().sum::<f64>() / self.train_mse.len() as f64
    }
}

/// Train/test trajectory MSE for both comparison models as the number of
/// training trajectories grows.
///
/// Every (IC count, seed) run draws fresh training and test sets and fresh
/// features, and tunes both models by cross-validation with `method`.
pub fn scaling_experiment(
    system_id: &str,
    ic_counts: &[usize],
    seeds: &[u64],
    method: &SearchMethod,
    grouping: FoldGrouping,
    rollout_tol: (f64, f64),
) -> Result<Vec<ScalingRow>> {
    if ic_counts.is_empty() || seeds.is_empty() {
        return Err(Error::config("need at least one IC count and one seed"));
    }
    let base = ExperimentConfig::preset(system_id)?;
    let mut rows: Vec<ScalingRow> = Vec::new();
    for &n_ics in ic_counts {
        let mut per_model: Vec<ScalingRow> = comparison_kinds(&base.system, 0)
            .iter()
            .map(|k| ScalingRow {
                n_ics,
                model: k.label(),
                train_mse: vec![],
                test_mse: vec![],
            })
            .collect();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = derive_seed(seed, &format!("scaling/{n_ics}"));
            cfg.dataset.n_ics = Some(n_ics);
            let data = build_dataset(&cfg)?;
            let e = &cfg.evaluation;
            let train_ics = training_ics(&cfg)?;
            let test = test_ics(&cfg)?;
            let spec = |x0: &Vec<f64>| {
                TrajectorySpec::new(x0.clone(), e.t_end, e.n_steps)
                    .with_tolerances(rollout_tol.0, rollout_tol.1)
            };
            let roll = |f: &dyn crate::systems::VectorField, ics: &[Vec<f64>]| {
                ics.iter()
                    .map(|x| integrate(f, &spec(x)))
                    .collect::<Result<Vec<_>>>()
            };
            let truth_train = roll(&cfg.system, &train_ics)?;
            let truth_test = roll(&cfg.system, &test)?;
            let cv = CvSettings {
                grouping,
                ..cfg.tuning.cv_settings(cfg.seed)
            };
            let method = match *method {
                SearchMethod::Ga(g) => SearchMethod::Ga(GaConfig {
                    seed: derive_seed(cfg.seed, "search"),
                    ..g
                }),
                m => m,
            };
            let kinds = comparison_kinds(&cfg.system, derive_seed(cfg.seed, "features"));
            for (kind, row) in kinds.iter().zip(per_model.iter_mut()) {
                let (hyper, _) = tune_hyper(
                    &data,
                    kind,
                    HyperValue::TUNE,
                    HyperValue::TUNE,
                    &cv,
                    &cfg.tuning.bounds,
                    &method,
                )?;
                let model = fit(&data, kind, hyper)?;
                row.train_mse.push(metrics::trajectory_mse(
                    &truth_train,
                    &roll(&model, &train_ics)?,
                )?);
                row.test_mse
                    .push(metrics::trajectory_mse(&truth_test, &roll(&model, &test)?)?);
            }
        }
        rows.extend(per_model);
    }
    Ok(rows)
}

/// Clean initial conditions of the configured training trajectories.
pub fn training_ics(cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    match (&cfg.dataset.ics, cfg.dataset.n_ics) {
        (Some(ics), _) => Ok(ics.clone()),
        (None, Some(count)) => {
            let b = cfg.ic_box();
            sample_ics(&b.lower, &b.upper, count, derive_seed(cfg.seed, "ics"))
        }
        (None, None) => Ok(Vec::new()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub mse: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub family: FeatureFamily,
    pub hyper: Hyper,
    pub rows: Vec<SweepRow>,
    /// Trajectory MSE of the exact kernel the features approximate.
    pub exact_mse: f64,
}

/// Trajectory MSE of random-feature models against their exact kernel for a
/// list of feature counts, each over several frequency draws.
#[allow(clippy::too_many_arguments)]
pub fn sweep_features(
    dataset: &Dataset,
    system: &System,
    eval_ics: &[Vec<f64>],
    t_end: f64,
    n_steps: usize,
    family: FeatureFamily,
    hyper: Hyper,
    d_list: &[usize],
    n_seeds: usize,
    master: u64,
) -> Result<SweepResult> {
    if d_list.is_empty() || n_seeds == 0 {
        return Err(Error::config(
            "sweep needs at least one feature count and one seed",
        ));
    }
    let truth = trajectories(system, eval_ics, t_end, n_steps)?;
    let spec = family.exact_kernel(hyper.sigma)?;
    let exact_kind = ModelKind::Exact {
        family: spec.family,
        parity: spec.parity,
    };
    let exact = fit(dataset, &exact_kind, hyper)?;
    let exact_mse =
        metrics::trajectory_mse(&truth, &trajectories(&exact, eval_ics, t_end, n_steps)?)?;
    let mut rows = Vec::with_capacity(d_list.len());
    for &d in d_list {
        let mut mse = Vec::with_capacity(n_seeds);
        for s in 0..n_seeds {
            let kind = ModelKind::Rff {
                family,
                d,
                seed: derive_seed(master, &format!("sweep/{d}/{s}")),
            };
            let model = fit(dataset, &kind, hyper)?;
            mse.push(metrics::trajectory_mse(
                &truth,
                &trajectories(&model, eval_ics, t_end, n_steps)?,
            )?);
        }
        let (mean, var) = metrics::mean_var(&mse);
        rows.push(SweepRow {
            d,
            mean_mse: mean,
            std_mse: var.sqrt(),
            mse,
        });
    }
    Ok(SweepResult {
        family,
        hyper,
        rows,
        exact_mse,
    })
}

/// Feature-count sweep driven by a configuration. The model recipe must be a
/// random-feature one; its family is swept over `d_list`. Unfixed
/// hyperparameters are tuned once with the family's exact kernel, and every
/// model is scored on the evaluation trajectories.
pub fn feature_sweep(
    cfg: &ExperimentConfig,
    d_list: &[usize],
    n_seeds: usize,
) -> Result<SweepResult> {
    let ModelRecipe::Rff { family, .. } = cfg.model.recipe else {
        return Err(Error::config(
            "feature sweep needs a random-feature model recipe",
        ));
    };
    let data = build_dataset(cfg)?;
    let spec = family.exact_kernel(1.0)?;
    let exact_kind = ModelKind::Exact {
        family: spec.family,
        parity: spec.parity,
    };
    let t = &cfg.tuning;
    let tune_data = match t.subsample {
        Some(m) => subsample(&data, m, derive_seed(cfg.seed, "subsample")),
        None => data.clone(),
    };
    let (hyper, _) = tune_hyper(
        &tune_data,
        &exact_kind,
        cfg.model.sigma,
        cfg.model.lambda,
        &t.cv_settings(cfg.seed),
        &t.bounds,
        &t.resolved_method(cfg.seed),
    )?;
    let e = &cfg.evaluation;
    let ics = test_ics(cfg)?;
    sweep_features(
        &data,
        &cfg.system,
        &ics,
        e.t_end,
        e.n_steps,
        family,
        hyper,
        d_list,
        n_seeds,
        cfg.seed,
    )
}

/// Sampling box for odd-error evaluation of a system.
pub fn odd_box(system: &System) -> SampleBox {
    let (lower, upper) = system.state_box();
    SampleBox { lower, upper }
}

/// Whether an exact kernel family and parity is the odd symplectic one.
pub fn is_odd_symplectic(kind: &ModelKind) -> bool {
    match kind {
        ModelKind::Exact { parity, .. } => *parity == Parity::Odd && kind.is_symplectic(),
        ModelKind::Rff { family, .. } => *family == FeatureFamily::OddSymplectic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset("pendulum").unwrap();
        cfg.model.sigma = HyperValue::Fixed(2.0);
        cfg.model.lambda = HyperValue::Fixed(1e-5);
        cfg.evaluation.odd_samples = 200;
        cfg
    }

    #[test]
    fn pendulum_dataset_has_24_rows() {
        let ds = build_dataset(&small_cfg()).unwrap();
        assert_eq!(ds.len(), 24);
        let mut clean = small_cfg();
        clean.dataset.sigma_n = 0.0;
        let ds = build_dataset(&clean).unwrap();
        for (x, y) in ds.xs.iter().zip(&ds.ys) {
            assert_eq!(*y, clean.system.dynamics(x.as_slice()).unwrap());
        }
    }

    #[test]
    fn train_and_evaluate_fixed_hyper() {
        let cfg = small_cfg();
        let ds = build_dataset(&cfg).unwrap();
        let t = train(&cfg, &ds).unwrap();
        assert!(t.tuning.is_none());
        let r = evaluate(&t.model, &cfg).unwrap();
        assert!(r.is_consistent());
        assert!(r.odd_error.mean <= 1e-10);
        assert!(r.true_odd_error.mean <= 1e-12);
        let h = &r.hamiltonian[0];
        assert!((h.truth.mean - 9.81).abs() < 1e-6);
        assert!(h.learned.unwrap().variance < 1e-6);
    }

    #[test]
    fn partial_tuning_holds_fixed_value() {
        let mut cfg = small_cfg();
        cfg.model.lambda = HyperValue::TUNE;
        cfg.tuning.method = SearchMethod::Random { trials: 8, seed: 0 };
        let ds = build_dataset(&cfg).unwrap();
        let t = train(&cfg, &ds).unwrap();
        let rec = t.tuning.unwrap();
        assert_eq!(rec.sigma, 2.0);
        assert!(HyperBounds::default().contains(rec.sigma, rec.lambda));
        assert_eq!(t.model.hyper.sigma, 2.0);
    }

    #[test]
    fn subsample_is_deterministic_subset() {
        let mut cfg = ExperimentConfig::sweep_preset();
        cfg.dataset.points = Some(100);
        let ds = build_dataset(&cfg).unwrap();
        let a = subsample(&ds, 30, 5);
        assert_eq!(a.len(), 30);
        assert_eq!(a, subsample(&ds, 30, 5));
        assert_eq!(subsample(&ds, 500, 5).len(), 100);
    }
}

//! Hyperparameter selection by k-fold cross-validation.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::model::{fit_points, Hyper, LearnedModel, ModelKind};
use crate::sim::{Dataset, TrajectorySpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub sigma: (f64, f64),
    pub lambda: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            sigma: (1.0, 30.0),
            lambda: (1e-8, 1e-1),
        }
    }
}

impl HyperBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi;
        if ok(self.sigma) && ok(self.lambda) {
            Ok(())
        } else {
            Err(Error::config(format!(
                "invalid hyperparameter bounds {self:?}"
            )))
        }
    }

    fn log_lambda(&self) -> (f64, f64) {
        (self.lambda.0.log10(), self.lambda.1.log10())
    }

    pub fn contains(&self, sigma: f64, lambda: f64) -> bool {
        (self.sigma.0..=self.sigma.1).contains(&sigma)
            && (self.lambda.0..=self.lambda.1).contains(&lambda)
    }
}

/// What the cross-validation error measures on held-out samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvScoring {
    /// `|f(x) - y|^2` on each held-out sample.
    #[default]
    Derivative,
    /// Squared error of a one-interval rollout from a held-out sample to its
    /// successor on the same trajectory.
    OneStepRollout,
}

/// How samples are assigned to folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldGrouping {
    /// Each sample independently.
    #[default]
    Sample,
    /// Whole trajectories, so correlated neighbours never straddle folds.
    Trajectory,
}

/// Cross-validation settings shared by the search strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSettings {
    pub k: usize,
    pub scoring: CvScoring,
    pub grouping: FoldGrouping,
    /// Fold-shuffling seed.
    pub seed: u64,
}

impl CvSettings {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            scoring: CvScoring::default(),
            grouping: FoldGrouping::default(),
            seed,
        }
    }
}

/// k-fold cross-validation error as a function of `(sigma, lambda)`.
pub struct CrossValidation<'a> {
    dataset: &'a Dataset,
    kind: ModelKind,
    folds: Vec<Vec<usize>>,
    scoring: CvScoring,
}

impl<'a> CrossValidation<'a> {
    pub fn new(
        dataset: &'a Dataset,
        k: usize,
        kind: ModelKind,
        seed: u64,
        scoring: CvScoring,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::input(format!("need at least 2 folds, got {k}")));
        }
        if dataset.len() < k {
            return Err(Error::input(format!(
                "{} samples cannot fill {k} folds",
                dataset.len()
            )));
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut folds = vec![Vec::new(); k];
        for (pos, idx) in order.into_iter().enumerate() {
            folds[pos % k].push(idx);
        }
        folds.iter_mut().for_each(|f| f.sort_unstable());
        Ok(Self {
            dataset,
            kind,
            folds,
            scoring,
        })
    }

    /// Folds made of whole trajectories, dealt round-robin after shuffling.
    pub fn grouped(
        dataset: &'a Dataset,
        k: usize,
        kind: ModelKind,
        seed: u64,
        scoring: CvScoring,
    ) -> Result<Self> {
        let mut ids: Vec<usize> = dataset.traj_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        if k < 2 || ids.len() < k {
            return Err(Error::input(format!(
                "{} trajectories cannot fill {k} folds",
                ids.len()
            )));
        }
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let slot: std::collections::HashMap<usize, usize> = ids
            .iter()
            .enumerate()
            .map(|(pos, id)| (*id, pos % k))
            .collect();
        let mut folds = vec![Vec::new(); k];
        for (i, id) in dataset.traj_ids.iter().enumerate() {
            folds[slot[id]].push(i);
        }
        Ok(Self {
            dataset,
            kind,
            folds,
            scoring,
        })
    }

    pub fn with_settings(dataset: &'a Dataset, kind: ModelKind, cv: &CvSettings) -> Result<Self> {
        match cv.grouping {
            FoldGrouping::Sample => Self::new(dataset, cv.k, kind, cv.seed, cv.scoring),
            FoldGrouping::Trajectory => Self::grouped(dataset, cv.k, kind, cv.seed, cv.scoring),
        }
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    /// Training indices for `fold`, in ascending order.
    fn complement(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }

    fn gather(&self, idx: &[usize]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        (
            idx.iter().map(|&i| self.dataset.xs[i].clone()).collect(),
            idx.iter().map(|&i| self.dataset.ys[i].clone()).collect(),
        )
    }

    /// Mean over folds of the held-out mean squared error.
    pub fn evaluate(&self, sigma: f64, lambda: f64) -> Result<f64> {
        let hyper = Hyper { sigma, lambda };
        let models = self.fold_models(hyper)?;
        let mut total = 0.0;
        for (fold, model) in self.folds.iter().zip(&models) {
            total += self.score(model, fold)?;
        }
        Ok(total / self.folds.len() as f64)
    }

    fn fold_models(&self, hyper: Hyper) -> Result<Vec<LearnedModel>> {
        if let ModelKind::Rff { family, d, seed } = self.kind {
            let map = FeatureMap::new(family, hyper.sigma, d, self.dataset.dim(), seed)?;
            let smallest_train =
                self.dataset.len() - self.folds.iter().map(Vec::len).max().unwrap_or(0);
            if smallest_train * map.n() >= map.feature_dim().min(map.frequencies.nrows() * 2) {
                return self.fold_models_from_stats(&map, hyper);
            }
        }
        (0..self.folds.len())
            .map(|i| {
                let (xs, ys) = self.gather(&self.complement(i));
                fit_points(&xs, &ys, &self.kind, hyper)
            })
            .collect()
    }

    /// Shares normal-equation statistics between folds: each training set's
    /// statistics are the total minus the held-out fold's.
    fn fold_models_from_stats(&self, map: &FeatureMap, hyper: Hyper) -> Result<Vec<LearnedModel>> {
        let per_fold: Vec<_> = self
            .folds
            .iter()
            .map(|f| {
                let (xs, ys) = self.gather(f);
                map.normal_stats(&xs, &ys)
            })
            .collect();
        let total = per_fold[1..]
            .iter()
            .fold(per_fold[0].clone(), |acc, s| acc.plus(s));
        per_fold
            .iter()
            .map(|held_out| {
                let stats = total.minus(held_out);
                let (alpha, info) = map.solve_stats(&stats, hyper.lambda)?;
                Ok(LearnedModel {
                    variant: crate::model::Variant::Rff(crate::features::RffModel {
                        map: map.clone(),
                        alpha,
                        lambda: hyper.lambda,
                        meta: crate::features::TrainingMeta {
                            n_samples: stats.count,
                            ..Default::default()
                        },
                        solve_residual: info.relative_residual,
                    }),
                    hyper,
                    provenance: Default::default(),
                })
            })
            .collect()
    }

    fn score(&self, model: &LearnedModel, fold: &[usize]) -> Result<f64> {
        match self.scoring {
            CvScoring::Derivative => {
                let mut total = 0.0;
                for &i in fold {
                    let pred = model.predict(self.dataset.xs[i].as_slice())?;
                    total += (pred - &self.dataset.ys[i]).norm_squared();
                }
                Ok(total / fold.len() as f64)
            }
            CvScoring::OneStepRollout => {
                let ds = self.dataset;
                let mut total = 0.0;
                let mut count = 0usize;
                for &i in fold {
                    let j = i + 1;
                    if j >= ds.len() || ds.traj_ids[j] != ds.traj_ids[i] {
                        continue;
                    }
                    let dt = ds.times[j] - ds.times[i];
                    if dt <= 0.0 {
                        continue;
                    }
                    let spec = TrajectorySpec::new(ds.xs[i].as_slice().to_vec(), dt, 2)
                        .with_tolerances(1e-8, 1e-10);
                    let tr = model.rollout_with(&spec)?;
                    total += (&tr.states[1] - &ds.xs[j]).norm_squared();
                    count += 1;
                }
                Ok(if count == 0 {
                    0.0
                } else {
                    total / count as f64
                })
            }
        }
    }
}

/// Convenience wrapper: k-fold CV error at one hyperparameter pair.
pub fn cv_objective(
    sigma: f64,
    lambda: f64,
    dataset: &Dataset,
    k: usize,
    kind: &ModelKind,
    seed: u64,
) -> Result<f64> {
    CrossValidation::new(dataset, k, *kind, seed, CvScoring::Derivative)?.evaluate(sigma, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    /// BLX-alpha blend width.
    pub blend_alpha: f64,
    /// Mutation standard deviation as a fraction of each coordinate's range.
    pub mutation_std: f64,
    pub elitism: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 24,
            generations: 40,
            tournament: 3,
            crossover_rate: 0.9,
            blend_alpha: 0.5,
            mutation_std: 0.1,
            elitism: 1,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if self.population < 4
            || self.tournament == 0
            || self.elitism >= self.population
            || !rate_ok(self.crossover_rate)
            || !rate_ok(self.mutation_std)
            || !(self.blend_alpha >= 0.0)
        {
            return Err(Error::config(format!("invalid GA configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sigma: f64,
    pub lambda: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub sigma: f64,
    pub lambda: f64,
    pub best: f64,
    /// Best objective after each generation (one entry for random search).
    pub history: Vec<f64>,
    /// Every evaluated candidate in evaluation order.
    pub evaluated: Vec<Candidate>,
}

fn score<F>(objective: &mut F, sigma: f64, lambda: f64, log: &mut Vec<Candidate>) -> f64
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let value = match objective(sigma, lambda) {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    };
    log.push(Candidate {
        sigma,
        lambda,
        value,
    });
    value
}

/// Real-coded genetic algorithm over `(sigma, log10 lambda)`.
///
/// Tournament selection, BLX-alpha crossover, Gaussian mutation whose width
/// shrinks linearly to zero over the run, and elitism.
pub fn ga_search<F>(
    mut objective: F,
    bounds: &HyperBounds,
    config: &GaConfig,
) -> Result<SearchResult>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    bounds.validate()?;
    config.validate()?;
    let lo = [bounds.sigma.0, bounds.log_lambda().0];
    let hi = [bounds.sigma.1, bounds.log_lambda().1];
    let clamp = |g: [f64; 2]| [g[0].clamp(lo[0], hi[0]), g[1].clamp(lo[1], hi[1])];
    let decode = |g: &[f64; 2]| {
        (
            g[0],
            10f64.powf(g[1]).clamp(bounds.lambda.0, bounds.lambda.1),
        )
    };

    let mut log = Vec::new();
    let mut rng = crate::sim::stream_rng(config.seed, 0);
    let mut pop: Vec<([f64; 2], f64)> = (0..config.population)
        .map(|_| {
            let g = [
                rng.random_range(lo[0]..=hi[0]),
                rng.random_range(lo[1]..=hi[1]),
            ];
            let (s, l) = decode(&g);
            (g, score(&mut objective, s, l, &mut log))
        })
        .collect();
    let by_value = |a: &([f64; 2], f64), b: &([f64; 2], f64)| a.1.total_cmp(&b.1);
    pop.sort_by(by_value);
    let mut history = vec![pop[0].1];

    for gen in 0..config.generations {
        let mut rng = crate::sim::stream_rng(config.seed, gen as u64 + 1);
        let shrink = 1.0 - gen as f64 / config.generations as f64;
        let mut next: Vec<([f64; 2], f64)> = pop[..config.elitism].to_vec();
        let tournament = |rng: &mut ChaCha8Rng, pop: &[([f64; 2], f64)]| {
            (0..config.tournament)
                .map(|_| rng.random_range(0..pop.len()))
                .min_by(|a, b| pop[*a].1.total_cmp(&pop[*b].1))
                .map(|i| pop[i].0)
                .expect("tournament size is positive")
        };
        while next.len() < config.population {
            let a = tournament(&mut rng, &pop);
            let b = tournament(&mut rng, &pop);
            let mut child = a;
            if rng.random::<f64>() < config.crossover_rate {
                for k in 0..2 {
                    let (mn, mx) = (a[k].min(b[k]), a[k].max(b[k]));
                    let span = mx - mn;
                    let (l, h) = (
                        mn - config.blend_alpha * span,
                        mx + config.blend_alpha * span,
                    );
                    child[k] = if h > l { rng.random_range(l..=h) } else { mn };
                }
            }
            for k in 0..2 {
                let std = config.mutation_std * (hi[k] - lo[k]) * shrink;
                if std > 0.0 {
                    let noise = Normal::new(0.0, std).expect("positive std");
                    child[k] += noise.sample(&mut rng);
                }
            }
            let child = clamp(child);
            let (s, l) = decode(&child);
            next.push((child, score(&mut objective, s, l, &mut log)));
        }
        next.sort_by(by_value);
        pop = next;
        history.push(pop[0].1);
    }
    let (sigma, lambda) = decode(&pop[0].0);
    Ok(SearchResult {
        sigma,
        lambda,
        best: pop[0].1,
        history,
        evaluated: log,
    })
}

/// Best of `n_trials` draws, uniform in `sigma` and log-uniform in `lambda`.
pub fn random_search<F>(
    mut objective: F,
    bounds: &HyperBounds,
    n_trials: usize,
    seed: u64,
) -> Result<SearchResult>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    bounds.validate()?;
    if n_trials == 0 {
        return Err(Error::config("random search needs at least one trial"));
    }
    let (ll, lh) = bounds.log_lambda();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let sigma = rng.random_range(bounds.sigma.0..=bounds.sigma.1);
        let lambda = 10f64
            .powf(rng.random_range(ll..=lh))
            .clamp(bounds.lambda.0, bounds.lambda.1);
        score(&mut objective, sigma, lambda, &mut log);
    }
    let best = log
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .cloned()
        .expect("at least one trial");
    Ok(SearchResult {
        sigma: best.sigma,
        lambda: best.lambda,
        best: best.value,
        history: vec![best.value],
        evaluated: log,
    })
}

/// Search strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SearchMethod {
    Ga(GaConfig),
    Random { trials: usize, seed: u64 },
}

impl Default for SearchMethod {
    fn default() -> Self {
        SearchMethod::Ga(GaConfig::default())
    }
}

/// Everything needed to reproduce a tuning run, emitted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub bounds: HyperBounds,
    pub method: SearchMethod,
    pub cv: CvSettings,
    pub kind: ModelKind,
    pub sigma: f64,
    pub lambda: f64,
    pub best: f64,
    pub history: Vec<f64>,
}

/// Tunes `(sigma, lambda)` for `kind` on `dataset` by k-fold CV.
pub fn tune(
    dataset: &Dataset,
    kind: &ModelKind,
    cv: &CvSettings,
    bounds: &HyperBounds,
    method: &SearchMethod,
) -> Result<TuningRecord> {
    let folds = CrossValidation::with_settings(dataset, *kind, cv)?;
    let objective = |s: f64, l: f64| folds.evaluate(s, l);
    let result = match method {
        SearchMethod::Ga(cfg) => ga_search(objective, bounds, cfg)?,
        SearchMethod::Random { trials, seed } => random_search(objective, bounds, *trials, *seed)?,
    };
    Ok(TuningRecord {
        bounds: *bounds,
        method: *method,
        cv: *cv,
        kind: *kind,
        sigma: result.sigma,
        lambda: result.lambda,
        best: result.best,
        history: result.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureFamily;
    use crate::kernels::{KernelFamily, Parity};

    fn bowl(s: f64, l: f64) -> Result<f64> {
        Ok((s - 5.0).powi(2) + (l.log10() + 4.0).powi(2))
    }

    #[test]
    fn ga_finds_bowl_minimum() {
        let cfg = GaConfig {
            generations: 30,
            seed: 17,
            ..Default::default()
        };
        let r = ga_search(bowl, &HyperBounds::default(), &cfg).unwrap();
        assert!((r.sigma - 5.0).abs() <= 0.1, "sigma {}", r.sigma);
        assert!((r.lambda.log10() + 4.0).abs() <= 0.1, "lambda {}", r.lambda);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        let b = HyperBounds::default();
        assert!(r.evaluated.iter().all(|c| b.contains(c.sigma, c.lambda)));
        assert_eq!(r.evaluated.len(), 24 + 30 * 23);
    }

    #[test]
    fn ga_survives_failing_candidates() {
        let flaky = |s: f64, l: f64| {
            if s > 15.0 {
                Err(Error::numerical("boom", 0.0))
            } else {
                bowl(s, l)
            }
        };
        let cfg = GaConfig {
            generations: 10,
            ..Default::default()
        };
        let r = ga_search(flaky, &HyperBounds::default(), &cfg).unwrap();
        assert!(r.best.is_finite());
        assert!(r.evaluated.iter().any(|c| c.value.is_infinite()));
    }

    #[test]
    fn ga_rejects_bad_config() {
        let cfg = GaConfig {
            population: 3,
            ..Default::default()
        };
        assert!(ga_search(bowl, &HyperBounds::default(), &cfg).is_err());
    }

    #[test]
    fn random_search_behaviour() {
        let b = HyperBounds::default();
        let one = random_search(bowl, &b, 1, 3).unwrap();
        assert_eq!(one.evaluated.len(), 1);
        assert_eq!(one.sigma, one.evaluated[0].sigma);
        let r = random_search(bowl, &b, 500, 3).unwrap();
        assert!(r.best <= 0.25, "best {}", r.best);
        assert_eq!(r, random_search(bowl, &b, 500, 3).unwrap());
        assert!(random_search(bowl, &b, 0, 3).is_err());
    }

    fn tiny_dataset(count: usize) -> Dataset {
        let xs: Vec<_> = (0..count)
            .map(|i| DVector::from_column_slice(&[(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]))
            .collect();
        let ys = xs
            .iter()
            .map(|x| DVector::from_column_slice(&[x[1], -x[0].sin()]))
            .collect();
        Dataset::from_samples(xs, ys).unwrap()
    }

    #[test]
    fn folds_partition_samples() {
        let ds = tiny_dataset(23);
        let kind = ModelKind::Exact {
            family: KernelFamily::Symplectic,
            parity: Parity::Odd,
        };
        let cv = CrossValidation::new(&ds, 5, kind, 4, CvScoring::Derivative).unwrap();
        let mut all: Vec<usize> = cv.folds().iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(cv.folds().iter().all(|f| f.len() >= 4));
        assert!(CrossValidation::new(&ds, 1, kind, 4, CvScoring::Derivative).is_err());
        assert!(CrossValidation::new(&tiny_dataset(3), 5, kind, 4, CvScoring::Derivative).is_err());
    }

    #[test]
    fn grouped_folds_keep_trajectories_whole() {
        let sys = crate::systems::System::from_id("pendulum").unwrap();
        let ics: Vec<Vec<f64>> = (0..7).map(|i| vec![0.2 * i as f64 - 0.5, 0.3]).collect();
        let ds = crate::sim::generate_dataset(&crate::sim::DatasetRecipe {
            system: &sys,
            ics: &ics,
            t_end: 0.5,
            n_steps: 4,
            sigma_n: 0.0,
            seed: 1,
            noise_mode: Default::default(),
        })
        .unwrap();
        let kind = ModelKind::Exact {
            family: KernelFamily::Symplectic,
            parity: Parity::Odd,
        };
        let cv = CrossValidation::grouped(&ds, 3, kind, 2, CvScoring::Derivative).unwrap();
        let mut all: Vec<usize> = cv.folds().iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        for fold in cv.folds() {
            let mut ids: Vec<usize> = fold.iter().map(|&i| ds.traj_ids[i]).collect();
            ids.dedup();
            assert_eq!(fold.len(), ids.len() * 4);
        }
        assert!(CrossValidation::grouped(&ds, 8, kind, 2, CvScoring::Derivative).is_err());
    }

    #[test]
    fn objective_is_deterministic() {
        let ds = tiny_dataset(30);
        let kind = ModelKind::Rff {
            family: FeatureFamily::OddSymplectic,
            d: 50,
            seed: 2,
        };
        let a = cv_objective(2.0, 1e-4, &ds, 5, &kind, 1).unwrap();
        let b = cv_objective(2.0, 1e-4, &ds, 5, &kind, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stats_path_matches_direct_refits() {
        let ds = tiny_dataset(60);
        let kind = ModelKind::Rff {
            family: FeatureFamily::OddSymplectic,
            d: 20,
            seed: 2,
        };
        let cv = CrossValidation::new(&ds, 4, kind, 1, CvScoring::Derivative).unwrap();
        let fast = cv.evaluate(1.5, 1e-3).unwrap();
        let mut slow = 0.0;
        for (i, fold) in cv.folds().iter().enumerate() {
            let (xs, ys) = cv.gather(&cv.complement(i));
            let m = fit_points(
                &xs,
                &ys,
                &kind,
                Hyper {
                    sigma: 1.5,
                    lambda: 1e-3,
                },
            )
            .unwrap();
            slow += cv.score(&m, fold).unwrap();
        }
        slow /= 4.0;
        assert!(
            (fast - slow).abs() <= 1e-9 * slow.max(1e-12),
            "{fast} vs {slow}"
        );
    }

    #[test]
    fn one_step_rollout_scoring_runs() {
        let sys = crate::systems::System::from_id("pendulum").unwrap();
        let ics = vec![vec![1.0, 0.0], vec![2.0, 0.5], vec![-1.0, 1.0]];
        let ds = crate::sim::generate_dataset(&crate::sim::DatasetRecipe {
            system: &sys,
            ics: &ics,
            t_end: 0.7,
            n_steps: 8,
            sigma_n: 0.0,
            seed: 1,
            noise_mode: Default::default(),
        })
        .unwrap();
        let kind = ModelKind::Rff {
            family: FeatureFamily::OddSymplectic,
            d: 100,
            seed: 2,
        };
        let cv = CrossValidation::new(&ds, 3, kind, 1, CvScoring::OneStepRollout).unwrap();
        let v = cv.evaluate(2.0, 1e-6).unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }
}

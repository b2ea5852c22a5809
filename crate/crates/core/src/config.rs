//! Experiment configuration: one JSON or TOML document drives a whole run.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureFamily;
use crate::kernels::{KernelFamily, Parity};
use crate::metrics::SampleBox;
use crate::model::ModelKind;
use crate::sim::NoiseMode;
use crate::systems::System;
use crate::tuning::{CvScoring, CvSettings, FoldGrouping, GaConfig, HyperBounds, SearchMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keyword {
    Tune,
}

/// A hyperparameter given either as a number or as the string `"tune"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Fixed(f64),
    Keyword(Keyword),
}

impl HyperValue {
    pub const TUNE: HyperValue = HyperValue::Keyword(Keyword::Tune);

    pub fn fixed(&self) -> Option<f64> {
        match self {
            HyperValue::Fixed(v) => Some(*v),
            HyperValue::Keyword(_) => None,
        }
    }
}

/// Independent sub-seed for the stream named `label`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

fn system_or_id<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<System, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Id(String),
        Full(System),
    }
    match Repr::deserialize(de)? {
        Repr::Id(id) => System::from_id(&id).map_err(serde::de::Error::custom),
        Repr::Full(s) => Ok(s),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Explicit initial conditions; overrides sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ics: Option<Vec<Vec<f64>>>,
    /// Number of initial conditions drawn uniformly from `ic_box`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ics: Option<usize>,
    /// Number of scattered states drawn from `ic_box` instead of trajectories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Defaults to the system's state box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ic_box: Option<SampleBox>,
    pub t_end: f64,
    /// Samples per trajectory, including `t = 0`.
    pub n_steps: usize,
    pub sigma_n: f64,
    #[serde(default)]
    pub noise_mode: NoiseMode,
}

/// Model recipe; the feature seed defaults to one derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ModelRecipe {
    Exact {
        family: KernelFamily,
        #[serde(default)]
        parity: Parity,
    },
    Rff {
        family: FeatureFamily,
        d: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl ModelRecipe {
    pub fn resolve(&self, master: u64) -> ModelKind {
        match *self {
            ModelRecipe::Exact { family, parity } => ModelKind::Exact { family, parity },
            ModelRecipe::Rff { family, d, seed } => ModelKind::Rff {
                family,
                d,
                seed: seed.unwrap_or_else(|| derive_seed(master, "features")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub recipe: ModelRecipe,
    pub sigma: HyperValue,
    pub lambda: HyperValue,
}

impl ModelConfig {
    pub fn needs_tuning(&self) -> bool {
        self.sigma.fixed().is_none() || self.lambda.fixed().is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub scoring: CvScoring,
    #[serde(default)]
    pub grouping: FoldGrouping,
    #[serde(default)]
    pub bounds: HyperBounds,
    #[serde(default)]
    pub method: SearchMethod,
    /// Tune on at most this many samples (drawn by seed), then fit on all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<usize>,
}

fn default_k() -> usize {
    5
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            scoring: CvScoring::default(),
            grouping: FoldGrouping::default(),
            bounds: HyperBounds::default(),
            method: SearchMethod::default(),
            subsample: None,
        }
    }
}

impl TuningConfig {
    /// Cross-validation settings with the fold seed derived from `master`.
    pub fn cv_settings(&self, master: u64) -> CvSettings {
        CvSettings {
            k: self.k,
            scoring: self.scoring,
            grouping: self.grouping,
            seed: derive_seed(master, "folds"),
        }
    }

    /// Search method with its seed replaced by one derived from `master`.
    pub fn resolved_method(&self, master: u64) -> SearchMethod {
        let seed = derive_seed(master, "search");
        match self.method {
            SearchMethod::Ga(cfg) => SearchMethod::Ga(GaConfig { seed, ..cfg }),
            SearchMethod::Random { trials, .. } => SearchMethod::Random { trials, seed },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Explicit test initial conditions; otherwise `n_test` drawn from the box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_ics: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_box: Option<SampleBox>,
    pub t_end: f64,
    pub n_steps: usize,
    #[serde(default = "default_odd_samples")]
    pub odd_samples: usize,
    #[serde(default = "default_symplecticity_points")]
    pub symplecticity_points: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

fn default_n_test() -> usize {
    10
}
fn default_odd_samples() -> usize {
    10_000
}
fn default_symplecticity_points() -> usize {
    10
}
fn default_fd_step() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random quantity is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(deserialize_with = "system_or_id")]
    pub system: System,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
    pub evaluation: EvaluationConfig,
}

impl ExperimentConfig {
    /// The benchmark recipe for a system with the structured model and both
    /// hyperparameters tuned.
    pub fn preset(system_id: &str) -> Result<Self> {
        let system = System::from_id(system_id)?;
        let odd = |d| ModelConfig {
            recipe: ModelRecipe::Rff {
                family: FeatureFamily::OddSymplectic,
                d,
                seed: None,
            },
            sigma: HyperValue::TUNE,
            lambda: HyperValue::TUNE,
        };
        let cfg = match system {
            System::Pendulum(_) => ExperimentConfig {
                seed: 0,
                system,
                dataset: DatasetConfig {
                    ics: Some(vec![
                        vec![2.0 * PI / 5.0, 0.0],
                        vec![4.0 * PI / 5.0, 0.0],
                        vec![19.0 * PI / 20.0, -4.0],
                    ]),
                    n_ics: None,
                    points: None,
                    ic_box: None,
                    t_end: 0.7,
                    n_steps: 8,
                    sigma_n: 0.01,
                    noise_mode: NoiseMode::default(),
                },
                model: odd(400),
                tuning: TuningConfig::default(),
                evaluation: EvaluationConfig {
                    test_ics: Some(vec![vec![PI / 2.0, 0.0]]),
                    n_test: 1,
                    test_box: None,
                    t_end: 2.0,
                    n_steps: 201,
                    odd_samples: default_odd_samples(),
                    symplecticity_points: default_symplecticity_points(),
                    fd_step: default_fd_step(),
                },
            },
            System::CartPole(_) | System::TwoLink(_) => ExperimentConfig {
                seed: 0,
                system,
                dataset: DatasetConfig {
                    ics: None,
                    n_ics: Some(15),
                    points: None,
                    ic_box: None,
                    t_end: 2.0,
                    n_steps: 30,
                    sigma_n: 0.01,
                    noise_mode: NoiseMode::default(),
                },
                model: odd(if system_id == "twolink" { 800 } else { 400 }),
                tuning: TuningConfig::default(),
                evaluation: EvaluationConfig {
                    test_ics: None,
                    n_test: 10,
                    test_box: None,
                    t_end: 2.0,
                    n_steps: 30,
                    odd_samples: default_odd_samples(),
                    symplecticity_points: default_symplecticity_points(),
                    fd_step: default_fd_step(),
                },
            },
        };
        Ok(cfg)
    }

    /// Feature-count sweep recipe: scattered pendulum states for training,
    /// the three pendulum training trajectories for scoring, and a small GA
    /// run on a subsample with the exact kernel.
    pub fn sweep_preset() -> Self {
        let mut cfg = Self::preset("pendulum").expect("pendulum preset");
        let ics = cfg.dataset.ics.take();
        cfg.dataset.points = Some(2000);
        cfg.tuning.subsample = Some(400);
        cfg.tuning.method = SearchMethod::Ga(GaConfig {
            population: 12,
            generations: 10,
            ..GaConfig::default()
        });
        cfg.evaluation.test_ics = ics;
        cfg.evaluation.n_test = 3;
        cfg.evaluation.t_end = cfg.dataset.t_end;
        cfg.evaluation.n_steps = cfg.dataset.n_steps;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let n = self.system.state_dim();
        let d = &self.dataset;
        if d.ics.is_none() && d.n_ics.is_none() && d.points.is_none() {
            return Err(Error::config("dataset needs `ics`, `n_ics` or `points`"));
        }
        if let Some(ics) = &d.ics {
            if ics.is_empty() || ics.iter().any(|x| x.len() != n) {
                return Err(Error::config(format!(
                    "initial conditions must be nonempty with dimension {n}"
                )));
            }
        }
        for b in [&d.ic_box, &self.evaluation.test_box].into_iter().flatten() {
            if b.dim() != n {
                return Err(Error::config(format!(
                    "sampling box must have dimension {n}"
                )));
            }
        }
        if !(d.t_end > 0.0) || d.n_steps == 0 || !(d.sigma_n >= 0.0) {
            return Err(Error::config(
                "dataset needs t_end > 0, n_steps >= 1 and sigma_n >= 0",
            ));
        }
        let e = &self.evaluation;
        if !(e.t_end > 0.0) || e.n_steps < 2 {
            return Err(Error::config("evaluation needs t_end > 0 and n_steps >= 2"));
        }
        if let Some(ics) = &e.test_ics {
            if ics.is_empty() || ics.iter().any(|x| x.len() != n) {
                return Err(Error::config(format!(
                    "test initial conditions must have dimension {n}"
                )));
            }
        }
        for v in [self.model.sigma, self.model.lambda] {
            if let Some(x) = v.fixed() {
                if !(x.is_finite() && x > 0.0) {
                    return Err(Error::config(format!(
                        "hyperparameters must be positive, got {x}"
                    )));
                }
            }
        }
        if let ModelRecipe::Rff { d, .. } = self.model.recipe {
            if d == 0 {
                return Err(Error::config("feature count must be positive"));
            }
        }
        if self.tuning.k < 2 {
            return Err(Error::config("cross-validation needs k >= 2"));
        }
        self.tuning.bounds.validate()?;
        if let SearchMethod::Ga(g) = self.tuning.method {
            g.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.toml` file as TOML and anything else as JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Digest of the canonical JSON form.
    pub fn digest(&self) -> String {
        crate::io::digest(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    pub fn model_kind(&self) -> ModelKind {
        self.model.recipe.resolve(self.seed)
    }

    pub fn ic_box(&self) -> SampleBox {
        self.dataset.ic_box.clone().unwrap_or_else(|| {
            let (lo, hi) = self.system.state_box();
            SampleBox {
                lower: lo,
                upper: hi,
            }
        })
    }

    pub fn test_box(&self) -> SampleBox {
        self.evaluation
            .test_box
            .clone()
            .unwrap_or_else(|| self.ic_box())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_roundtrip() {
        for id in ["pendulum", "cartpole", "twolink"] {
            let cfg = ExperimentConfig::preset(id).unwrap();
            cfg.validate().unwrap();
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
            let t = toml::to_string(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_toml(&t).unwrap(), cfg);
        }
    }

    #[test]
    fn hyper_values_parse() {
        let v: HyperValue = serde_json::from_str("\"tune\"").unwrap();
        assert_eq!(v, HyperValue::TUNE);
        let v: HyperValue = serde_json::from_str("2.5").unwrap();
        assert_eq!(v.fixed(), Some(2.5));
        assert!(serde_json::from_str::<HyperValue>("\"maybe\"").is_err());
    }

    #[test]
    fn minimal_toml_with_system_id() {
        let text = r#"
            seed = 7
            system = "cartpole"
            [dataset]
            n_ics = 3
            t_end = 1.0
            n_steps = 5
            sigma_n = 0.0
            [model]
            variant = "exact"
            family = "symplectic"
            parity = "odd"
            sigma = 3.0
            lambda = "tune"
            [evaluation]
            t_end = 1.0
            n_steps = 5
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.system.id(), "cartpole");
        assert!(cfg.model.needs_tuning());
        assert_eq!(cfg.tuning.k, 5);
        assert_eq!(cfg.evaluation.odd_samples, 10_000);
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ExperimentConfig::preset("pendulum").unwrap();
        cfg.dataset.ics = Some(vec![vec![1.0, 2.0, 3.0]]);
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::preset("pendulum").unwrap();
        cfg.model.sigma = HyperValue::Fixed(-1.0);
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_json("{\"system\": \"rocket\"}").is_err());
    }

    #[test]
    fn seeds_are_derived_and_distinct() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        let mut cfg = ExperimentConfig::preset("pendulum").unwrap();
        let a = cfg.model_kind();
        cfg.seed = 1;
        assert_ne!(a, cfg.model_kind());
    }
}

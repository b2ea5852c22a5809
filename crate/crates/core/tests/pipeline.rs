use std::f64::consts::PI;

use hamkernel::config::{ExperimentConfig, HyperValue, ModelRecipe};
use hamkernel::experiments::{build_dataset, evaluate, feature_sweep, test_ics, train};
use hamkernel::features::FeatureFamily;
use hamkernel::io;
use hamkernel::metrics::{odd_error, SampleBox};
use hamkernel::tuning::SearchMethod;

fn fixed(mut cfg: ExperimentConfig, sigma: f64, lambda: f64) -> ExperimentConfig {
    cfg.model.sigma = HyperValue::Fixed(sigma);
    cfg.model.lambda = HyperValue::Fixed(lambda);
    cfg
}

#[test]
fn pendulum_recipe_end_to_end() {
    let cfg = fixed(ExperimentConfig::preset("pendulum").unwrap(), 2.0, 1e-6);
    let data = build_dataset(&cfg).unwrap();
    assert_eq!(data.len(), 24);
    assert_eq!(
        data.meta.config_digest.as_deref(),
        Some(cfg.digest().as_str())
    );

    let model = train(&cfg, &data).unwrap().model;
    assert!(model.solve_residual() <= 1e-10);

    let report = evaluate(&model, &cfg).unwrap();
    assert!(report.is_consistent());
    assert!(report.odd_error.mean <= 1e-10);
    let h = &report.hamiltonian[0];
    assert!((h.truth.mean - 9.81).abs() <= 1e-6);
    assert!(h.offset.unwrap().variance <= 1e-6);
    assert!(report.symplecticity.iter().all(|r| *r <= 1e-4));
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixed(ExperimentConfig::preset("pendulum").unwrap(), 2.0, 1e-6);
    let data = build_dataset(&cfg).unwrap();
    let data_path = dir.path().join("data.csv");
    io::write_dataset(&data_path, &data).unwrap();
    assert_eq!(io::read_dataset(&data_path).unwrap(), data);

    let model = train(&cfg, &data).unwrap().model;
    let model_path = dir.path().join("model.json");
    io::write_model(&model_path, &model, None).unwrap();
    let back = io::read_model(&model_path).unwrap();
    for k in 0..100 {
        let x = [-PI + 2.0 * PI * k as f64 / 99.0, 3.0 - 0.06 * k as f64];
        assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
    }
    let b = SampleBox::new(vec![-PI, -8.0], vec![PI, 8.0]).unwrap();
    assert!(odd_error(&back, &b, 1000, 3).unwrap().0 <= 1e-10);

    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, toml::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&cfg_path).unwrap(), cfg);
}

#[test]
fn same_seed_same_bytes() {
    let cfg = fixed(ExperimentConfig::preset("cartpole").unwrap(), 3.0, 1e-5);
    let a = io::dataset_csv(&build_dataset(&cfg).unwrap()).unwrap();
    let b = io::dataset_csv(&build_dataset(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(a, io::dataset_csv(&build_dataset(&other).unwrap()).unwrap());
    assert_ne!(test_ics(&cfg).unwrap(), test_ics(&other).unwrap());
}

#[test]
fn tuned_training_records_search() {
    let mut cfg = ExperimentConfig::preset("pendulum").unwrap();
    cfg.tuning.method = SearchMethod::Random { trials: 6, seed: 0 };
    let data = build_dataset(&cfg).unwrap();
    let trained = train(&cfg, &data).unwrap();
    let rec = trained.tuning.expect("tuning record");
    assert_eq!(rec.bounds.sigma, (1.0, 30.0));
    assert_eq!(rec.bounds.lambda, (1e-8, 1e-1));
    assert!(rec
        .bounds
        .contains(trained.model.hyper.sigma, trained.model.hyper.lambda));
    assert_eq!(rec.history, vec![rec.best]);
}

#[test]
fn small_sweep_converges_towards_exact() {
    let mut cfg = fixed(ExperimentConfig::sweep_preset(), 3.0, 1e-6);
    cfg.dataset.points = Some(200);
    let r = feature_sweep(&cfg, &[10, 2560], 5).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r.rows[1].mean_mse < r.rows[0].mean_mse);
    assert!(r.rows.iter().all(|row| r.exact_mse <= row.mean_mse));
    assert_eq!(r.family, FeatureFamily::OddSymplectic);
}

#[test]
fn sweep_rejects_exact_recipe() {
    let mut cfg = fixed(ExperimentConfig::sweep_preset(), 3.0, 1e-6);
    cfg.model.recipe = ModelRecipe::Exact {
        family: hamkernel::kernels::KernelFamily::Symplectic,
        parity: hamkernel::kernels::Parity::Odd,
    };
    assert!(feature_sweep(&cfg, &[10], 1).is_err());
}

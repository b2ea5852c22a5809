//! Command-line pipeline: simulate, train, roll out, evaluate, tune, sweep
//! feature counts and export vector fields. Every output is a plain file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use hamkernel::config::ExperimentConfig;
use hamkernel::experiments::{build_dataset, evaluate, feature_sweep, train, tune_hyper};
use hamkernel::io::{self, GridSpec};
use hamkernel::metrics::render_table;
use hamkernel::model::LearnedModel;
use hamkernel::sim::TrajectorySpec;
use hamkernel::systems::{System, VectorField};
use hamkernel::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "hamkernel",
    version,
    about = "Learn Hamiltonian vector fields with structured kernels"
)]
struct Cli {
    /// Experiment configuration (JSON, or TOML by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in recipe used when no configuration file is given.
    #[arg(long, global = true, default_value = "pendulum")]
    system: String,
    /// Master seed; overrides the configuration's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads. Accepted for compatibility; work runs on one thread.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the true system and write a noisy training dataset.
    Simulate {
        /// Noise standard deviation; overrides the configuration.
        #[arg(long)]
        sigma_n: Option<f64>,
    },
    /// Fit the configured model, tuning hyperparameters set to "tune".
    Train {
        /// Training data; simulated from the configuration when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Integrate a saved model from an initial state.
    Rollout {
        #[arg(long)]
        model: PathBuf,
        /// Initial state, comma separated.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true
        )]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 2.0)]
        t_end: f64,
        #[arg(long, default_value_t = 201)]
        n_steps: usize,
    },
    /// Score saved models on the configured test set.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        model: Vec<PathBuf>,
    },
    /// Run the hyperparameter search alone and write its record.
    Tune {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Trajectory error against the feature count.
    SweepFeatures {
        #[arg(long, value_delimiter = ',', default_value = "10,40,160,640,2560")]
        d: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        n_seeds: usize,
    },
    /// Tabulate a saved model's field, or the true system's, over a grid.
    ExportField {
        /// Model file; the configured system's true field when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lower: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        upper: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
}

/// Metadata written next to CSV outputs that have no header room for it.
#[derive(Serialize)]
struct RunMeta<'a, T: Serialize> {
    command: &'a str,
    config_digest: Option<String>,
    #[serde(flatten)]
    details: T,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Unsupported(_) => 2,
        Error::Numerical { .. } | Error::Integration { .. } => 3,
        Error::Io(_) | Error::Parse(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(
    cli: &Cli,
    fallback: impl FnOnce() -> Result<ExperimentConfig>,
) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            Error::Io(io) => Error::Io(std::io::Error::new(
                io.kind(),
                format!("{}: {io}", path.display()),
            )),
            other => other,
        })?,
        None => fallback()?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    load_config(cli, || ExperimentConfig::preset(&cli.system))
}

fn out_path(cli: &Cli, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cli.out)?;
    Ok(cli.out.join(name))
}

fn dataset_for(cfg: &ExperimentConfig, data: &Option<PathBuf>) -> Result<hamkernel::sim::Dataset> {
    match data {
        Some(p) => io::read_dataset(p),
        None => build_dataset(cfg),
    }
}

fn write_meta<T: Serialize>(
    path: &Path,
    command: &str,
    config_digest: Option<String>,
    details: T,
) -> Result<()> {
    io::write_json(
        &io::sidecar_path(path),
        &RunMeta {
            command,
            config_digest,
            details,
        },
    )
}

fn model_digest(model: &LearnedModel) -> Option<String> {
    model.provenance.config_digest.clone()
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Simulate { sigma_n } => {
            let mut cfg = config(cli)?;
            if let Some(s) = sigma_n {
                cfg.dataset.sigma_n = *s;
                cfg.validate()?;
            }
            let data = build_dataset(&cfg)?;
            let path = out_path(cli, "dataset.csv")?;
            io::write_dataset(&path, &data)?;
            println!("wrote {} samples to {}", data.len(), path.display());
        }
        Command::Train { data } => {
            let cfg = config(cli)?;
            let dataset = dataset_for(&cfg, data)?;
            let trained = train(&cfg, &dataset)?;
            let path = out_path(cli, "model.json")?;
            io::write_model(&path, &trained.model, trained.tuning)?;
            let h = trained.model.hyper;
            println!("model {}", trained.model.kind().label());
            println!("sigma {:.6e} lambda {:.6e}", h.sigma, h.lambda);
            println!("training mse {:.6e}", trained.model.training_mse(&dataset)?);
            println!("wrote {}", path.display());
        }
        Command::Rollout {
            model,
            x0,
            t_end,
            n_steps,
        } => {
            let m = io::read_model(model)?;
            if x0.len() != m.dim() {
                return Err(Error::Input(format!(
                    "initial state has {} entries, model expects {}",
                    x0.len(),
                    m.dim()
                )));
            }
            let tr = m.rollout_with(&TrajectorySpec::new(x0.clone(), *t_end, *n_steps))?;
            let path = out_path(cli, "trajectory.csv")?;
            io::write_trajectory(&path, &tr)?;
            write_meta(
                &path,
                "rollout",
                model_digest(&m),
                serde_json::json!({ "model": model, "x0": x0, "t_end": t_end, "n_steps": n_steps }),
            )?;
            println!("wrote {} states to {}", tr.len(), path.display());
        }
        Command::Evaluate { model } => {
            let cfg = config(cli)?;
            let reports = model
                .iter()
                .map(|p| evaluate(&io::read_model(p)?, &cfg))
                .collect::<Result<Vec<_>>>()?;
            let table = render_table(&reports);
            io::write_json(&out_path(cli, "eval.json")?, &reports)?;
            io::atomic_write(&out_path(cli, "eval.txt")?, table.as_bytes())?;
            print!("{table}");
        }
        Command::Tune { data } => {
            let cfg = config(cli)?;
            let dataset = dataset_for(&cfg, data)?;
            let t = &cfg.tuning;
            let (hyper, record) = tune_hyper(
                &dataset,
                &cfg.model_kind(),
                hamkernel::config::HyperValue::TUNE,
                hamkernel::config::HyperValue::TUNE,
                &t.cv_settings(cfg.seed),
                &t.bounds,
                &t.resolved_method(cfg.seed),
            )?;
            let path = out_path(cli, "tuning.json")?;
            io::write_json(
                &path,
                &RunMeta {
                    command: "tune",
                    config_digest: Some(cfg.digest()),
                    details: serde_json::json!({ "tuning": record }),
                },
            )?;
            println!("sigma {:.6e} lambda {:.6e}", hyper.sigma, hyper.lambda);
            println!("wrote {}", path.display());
        }
        Command::SweepFeatures { d, n_seeds } => {
            let cfg = load_config(cli, || Ok(ExperimentConfig::sweep_preset()))?;
            let result = feature_sweep(&cfg, d, *n_seeds)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["d", "mean_mse", "std_mse"])
                .map_err(csv_err)?;
            for row in &result.rows {
                w.write_record([
                    row.d.to_string(),
                    format!("{:.16e}", row.mean_mse),
                    format!("{:.16e}", row.std_mse),
                ])
                .map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            let path = out_path(cli, "sweep.csv")?;
            io::atomic_write(&path, &bytes)?;
            write_meta(&path, "sweep-features", Some(cfg.digest()), &result)?;
            for row in &result.rows {
                println!(
                    "d {:>6} mean {:.4e} std {:.4e}",
                    row.d, row.mean_mse, row.std_mse
                );
            }
            println!("exact kernel {:.4e}", result.exact_mse);
        }
        Command::ExportField {
            model,
            lower,
            upper,
            counts,
        } => {
            let (field, system, digest): (Box<dyn VectorField>, Option<System>, Option<String>) =
                match model {
                    Some(p) => {
                        let m = io::read_model(p)?;
                        let digest = model_digest(&m);
                        (Box::new(m), None, digest)
                    }
                    None => {
                        let cfg = config(cli)?;
                        (Box::new(cfg.system), Some(cfg.system), Some(cfg.digest()))
                    }
                };
            let n = field.dim();
            let (lo, hi) = match &system {
                Some(s) => s.state_box(),
                None => (vec![-1.0; n], vec![1.0; n]),
            };
            let grid = GridSpec {
                lower: lower.clone().unwrap_or(lo),
                upper: upper.clone().unwrap_or(hi),
                counts: counts.clone().unwrap_or_else(|| vec![21; n]),
            };
            let bytes = io::field_grid_csv(field.as_ref(), &grid)?;
            let path = out_path(cli, "field.csv")?;
            io::atomic_write(&path, &bytes)?;
            write_meta(
                &path,
                "export-field",
                digest,
                serde_json::json!({ "grid": grid, "model": model }),
            )?;
            println!(
                "wrote {} rows to {}",
                grid.counts.iter().product::<usize>(),
                path.display()
            );
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::from(e)
}

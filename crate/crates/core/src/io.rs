//! Digests and on-disk formats.
//!
//! Floats are written with 17 significant digits, so every file round-trips
//! doubles exactly. Writes go to a temporary file that is renamed into place.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureFamily, FeatureMap, RffModel, TrainingMeta};
use crate::kernels::{ExactModel, KernelFamily, KernelSpec, Parity};
use crate::model::{Hyper, LearnedModel, Provenance, Variant};
use crate::sim::{Dataset, DatasetMeta, Trajectory};
use crate::systems::VectorField;
use crate::tuning::TuningRecord;

pub const SCHEMA_VERSION: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Digest over the sample values and metadata, independent of file layout.
pub fn dataset_digest(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    for ((id, t), (x, y)) in dataset
        .traj_ids
        .iter()
        .zip(&dataset.times)
        .zip(dataset.xs.iter().zip(&dataset.ys))
    {
        h.update((*id as u64).to_le_bytes());
        h.update(t.to_le_bytes());
        x.iter()
            .chain(y.iter())
            .for_each(|v| h.update(v.to_le_bytes()));
    }
    h.update(serde_json::to_vec(&dataset.meta).expect("metadata serializes"));
    hex(&h.finalize())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// Path of the metadata sidecar for a dataset CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Serializes the sample table: `traj_id, t, x_1..x_n, y_1..y_n`.
pub fn dataset_csv(dataset: &Dataset) -> Result<Vec<u8>> {
    let n = dataset.dim();
    let header: Vec<String> = ["traj_id".to_string(), "t".to_string()]
        .into_iter()
        .chain(names("x", n))
        .chain(names("y", n))
        .collect();
    let rows = (0..dataset.len()).map(|i| {
        [dataset.traj_ids[i].to_string(), num(dataset.times[i])]
            .into_iter()
            .chain(dataset.xs[i].iter().map(|v| num(*v)))
            .chain(dataset.ys[i].iter().map(|v| num(*v)))
            .collect()
    });
    csv_bytes(&header, rows)
}

/// Writes the CSV and its JSON metadata sidecar.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    atomic_write(path, &dataset_csv(dataset)?)?;
    write_json(&sidecar_path(path), &dataset.meta)
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad {what} value {s:?}")))
}

/// Reads a dataset CSV; the sidecar is used when present.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let width = header.len();
    if width < 4 || (width - 2) % 2 != 0 || &header[0] != "traj_id" || &header[1] != "t" {
        return Err(Error::Parse(format!(
            "{}: expected header traj_id,t,x_1..x_n,y_1..y_n",
            path.display()
        )));
    }
    let n = (width - 2) / 2;
    let (mut ids, mut times, mut xs, mut ys) = (vec![], vec![], vec![], vec![]);
    for rec in r.records() {
        let rec = rec?;
        ids.push(
            rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad traj_id {:?}", &rec[0])))?,
        );
        times.push(parse_f64(&rec[1], "time")?);
        let vals = (2..width)
            .map(|k| parse_f64(&rec[k], "sample"))
            .collect::<Result<Vec<_>>>()?;
        xs.push(DVector::from_column_slice(&vals[..n]));
        ys.push(DVector::from_column_slice(&vals[n..]));
    }
    let side = sidecar_path(path);
    let meta = if side.exists() {
        read_json::<DatasetMeta>(&side)?
    } else {
        let mut bounds: Vec<(usize, usize)> = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            if i == 0 || ids[i - 1] != *id {
                bounds.push((i, i + 1));
            } else if let Some(last) = bounds.last_mut() {
                last.1 = i + 1;
            }
        }
        DatasetMeta {
            system: String::new(),
            params_digest: String::new(),
            sigma_n: 0.0,
            seed: 0,
            noise_mode: Default::default(),
            trajectory_bounds: bounds,
            config_digest: None,
        }
    };
    Ok(Dataset {
        traj_ids: ids,
        times,
        xs,
        ys,
        meta,
    })
}

/// Self-describing model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    /// `"exact"` or `"rff"`.
    pub variant: String,
    pub family: String,
    pub parity: Parity,
    pub n: usize,
    pub sigma: f64,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Row-major `d x n` frequency matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<Vec<f64>>>,
    pub solve_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingMeta>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningRecord>,
}

fn family_name<T: Serialize>(f: &T) -> String {
    serde_json::to_value(f)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn parse_family<T: for<'de> Deserialize<'de>>(name: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(name.to_owned()))
        .map_err(|_| Error::Parse(format!("unknown family {name:?}")))
}

impl ModelFile {
    pub fn from_model(model: &LearnedModel, tuning: Option<TuningRecord>) -> Self {
        let base = |variant: &str, family: String, parity: Parity, n: usize| ModelFile {
            schema_version: SCHEMA_VERSION,
            variant: variant.into(),
            family,
            parity,
            n,
            sigma: model.hyper.sigma,
            lambda: model.hyper.lambda,
            d: None,
            seed: None,
            frequencies: None,
            alpha: None,
            training_points: None,
            coefficients: None,
            solve_residual: model.solve_residual(),
            training: None,
            provenance: model.provenance.clone(),
            tuning,
        };
        match &model.variant {
            Variant::Exact(m) => {
                let vecs = |v: &[DVector<f64>]| v.iter().map(|x| x.as_slice().to_vec()).collect();
                ModelFile {
                    training_points: Some(vecs(&m.points)),
                    coefficients: Some(vecs(&m.coefficients)),
                    ..base("exact", family_name(&m.spec.family), m.spec.parity, m.dim())
                }
            }
            Variant::Rff(m) => {
                let parity = match m.map.family {
                    FeatureFamily::OddSymplectic | FeatureFamily::OddSeparable => Parity::Odd,
                    FeatureFamily::EvenSymplectic | FeatureFamily::EvenSeparable => Parity::Even,
                    _ => Parity::None,
                };
                let w = &m.map.frequencies;
                let row_major = (0..w.nrows())
                    .flat_map(|i| (0..w.ncols()).map(move |j| w[(i, j)]))
                    .collect();
                ModelFile {
                    d: Some(m.map.d()),
                    seed: Some(m.map.seed),
                    frequencies: Some(row_major),
                    alpha: Some(m.alpha.as_slice().to_vec()),
                    training: Some(m.meta.clone()),
                    ..base("rff", family_name(&m.map.family), parity, m.map.n())
                }
            }
        }
    }

    pub fn into_model(self) -> Result<LearnedModel> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model schema version {}",
                self.schema_version
            )));
        }
        let missing = |field: &str| Error::Parse(format!("model file lacks `{field}`"));
        let hyper = Hyper {
            sigma: self.sigma,
            lambda: self.lambda,
        };
        let variant = match self.variant.as_str() {
            "exact" => {
                let family: KernelFamily = parse_family(&self.family)?;
                let spec = KernelSpec::new(family, self.sigma, self.parity)?;
                let vecs = |v: Vec<Vec<f64>>| -> Result<Vec<DVector<f64>>> {
                    v.into_iter()
                        .map(|x| {
                            if x.len() == self.n {
                                Ok(DVector::from_vec(x))
                            } else {
                                Err(Error::Parse("vector length does not match n".into()))
                            }
                        })
                        .collect()
                };
                let points = vecs(
                    self.training_points
                        .ok_or_else(|| missing("training_points"))?,
                )?;
                let coefficients = vecs(self.coefficients.ok_or_else(|| missing("coefficients"))?)?;
                if points.len() != coefficients.len() {
                    return Err(Error::Parse("point and coefficient counts differ".into()));
                }
                Variant::Exact(ExactModel {
                    spec,
                    lambda: self.lambda,
                    points,
                    coefficients,
                    solve_residual: self.solve_residual,
                })
            }
            "rff" => {
                let family: FeatureFamily = parse_family(&self.family)?;
                let d = self.d.ok_or_else(|| missing("d"))?;
                let w = self.frequencies.ok_or_else(|| missing("frequencies"))?;
                if w.len() != d * self.n {
                    return Err(Error::Parse(format!(
                        "frequencies hold {} values, expected {}",
                        w.len(),
                        d * self.n
                    )));
                }
                let map = FeatureMap::from_frequencies(
                    family,
                    self.sigma,
                    self.seed.unwrap_or(0),
                    DMatrix::from_row_slice(d, self.n, &w),
                )?;
                let alpha = DVector::from_vec(self.alpha.ok_or_else(|| missing("alpha"))?);
                if alpha.len() != map.feature_dim() {
                    return Err(Error::Parse(format!(
                        "alpha has length {}, expected {}",
                        alpha.len(),
                        map.feature_dim()
                    )));
                }
                Variant::Rff(RffModel {
                    map,
                    alpha,
                    lambda: self.lambda,
                    meta: self.training.unwrap_or_default(),
                    solve_residual: self.solve_residual,
                })
            }
            other => return Err(Error::Parse(format!("unknown model variant {other:?}"))),
        };
        Ok(LearnedModel {
            variant,
            hyper,
            provenance: self.provenance,
        })
    }
}

pub fn write_model(path: &Path, model: &LearnedModel, tuning: Option<TuningRecord>) -> Result<()> {
    write_json(path, &ModelFile::from_model(model, tuning))
}

pub fn read_model_file(path: &Path) -> Result<ModelFile> {
    read_json(path)
}

pub fn read_model(path: &Path) -> Result<LearnedModel> {
    read_model_file(path)?.into_model()
}

/// Trajectory table: `t, x_1..x_n`.
pub fn trajectory_csv(trajectory: &Trajectory) -> Result<Vec<u8>> {
    let n = trajectory.states.first().map_or(0, |s| s.len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(names("x", n))
        .collect();
    let rows = trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .map(|(t, s)| {
            std::iter::once(num(*t))
                .chain(s.iter().map(|v| num(*v)))
                .collect()
        });
    csv_bytes(&header, rows)
}

pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<()> {
    atomic_write(path, &trajectory_csv(trajectory)?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    let mut tr = Trajectory {
        times: vec![],
        states: vec![],
    };
    for rec in r.records() {
        let rec = rec?;
        tr.times.push(parse_f64(&rec[0], "time")?);
        let s = (1..width)
            .map(|k| parse_f64(&rec[k], "state"))
            .collect::<Result<Vec<_>>>()?;
        tr.states.push(DVector::from_vec(s));
    }
    Ok(tr)
}

/// Regular grid with `counts[k]` points spanning `[lower[k], upper[k]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.lower.len();
        if n == 0 || self.upper.len() != n || self.counts.len() != n {
            return Err(Error::config(
                "grid bounds and counts must have matching nonzero length",
            ));
        }
        if self.counts.contains(&0) || self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::config(
                "grid counts must be positive and bounds ordered",
            ));
        }
        Ok(())
    }

    /// Grid points with the last coordinate varying fastest.
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let axis = |k: usize, i: usize| {
            if self.counts[k] == 1 {
                0.5 * (self.lower[k] + self.upper[k])
            } else {
                self.lower[k]
                    + (self.upper[k] - self.lower[k]) * i as f64 / (self.counts[k] - 1) as f64
            }
        };
        let total: usize = self.counts.iter().product();
        Ok((0..total)
            .map(|mut flat| {
                let mut p = vec![0.0; self.counts.len()];
                for k in (0..self.counts.len()).rev() {
                    p[k] = axis(k, flat % self.counts[k]);
                    flat /= self.counts[k];
                }
                p
            })
            .collect())
    }
}

/// Field table over a grid: `x_1..x_n, f_1..f_n`.
pub fn field_grid_csv<F: VectorField + ?Sized>(field: &F, grid: &GridSpec) -> Result<Vec<u8>> {
    let n = field.dim();
    if grid.lower.len() != n {
        return Err(Error::input(format!(
            "grid has dimension {} but the field has {n}",
            grid.lower.len()
        )));
    }
    let header: Vec<String> = names("x", n).chain(names("f", n)).collect();
    let rows = grid
        .points()?
        .into_iter()
        .map(|p| {
            let f = field.eval(&p)?;
            Ok(p.iter().chain(f.iter()).map(|v| num(*v)).collect())
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    csv_bytes(&header, rows.into_iter())
}

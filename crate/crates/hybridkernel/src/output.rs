//! CSV and JSON writers for experiment results.
//!
//! Floats are written in Rust's shortest round-trip form, so rerunning an
//! experiment with the same configuration reproduces every file byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use hybridkernel_core::control::Trajectory;

use crate::config::{Experiment, ExperimentConfig, Seeds};
use crate::error::{io_err, Result};
use crate::experiments::{self, ControlRow, SweepRow, VleSplit};

/// Collects the files written by one run.
struct Sink {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Sink {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        self.written.push(path.clone());
        Ok(path)
    }

    fn csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.path(name)?;
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush().map_err(io_err(&path))?;
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::File::create(&path)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(io_err(&path))
    }
}

fn f(v: f64) -> String {
    v.to_string()
}

fn vle_rows(split: &VleSplit) -> impl Iterator<Item = Vec<String>> + '_ {
    split
        .points
        .iter()
        .zip(&split.gibbs)
        .map(|(p, g)| vec![f(p.x), f(p.y), f(p.t), f(*g)])
}

const VLE_HEADER: [&str; 4] = ["x", "y", "T", "gex_rt"];
const SWEEP_HEADER: [&str; 3] = ["lambda", "train_rmse", "val_rmse"];

fn sweep_rows(rows: &[SweepRow]) -> impl Iterator<Item = Vec<String>> + '_ {
    rows.iter()
        .map(|r| vec![f(r.lambda), f(r.train_rmse), f(r.val_rmse)])
}

fn trajectory_rows(t: &Trajectory) -> impl Iterator<Item = Vec<String>> + '_ {
    t.times
        .iter()
        .zip(&t.states)
        .enumerate()
        .map(|(i, (time, x))| {
            let u = t.controls.get(i).map_or_else(String::new, |u| f(*u));
            vec![f(*time), f(x[0]), f(x[1]), u]
        })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: Experiment,
    seeds: Seeds,
    config: std::collections::BTreeMap<&'static str, String>,
    files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a serde_json::Value>,
}

/// Runs `cfg.experiment` and writes its files under `cfg.output_dir`.
/// Returns the written paths, manifest last.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let pool = experiments::worker_pool()?;
    let mut sink = Sink::new(&cfg.output_dir)?;
    let mut summary = None;
    match cfg.experiment {
        Experiment::VleData => {
            let data = experiments::vle_data(cfg)?;
            sink.csv("dataset.csv", &VLE_HEADER, vle_rows(&data))?;
            sink.json(
                "dataset.json",
                &serde_json::json!({
                    "pressure_mmhg": cfg.pressure,
                    "seed": cfg.seeds().data,
                    "n": cfg.n,
                    "gibbs": cfg.gibbs,
                }),
            )?;
        }
        Experiment::Setting1 => {
            let r = experiments::setting1(cfg, &pool)?;
            sink.csv("train.csv", &VLE_HEADER, vle_rows(&r.train))?;
            sink.csv("val.csv", &VLE_HEADER, vle_rows(&r.val))?;
            sink.csv("sweep.csv", &SWEEP_HEADER, sweep_rows(&r.rows))?;
            sink.json("models.json", &r.models)?;
        }
        Experiment::Setting2 => {
            let r = experiments::setting2(cfg, &pool)?;
            sink.csv("train.csv", &VLE_HEADER, vle_rows(&r.train))?;
            sink.csv("val.csv", &VLE_HEADER, vle_rows(&r.val))?;
            sink.csv(
                "sweep_reference.csv",
                &SWEEP_HEADER,
                sweep_rows(&r.reference_rows),
            )?;
            sink.csv(
                "sweep_margules.csv",
                &SWEEP_HEADER,
                sweep_rows(&r.margules_rows),
            )?;
            sink.json(
                "models.json",
                &serde_json::json!({
                    "reference": r.reference_models,
                    "margules": r.margules_models,
                }),
            )?;
        }
        Experiment::Setting3 => {
            let r = experiments::setting3(cfg, &pool)?;
            sink.csv("train.csv", &VLE_HEADER, vle_rows(&r.train))?;
            sink.csv("val.csv", &VLE_HEADER, vle_rows(&r.val))?;
            for &m in &cfg.m {
                let rows = r.rows.iter().filter(|row| row.m == m).map(|row| {
                    vec![
                        f(row.lambda),
                        f(row.train_rmse),
                        f(row.val_rmse),
                        f(row.theta_star[0]),
                        f(row.theta_star[1]),
                    ]
                });
                sink.csv(
                    &format!("sweep_m{m}.csv"),
                    &[
                        "lambda",
                        "train_rmse",
                        "val_rmse",
                        "theta_star_1",
                        "theta_star_2",
                    ],
                    rows,
                )?;
            }
            sink.json("models.json", &r.models)?;
        }
        Experiment::Koopman => {
            let r = experiments::koopman_sweep(cfg, &pool)?;
            let rows = r.rows.iter().map(|row| {
                vec![
                    f(row.lambda_r),
                    f(row.train_rmse),
                    f(row.val_rmse),
                    f(row.frob_r),
                ]
            });
            sink.csv(
                "sweep.csv",
                &["lambda_R", "train_rmse", "val_rmse", "frob_R"],
                rows,
            )?;
            sink.json("models.json", &r.models)?;
        }
        Experiment::Control => {
            let r = experiments::control(cfg, &pool)?;
            let header = ["t", "x1", "x2", "u"];
            for (k, t) in r.truth.iter().enumerate() {
                sink.csv(
                    &format!("trajectories/truth_x{k}.csv"),
                    &header,
                    trajectory_rows(t),
                )?;
            }
            for (i, runs) in r.model.iter().enumerate() {
                for (k, t) in runs.iter().enumerate() {
                    sink.csv(
                        &format!("trajectories/model_l{i}_x{k}.csv"),
                        &header,
                        trajectory_rows(t),
                    )?;
                }
            }
            let value = control_summary(&r.initial_states, &r.rows);
            sink.json("summary.json", &value)?;
            summary = Some(value);
        }
    }
    let files = sink
        .written
        .iter()
        .filter_map(|p| p.strip_prefix(&cfg.output_dir).ok())
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .collect();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment,
        seeds: cfg.seeds(),
        config: cfg.echo(),
        files,
        summary: summary.as_ref(),
    };
    sink.json("manifest.json", &manifest)?;
    Ok(sink.written)
}

fn control_summary(x0s: &[[f64; 2]], rows: &[ControlRow]) -> serde_json::Value {
    let per_lambda: Vec<_> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            serde_json::json!({
                "index": i,
                "lambda_R": r.lambda_r,
                "max_deviation": r.max_deviation,
                "model_clf_increase": r.model_clf_increase,
                "model_clf_monotone": r.model_clf_increase <= experiments::CLF_FLOOR,
            })
        })
        .collect();
    let truth_increase = rows
        .first()
        .map_or(f64::NEG_INFINITY, |r| r.truth_clf_increase);
    serde_json::json!({
        "initial_states": x0s,
        "truth_clf_increase": truth_increase,
        "truth_clf_monotone": truth_increase <= experiments::CLF_FLOOR,
        "per_lambda": per_lambda,
    })
}

//! Sweeps: one training run plus duality analysis per (value, seed) cell,
//! and an aggregate table of the gap decomposition per value.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use awdual::duality::{analyze, AnalysisOptions, AnalysisSummary};
use awdual::multilearner::{run_multilearner, Algorithm};
use awdual::network::Checkpoint;
use awdual::report::{write_csv, write_history_csv, write_json, write_spectrum_csv};
use awdual::trainer::train;
use awdual::{Error, Result, TrainResult};

use crate::settings::{prepare_data, Settings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    Alpha,
    B,
    Beta,
    S,
    D,
    N,
    Rho,
    TBeta,
    SW,
    /// Values are `alpha:B` pairs keyed by their ratio.
    AlphaOverB,
    /// Values are `sgd`, `ssgd` or `dpsgd`.
    Algorithm,
}

impl std::str::FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alpha" => SweepVar::Alpha,
            "B" | "batch_size" => SweepVar::B,
            "beta" => SweepVar::Beta,
            "s" | "init_scale" => SweepVar::S,
            "d" | "dropout" => SweepVar::D,
            "N" | "n_per_class" => SweepVar::N,
            "rho" => SweepVar::Rho,
            "t_beta" => SweepVar::TBeta,
            "s_w" => SweepVar::SW,
            "alpha_over_B" => SweepVar::AlphaOverB,
            "algorithm" => SweepVar::Algorithm,
            other => return Err(Error::Config(format!("unknown sweep variable `{other}`"))),
        })
    }
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Alpha => "alpha",
            SweepVar::B => "B",
            SweepVar::Beta => "beta",
            SweepVar::S => "s",
            SweepVar::D => "d",
            SweepVar::N => "N",
            SweepVar::Rho => "rho",
            SweepVar::TBeta => "t_beta",
            SweepVar::SW => "s_w",
            SweepVar::AlphaOverB => "alpha_over_B",
            SweepVar::Algorithm => "algorithm",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub base: Settings,
    pub var: SweepVar,
    pub values: Vec<String>,
    /// Seeds per value: `base.train.seed + r` for `r` in `0..repeats`.
    pub repeats: usize,
    pub layers: Vec<usize>,
    /// Cells run concurrently; 0 lets the thread pool decide.
    pub workers: usize,
}

/// How a cell trains: one learner, or the multi-learner simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainer {
    Sgd,
    Multi(Algorithm),
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("need at least one analysis layer".into()));
        }
        for v in &self.values {
            self.cell(v, 0)?.0.validate()?;
        }
        Ok(())
    }

    /// Settings, trainer and sort key for one value and repeat.
    pub fn cell(&self, value: &str, repeat: usize) -> Result<(Settings, Trainer, f64)> {
        let mut s = self.base.clone();
        s.train.seed = self.base.train.seed + repeat as u64;
        let mut trainer = Trainer::Sgd;
        let key = match self.var {
            SweepVar::AlphaOverB => {
                let (a, b) = value
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("alpha_over_B value `{value}` is not alpha:B")))?;
                s.set("alpha", a)?;
                s.set("batch_size", b)?;
                s.train.alpha / s.train.batch_size as f64
            }
            SweepVar::Algorithm => {
                trainer = match value.trim() {
                    "sgd" => Trainer::Sgd,
                    other => Trainer::Multi(other.parse()?),
                };
                f64::NAN
            }
            var => {
                s.set(var.name(), value)?;
                value.trim().parse().unwrap_or(f64::NAN)
            }
        };
        Ok((s, trainer, key))
    }
}

/// Outcome of one (value, seed) cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellOutcome {
    pub value: String,
    pub key: f64,
    pub seed: u64,
    pub epochs_run: usize,
    pub converged: bool,
    /// One summary per analysis layer, in the order requested.
    pub summaries: Vec<AnalysisSummary>,
    pub error: Option<String>,
}

/// Trains with the given settings, then analyzes every layer. Files go to
/// `out` when given.
pub fn run_cell(settings: &Settings, trainer: Trainer, data_dir: &Path, layers: &[usize], out: Option<&Path>) -> Result<(TrainResult, Vec<AnalysisSummary>)> {
    settings.validate()?;
    let (train_set, test_set) = prepare_data(settings, data_dir)?;
    let config = settings.to_pairs();
    let (result, spread) = match trainer {
        Trainer::Sgd => (train(&settings.train, &train_set, &test_set)?, None),
        Trainer::Multi(algorithm) => {
            let multi = awdual::multilearner::MultiConfig {
                algorithm,
                ..settings.multi()
            };
            let r = run_multilearner(&multi, &train_set, &test_set, None)?;
            (r.result, Some(r.epoch_spread))
        }
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        let mut ckpt = Checkpoint::from_model(&result.solution, Some(&settings.train));
        ckpt.epochs_run = result.epochs_run;
        ckpt.converged = result.converged;
        ckpt.save(&dir.join("checkpoint.json"))?;
        std::fs::write(dir.join("config.txt"), settings.to_text()).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        write_history_csv(&dir.join("history.csv"), &config, &result.history, spread.as_deref())?;
    }
    let mut summaries = Vec::new();
    for &layer in layers {
        let opts = AnalysisOptions {
            layer,
            ..settings.analysis()
        };
        let report = analyze(&result.solution, &train_set, &test_set, &opts)?;
        if let Some(dir) = out {
            let mut cfg = config.clone();
            cfg.push(("layer".into(), layer.to_string()));
            write_spectrum_csv(&dir.join(format!("spectrum_L{layer}.csv")), &cfg, &report.spectrum)?;
            write_json(&dir.join(format!("summary_L{layer}.json")), &cfg, "summary", &report.summary)?;
        }
        summaries.push(report.summary);
    }
    Ok((result, summaries))
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub value: String,
    pub key: f64,
    pub layer: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub dl_mean: f64,
    pub dl_std: f64,
    pub dl_sharp_mean: f64,
    pub dl_sharp_std: f64,
    pub dl_flat_mean: f64,
    pub dl_flat_std: f64,
    pub test_error_mean: f64,
    pub test_error_std: f64,
    pub n_s_mean: f64,
    pub epochs_mean: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(spec: &ExperimentSpec, cells: &[CellOutcome]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for value in &spec.values {
        for (li, &layer) in spec.layers.iter().enumerate() {
            let group: Vec<&CellOutcome> = cells.iter().filter(|c| &c.value == value).collect();
            let ok: Vec<&CellOutcome> = group.iter().copied().filter(|c| c.error.is_none()).collect();
            let col = |f: fn(&AnalysisSummary) -> f64| mean_std(&ok.iter().map(|c| f(&c.summaries[li])).collect::<Vec<_>>());
            let (dl_mean, dl_std) = col(|s| s.dl_total);
            let (dl_sharp_mean, dl_sharp_std) = col(|s| s.dl_sharp);
            let (dl_flat_mean, dl_flat_std) = col(|s| s.dl_flat);
            let (test_error_mean, test_error_std) = col(|s| s.test_error);
            let (n_s_mean, _) = col(|s| s.n_s as f64);
            let (epochs_mean, _) = mean_std(&ok.iter().map(|c| c.epochs_run as f64).collect::<Vec<_>>());
            rows.push(AggregateRow {
                value: value.clone(),
                key: group.first().map_or(f64::NAN, |c| c.key),
                layer,
                n_ok: ok.len(),
                n_failed: group.len() - ok.len(),
                dl_mean,
                dl_std,
                dl_sharp_mean,
                dl_sharp_std,
                dl_flat_mean,
                dl_flat_std,
                test_error_mean,
                test_error_std,
                n_s_mean,
                epochs_mean,
            });
        }
    }
    rows
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub cells: Vec<CellOutcome>,
    pub aggregate: Vec<AggregateRow>,
    pub out_dir: PathBuf,
}

fn cell_dir(out: &Path, var: SweepVar, value: &str, seed: u64) -> PathBuf {
    let safe: String = value
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    out.join("cells").join(format!("{}={safe}", var.name())).join(format!("seed={seed}"))
}

/// Runs every (value, repeat) cell, writes per-cell artifacts and
/// `aggregate.csv`. A failing cell is recorded (in `error.txt` and the
/// aggregate counts) and the sweep continues.
pub fn run_experiment(spec: &ExperimentSpec, data_dir: &Path, out_dir: &Path) -> Result<ExperimentResult> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io { path: out_dir.to_path_buf(), source: e })?;
    let jobs: Vec<(String, usize)> = spec
        .values
        .iter()
        .flat_map(|v| (0..spec.repeats).map(move |r| (v.clone(), r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let cells: Vec<CellOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|(value, r)| {
                let (settings, trainer, key) = spec.cell(value, *r).expect("validated");
                let seed = settings.train.seed;
                let dir = cell_dir(out_dir, spec.var, value, seed);
                match run_cell(&settings, trainer, data_dir, &spec.layers, Some(&dir)) {
                    Ok((result, summaries)) => CellOutcome {
                        value: value.clone(),
                        key,
                        seed,
                        epochs_run: result.epochs_run,
                        converged: result.converged,
                        summaries,
                        error: None,
                    },
                    Err(e) => {
                        let _ = std::fs::create_dir_all(&dir);
                        let _ = std::fs::write(dir.join("error.txt"), format!("{e}\n"));
                        CellOutcome {
                            value: value.clone(),
                            key,
                            seed,
                            epochs_run: 0,
                            converged: false,
                            summaries: Vec::new(),
                            error: Some(e.to_string()),
                        }
                    }
                }
            })
            .collect()
    });
    let aggregate = aggregate(spec, &cells);
    let mut config = spec.base.to_pairs();
    config.push(("sweep_var".into(), spec.var.name().into()));
    config.push(("sweep_values".into(), spec.values.join(" ")));
    config.push(("repeats".into(), spec.repeats.to_string()));
    let columns = [
        "value", "key", "layer", "n_ok", "n_failed", "dL_mean", "dL_std", "dL_s_mean", "dL_s_std", "dL_f_mean", "dL_f_std",
        "test_err_mean", "test_err_std", "n_s_mean", "epochs_mean",
    ];
    let rows = aggregate.iter().map(|r| {
        vec![
            r.value.clone(),
            r.key.to_string(),
            r.layer.to_string(),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
            r.dl_mean.to_string(),
            r.dl_std.to_string(),
            r.dl_sharp_mean.to_string(),
            r.dl_sharp_std.to_string(),
            r.dl_flat_mean.to_string(),
            r.dl_flat_std.to_string(),
            r.test_error_mean.to_string(),
            r.test_error_std.to_string(),
            r.n_s_mean.to_string(),
            r.epochs_mean.to_string(),
        ]
    });
    write_csv(&out_dir.join("aggregate.csv"), &config, &columns, rows)?;
    write_json(&out_dir.join("cells.json"), &config, "cells", &cells)?;
    Ok(ExperimentResult {
        cells,
        aggregate,
        out_dir: out_dir.to_path_buf(),
    })
}

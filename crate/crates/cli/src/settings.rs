//! Flat `key=value` run configuration shared by every command.

use std::path::{Path, PathBuf};

use awdual::dataset::{corrupt_labels, subset_per_class, GaussianClusters, MnistFiles};
use awdual::duality::AnalysisOptions;
use awdual::multilearner::{Algorithm, MultiConfig, TopologyKind};
use awdual::trainer::TrainConfig;
use awdual::{Error, LabeledSet, Result};

/// Environment variable naming the MNIST directory.
pub const DATA_DIR_ENV: &str = "AWDUAL_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetKind {
    #[default]
    Mnist,
    /// Gaussian clusters in `layer_sizes[0]` dimensions; needs no files.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub dataset: DatasetKind,
    pub m: usize,
    pub algorithm: Algorithm,
    pub topology: TopologyKind,
    pub include_self: bool,
    /// Pinned number of sharp directions.
    pub n_s: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        let multi = MultiConfig::default();
        Self {
            train: TrainConfig::default(),
            dataset: DatasetKind::Mnist,
            m: multi.m,
            algorithm: multi.algorithm,
            topology: multi.topology,
            include_self: multi.include_self,
            n_s: None,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "dataset" => {
                self.dataset = match value {
                    "mnist" => DatasetKind::Mnist,
                    "synthetic" => DatasetKind::Synthetic,
                    other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
                }
            }
            "m" => self.m = parse("m", value)?,
            "algorithm" => self.algorithm = value.parse()?,
            "topology" => self.topology = value.parse()?,
            "include_self" => self.include_self = parse("include_self", value)?,
            "n_s" => {
                self.n_s = match value {
                    "auto" => None,
                    v => Some(parse("n_s", v)?),
                }
            }
            other => self.train.set(other, value)?,
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.apply_text(&text)
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{o}`")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        Ok(())
    }

    pub fn multi(&self) -> MultiConfig {
        MultiConfig {
            train: self.train.clone(),
            m: self.m,
            algorithm: self.algorithm,
            topology: self.topology,
            include_self: self.include_self,
        }
    }

    pub fn analysis(&self) -> AnalysisOptions {
        AnalysisOptions {
            n_s: self.n_s,
            ..AnalysisOptions::from_config(&self.train)
        }
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self.multi().to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        out.push((
            "dataset".into(),
            match self.dataset {
                DatasetKind::Mnist => "mnist".into(),
                DatasetKind::Synthetic => "synthetic".into(),
            },
        ));
        out.push(("n_s".into(), self.n_s.map_or("auto".into(), |n| n.to_string())));
        out
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// `--data-dir`, else the environment variable, else `data/mnist`.
pub fn resolve_data_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_DATA_DIR),
    }
}

/// Training subset (N per class, seeded, then corrupted at rate rho) and the
/// first `n_te` test samples.
pub fn prepare_data(settings: &Settings, data_dir: &Path) -> Result<(LabeledSet, LabeledSet)> {
    let cfg = &settings.train;
    match settings.dataset {
        DatasetKind::Mnist => {
            let files = MnistFiles::in_dir(data_dir)?;
            let full = files.load_train::<f64>()?;
            let mut train = subset_per_class(&full, cfg.n_per_class, cfg.seed)?;
            if cfg.rho > 0.0 {
                train = corrupt_labels(&train, cfg.rho, cfg.seed)?;
            }
            let test = files.load_test::<f64>()?;
            if cfg.n_te > test.len() {
                return Err(Error::Data(format!(
                    "n_te = {} but the test file holds {} samples",
                    cfg.n_te,
                    test.len()
                )));
            }
            Ok((train, test.prefix(cfg.n_te)))
        }
        DatasetKind::Synthetic => {
            let task = GaussianClusters::new(cfg.layer_sizes[0], 1.0, 0);
            let mut train = task.sample::<f64>(cfg.n_per_class, cfg.seed)?;
            if cfg.rho > 0.0 {
                train = corrupt_labels(&train, cfg.rho, cfg.seed)?;
            }
            let test = task.sample::<f64>(cfg.n_te.div_ceil(10), u64::MAX)?;
            Ok((train, test.prefix(cfg.n_te)))
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Activation;

/// Hyperparameters of one training run plus the analysis settings applied to
/// its solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub batch_size: usize,
    /// Weight-decay rate; the penalty is `beta * |w|^2`.
    pub beta: f64,
    /// Decay is active during epochs `0..t_beta`.
    pub t_beta: usize,
    pub init_scale: f64,
    pub dropout: f64,
    pub n_per_class: usize,
    /// Fraction of training labels replaced at random.
    pub rho: f64,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub biases: bool,
    pub stop_threshold: f64,
    pub max_epochs: usize,
    /// 1-based index of the analyzed weight layer.
    pub analysis_layer: usize,
    /// Number of test samples used for history and pairing.
    pub n_te: usize,
    /// Scale applied to every dual shift.
    pub s_w: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            batch_size: 25,
            beta: 0.0,
            t_beta: 200,
            init_scale: 1.0,
            dropout: 0.0,
            n_per_class: 400,
            rho: 0.0,
            seed: 1,
            layer_sizes: vec![784, 30, 30, 10],
            activation: Activation::Relu,
            biases: true,
            stop_threshold: 5e-4,
            max_epochs: 10_000,
            analysis_layer: 2,
            n_te: 2000,
            s_w: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and non-negative, got {}", self.alpha));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init_scale must be positive, got {}", self.init_scale));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.n_per_class == 0 {
            return bad("n_per_class must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return bad(format!("invalid layer_sizes {:?}", self.layer_sizes));
        }
        if !(self.stop_threshold > 0.0) {
            return bad(format!("stop_threshold must be positive, got {}", self.stop_threshold));
        }
        if self.analysis_layer == 0 || self.analysis_layer >= self.layer_sizes.len() {
            return bad(format!(
                "analysis_layer {} outside 1..={}",
                self.analysis_layer,
                self.layer_sizes.len() - 1
            ));
        }
        if !(self.s_w > 0.0 && self.s_w <= 1.0) {
            return bad(format!("s_w must lie in (0, 1], got {}", self.s_w));
        }
        Ok(())
    }

    /// Sets one field from its textual form; keys are the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "alpha" => self.alpha = parse(key, value)?,
            "batch_size" | "B" => self.batch_size = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "t_beta" => self.t_beta = parse(key, value)?,
            "init_scale" | "s" => self.init_scale = parse(key, value)?,
            "dropout" | "d" => self.dropout = parse(key, value)?,
            "n_per_class" | "N" => self.n_per_class = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "layer_sizes" => {
                self.layer_sizes = value
                    .split([',', '-'])
                    .map(|v| parse(key, v))
                    .collect::<Result<_>>()?
            }
            "activation" => self.activation = value.trim().parse()?,
            "biases" => self.biases = parse(key, value)?,
            "stop_threshold" => self.stop_threshold = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "analysis_layer" => self.analysis_layer = parse(key, value)?,
            "n_te" => self.n_te = parse(key, value)?,
            "s_w" => self.s_w = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// `key=value` lines for every field, in declaration order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let sizes = self.layer_sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("alpha", self.alpha.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("beta", self.beta.to_string()),
            ("t_beta", self.t_beta.to_string()),
            ("init_scale", self.init_scale.to_string()),
            ("dropout", self.dropout.to_string()),
            ("n_per_class", self.n_per_class.to_string()),
            ("rho", self.rho.to_string()),
            ("seed", self.seed.to_string()),
            ("layer_sizes", sizes),
            (
                "activation",
                match self.activation {
                    Activation::Relu => "relu".into(),
                    Activation::Tanh => "tanh".into(),
                },
            ),
            ("biases", self.biases.to_string()),
            ("stop_threshold", self.stop_threshold.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("analysis_layer", self.analysis_layer.to_string()),
            ("n_te", self.n_te.to_string()),
            ("s_w", self.s_w.to_string()),
        ]
    }
}

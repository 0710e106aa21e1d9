use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Layer, Mlp};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::trainer::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "awdual-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON model container. Weights are stored row-major per layer
/// (`fan_in x fan_out`) as `f64`, so `f64` models round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Option<Vec<f64>>>,
    pub config: Option<TrainConfig>,
    /// Epochs trained and whether the stop threshold was reached.
    #[serde(default)]
    pub epochs_run: usize,
    #[serde(default)]
    pub converged: bool,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &Mlp<T>, config: Option<&TrainConfig>) -> Self {
        let to_f64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layer_sizes: model.sizes().to_vec(),
            activation: model.activation(),
            weights: model.layers().iter().map(|l| to_f64(l.weights.as_slice())).collect(),
            biases: model.layers().iter().map(|l| l.bias.as_deref().map(to_f64)).collect(),
            config: config.cloned(),
            epochs_run: 0,
            converged: false,
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<Mlp<T>> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let n = self.layer_sizes.len().saturating_sub(1);
        if n == 0 || self.weights.len() != n || self.biases.len() != n {
            return Err(Error::Data("checkpoint layer count mismatch".into()));
        }
        let conv = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let layers = (0..n)
            .map(|s| {
                let (rows, cols) = (self.layer_sizes[s], self.layer_sizes[s + 1]);
                let weights = Matrix::from_vec(rows, cols, conv(&self.weights[s]))
                    .map_err(|e| Error::Data(format!("checkpoint layer {}: {e}", s + 1)))?;
                Ok(Layer {
                    weights,
                    bias: self.biases[s].as_deref().map(conv),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(self.activation, layers).map_err(|e| Error::Data(format!("checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

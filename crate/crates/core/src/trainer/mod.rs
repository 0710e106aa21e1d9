//! Single-learner minibatch SGD with coupled weight decay, inverted dropout and
//! a full-training-set stop rule.

mod config;

pub use config::TrainConfig;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::network::{chunk_ranges, Dropout, Mlp, Workspace};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Real;

/// Losses and error rates after one epoch (evaluation mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_error: f64,
    pub test_loss: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult<T> {
    pub solution: Mlp<T>,
    pub history: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub converged: bool,
    pub config: TrainConfig,
}

impl<T> TrainResult<T> {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.history.last()
    }
}

/// Uniform Xavier initialization with bound `s * sqrt(6 / (n_in + n_out))`;
/// biases start at zero.
pub fn init_xavier<T: Real>(
    sizes: &[usize],
    activation: crate::network::Activation,
    biases: bool,
    scale: f64,
    seed: u64,
) -> Result<Mlp<T>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("init scale must be positive, got {scale}")));
    }
    let mut model = Mlp::zeros(sizes, activation, biases)?;
    let mut rng = stream_rng(seed, Stream::Init);
    for s in 1..=model.num_layers() {
        let layer = model.layer_mut(s);
        let bound = xavier_bound(layer.fan_in(), layer.fan_out(), scale);
        let dist = Uniform::new_inclusive(-bound, bound);
        for w in layer.weights.as_mut_slice() {
            *w = T::lit(dist.sample(&mut rng));
        }
    }
    Ok(model)
}

pub fn xavier_bound(fan_in: usize, fan_out: usize, scale: f64) -> f64 {
    scale * (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Mean evaluation-mode loss and error rate over a whole set.
pub fn evaluate<T: Real>(model: &Mlp<T>, data: &LabeledSet<T>) -> (f64, f64) {
    if data.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let partial: Vec<(T, usize)> = chunk_ranges(data.len())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut ws = Workspace::new(model);
            let mut loss = T::zero();
            let mut wrong = 0;
            for k in lo..hi {
                let (l, ok) = model.evaluate(data.features(k), data.label(k), &mut ws);
                loss += l;
                wrong += usize::from(!ok);
            }
            (loss, wrong)
        })
        .collect();
    let (loss, wrong) = partial
        .into_iter()
        .fold((T::zero(), 0), |(l, w), (pl, pw)| (l + pl, w + pw));
    let n = data.len() as f64;
    (loss.as_f64() / n, wrong as f64 / n)
}

/// One minibatch update `w <- w - alpha (grad + 2 beta w)` (decay on weights
/// only, and only when `beta > 0`). `grad` is scratch space.
#[allow(clippy::too_many_arguments)]
pub fn sgd_step<T: Real, R: Rng>(
    model: &mut Mlp<T>,
    data: &LabeledSet<T>,
    batch: &[usize],
    alpha: T,
    beta: T,
    dropout: Option<&mut Dropout<'_, R>>,
    ws: &mut Workspace<T>,
    grad: &mut Mlp<T>,
) {
    batch_gradient_into(model, data, batch, dropout, ws, grad);
    if beta > T::zero() {
        let two_beta = beta + beta;
        for s in 1..=model.num_layers() {
            let w = model.layer(s).weights.as_slice();
            crate::linalg::axpy(two_beta, w, grad.layer_mut(s).weights.as_mut_slice());
        }
    }
    model.axpy(-alpha, grad);
}

/// Mean minibatch gradient written into `grad` (overwritten).
pub fn batch_gradient_into<T: Real, R: Rng>(
    model: &Mlp<T>,
    data: &LabeledSet<T>,
    batch: &[usize],
    mut dropout: Option<&mut Dropout<'_, R>>,
    ws: &mut Workspace<T>,
    grad: &mut Mlp<T>,
) {
    grad.fill_zero();
    let weight = T::one() / T::from_usize_lossy(batch.len());
    for &k in batch {
        model.accumulate_gradient(data.features(k), data.label(k), weight, dropout.as_deref_mut(), ws, grad);
    }
}

/// Trains from a fresh Xavier initialization until the training loss reaches
/// the stop threshold or `max_epochs` have run.
pub fn train<T: Real>(config: &TrainConfig, train_set: &LabeledSet<T>, test_set: &LabeledSet<T>) -> Result<TrainResult<T>> {
    config.validate()?;
    let model = init_xavier(
        &config.layer_sizes,
        config.activation,
        config.biases,
        config.init_scale,
        config.seed,
    )?;
    train_from(config, model, train_set, test_set)
}

/// As [`train`], starting from the given parameters.
pub fn train_from<T: Real>(
    config: &TrainConfig,
    mut model: Mlp<T>,
    train_set: &LabeledSet<T>,
    test_set: &LabeledSet<T>,
) -> Result<TrainResult<T>> {
    config.validate()?;
    check_data(&model, train_set)?;
    check_data(&model, test_set)?;
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut shuffle_rng = stream_rng(config.seed, Stream::Shuffle);
    let mut dropout_rng = stream_rng(config.seed, Stream::Dropout);
    let mut ws = Workspace::new(&model);
    let mut grad = model.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let alpha = T::lit(config.alpha);
    let mut history = Vec::new();
    let mut converged = false;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let beta = if epoch < config.t_beta { T::lit(config.beta) } else { T::zero() };
        for batch in order.chunks(config.batch_size) {
            let mut dropout = Dropout {
                rate: config.dropout,
                rng: &mut dropout_rng,
            };
            let dropout = (config.dropout > 0.0).then_some(&mut dropout);
            sgd_step(&mut model, train_set, batch, alpha, beta, dropout, &mut ws, &mut grad);
        }
        let record = epoch_record(epoch + 1, &model, train_set, test_set);
        if !record.train_loss.is_finite() {
            return Err(Error::Numerical(format!("training diverged at epoch {}", epoch + 1)));
        }
        let done = record.train_loss <= config.stop_threshold;
        history.push(record);
        if done {
            converged = true;
            break;
        }
    }
    Ok(TrainResult {
        solution: model,
        epochs_run: history.len(),
        history,
        converged,
        config: config.clone(),
    })
}

pub(crate) fn epoch_record<T: Real>(epoch: usize, model: &Mlp<T>, train_set: &LabeledSet<T>, test_set: &LabeledSet<T>) -> EpochRecord {
    let (train_loss, train_error) = evaluate(model, train_set);
    let (test_loss, test_error) = if test_set.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        evaluate(model, test_set)
    };
    EpochRecord {
        epoch,
        train_loss,
        train_error,
        test_loss,
        test_error,
    }
}

pub(crate) fn check_data<T: Real>(model: &Mlp<T>, data: &LabeledSet<T>) -> Result<()> {
    if data.dim() != model.sizes()[0] {
        return Err(Error::Shape(format!(
            "data of dimension {} for input layer of width {}",
            data.dim(),
            model.sizes()[0]
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l as usize >= model.num_classes()) {
        return Err(Error::Data(format!("label {bad} for {} classes", model.num_classes())));
    }
    Ok(())
}

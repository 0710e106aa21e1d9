//! Lockstep simulation of synchronous (SSGD) and decentralized (DPSGD)
//! multi-learner SGD, plus the minibatch-noise probe.

mod noise;

pub use noise::{draw_probe_batches, noise_strength, NoiseSpectrum, DEFAULT_PROBE_BATCHES};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::network::{Dropout, Mlp, Workspace};
use crate::rng::{indexed_stream_rng, stream_rng, Stream};
use crate::scalar::Real;
use crate::trainer::{batch_gradient_into, check_data, epoch_record, init_xavier, EpochRecord, TrainConfig, TrainResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ssgd,
    #[default]
    Dpsgd,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssgd" => Ok(Algorithm::Ssgd),
            "dpsgd" => Ok(Algorithm::Dpsgd),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Ssgd => "ssgd",
            Algorithm::Dpsgd => "dpsgd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    All,
    #[default]
    Ring,
}

impl std::str::FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TopologyKind::All),
            "ring" => Ok(TopologyKind::Ring),
            other => Err(Error::Config(format!("unknown topology `{other}`"))),
        }
    }
}

impl std::fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TopologyKind::All => "all",
            TopologyKind::Ring => "ring",
        })
    }
}

/// Which learners a DPSGD learner averages before stepping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub kind: TopologyKind,
    pub m: usize,
    /// Ring only: average `j` together with its two neighbors.
    pub include_self: bool,
}

impl Topology {
    pub fn new(kind: TopologyKind, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("need at least one learner".into()));
        }
        Ok(Self {
            kind,
            m,
            include_self: false,
        })
    }

    /// Learners averaged into `W_s,j`, in summation order. With `m = 2` both
    /// ring neighbors are the same learner.
    pub fn neighbors(&self, j: usize) -> Vec<usize> {
        match self.kind {
            TopologyKind::All => (0..self.m).collect(),
            TopologyKind::Ring => {
                let prev = (j + self.m - 1) % self.m;
                let next = (j + 1) % self.m;
                if self.include_self {
                    vec![prev, j, next]
                } else {
                    vec![prev, next]
                }
            }
        }
    }
}

/// One simulated learner: its weights and its private dropout stream.
#[derive(Debug, Clone)]
pub struct LearnerState<T> {
    pub index: usize,
    pub params: Mlp<T>,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiConfig {
    /// Base run settings; `batch_size` is the per-learner batch `B`.
    pub train: TrainConfig,
    pub m: usize,
    pub algorithm: Algorithm,
    pub topology: TopologyKind,
    pub include_self: bool,
}

impl Default for MultiConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                batch_size: 200,
                ..TrainConfig::default()
            },
            m: 5,
            algorithm: Algorithm::Dpsgd,
            topology: TopologyKind::Ring,
            include_self: false,
        }
    }
}

impl MultiConfig {
    pub fn topology(&self) -> Result<Topology> {
        let mut t = Topology::new(self.topology, self.m)?;
        t.include_self = self.include_self;
        Ok(t)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = self.train.to_pairs();
        out.push(("m", self.m.to_string()));
        out.push(("algorithm", self.algorithm.to_string()));
        out.push(("topology", self.topology.to_string()));
        out.push(("include_self", self.include_self.to_string()));
        out
    }
}

/// Mean of all learner weights, accumulated in learner order.
pub fn mean_params<T: Real>(states: &[LearnerState<T>]) -> Mlp<T> {
    let refs: Vec<&Mlp<T>> = states.iter().map(|s| &s.params).collect();
    Mlp::mean_of(&refs)
}

/// `max_j |W_j - W_a|`.
pub fn spread<T: Real>(states: &[LearnerState<T>]) -> f64 {
    let mean = mean_params(states);
    states
        .iter()
        .map(|s| s.params.distance_sq(&mean).as_f64().sqrt())
        .fold(0.0, f64::max)
}

fn learner_gradients<T: Real>(
    states: &mut [LearnerState<T>],
    points: &[&Mlp<T>],
    data: &LabeledSet<T>,
    batches: &[&[usize]],
    dropout: f64,
) -> Vec<Mlp<T>> {
    states
        .par_iter_mut()
        .zip(points.par_iter())
        .zip(batches.par_iter())
        .map(|((state, point), batch)| {
            let mut grad = point.zeros_like();
            if batch.is_empty() {
                return grad;
            }
            let mut ws = Workspace::new(point);
            let mut d = Dropout {
                rate: dropout,
                rng: &mut state.rng,
            };
            let d = (dropout > 0.0).then_some(&mut d);
            batch_gradient_into(point, data, batch, d, &mut ws, &mut grad);
            grad
        })
        .collect()
}

fn add_decay<T: Real>(grad: &mut Mlp<T>, at: &Mlp<T>, beta: T) {
    if beta > T::zero() {
        for s in 1..=at.num_layers() {
            crate::linalg::axpy(beta + beta, at.layer(s).weights.as_slice(), grad.layer_mut(s).weights.as_mut_slice());
        }
    }
}

fn check_round<T: Real>(states: &[LearnerState<T>], batches: &[&[usize]]) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Input("no learners".into()));
    }
    if batches.len() != states.len() {
        return Err(Error::Input(format!("{} minibatches for {} learners", batches.len(), states.len())));
    }
    Ok(())
}

fn check_finite<T: Real>(states: &[LearnerState<T>]) -> Result<()> {
    match states.iter().find(|s| !s.params.is_finite()) {
        Some(s) => Err(Error::Numerical(format!("learner {} produced a non-finite update", s.index))),
        None => Ok(()),
    }
}

/// `W_a = mean_j W_j`, then `W_j <- W_a - alpha grad L^{mu_j}(W_a)`.
pub fn ssgd_round<T: Real>(
    states: &mut [LearnerState<T>],
    data: &LabeledSet<T>,
    batches: &[&[usize]],
    alpha: T,
    beta: T,
    dropout: f64,
) -> Result<()> {
    check_round(states, batches)?;
    let avg = mean_params(states);
    let points = vec![&avg; states.len()];
    let grads = learner_gradients(states, &points, data, batches, dropout);
    for (state, mut g) in states.iter_mut().zip(grads) {
        add_decay(&mut g, &avg, beta);
        state.params = avg.clone();
        state.params.axpy(-alpha, &g);
    }
    check_finite(states)
}

/// `W_j <- W_s,j - alpha grad L^{mu_j}(W_j)` with `W_s,j` the topology average.
pub fn dpsgd_round<T: Real>(
    states: &mut [LearnerState<T>],
    data: &LabeledSet<T>,
    batches: &[&[usize]],
    alpha: T,
    beta: T,
    dropout: f64,
    topology: &Topology,
) -> Result<()> {
    check_round(states, batches)?;
    if topology.m != states.len() {
        return Err(Error::Input(format!("topology for {} learners, {} given", topology.m, states.len())));
    }
    let current: Vec<Mlp<T>> = states.iter().map(|s| s.params.clone()).collect();
    let points: Vec<&Mlp<T>> = current.iter().collect();
    let grads = learner_gradients(states, &points, data, batches, dropout);
    let avg_all = Mlp::mean_of(&points);
    for (j, (state, mut g)) in states.iter_mut().zip(grads).enumerate() {
        add_decay(&mut g, &current[j], beta);
        let base = match topology.kind {
            TopologyKind::All => avg_all.clone(),
            TopologyKind::Ring => {
                let nb: Vec<&Mlp<T>> = topology.neighbors(j).into_iter().map(|i| &current[i]).collect();
                Mlp::mean_of(&nb)
            }
        };
        state.params = base;
        state.params.axpy(-alpha, &g);
    }
    check_finite(states)
}

/// Splits one shuffled epoch into rounds: consecutive groups of `m * B`
/// indices, each cut into `m` consecutive batches. A short final group is
/// shared out as evenly as possible.
pub fn round_batches(order: &[usize], m: usize, b: usize) -> Vec<Vec<&[usize]>> {
    order
        .chunks(m * b)
        .map(|group| {
            if group.len() == m * b {
                group.chunks(b).collect()
            } else {
                let (q, r) = (group.len() / m, group.len() % m);
                let mut at = 0;
                (0..m)
                    .map(|j| {
                        let len = q + usize::from(j < r);
                        let batch = &group[at..at + len];
                        at += len;
                        batch
                    })
                    .collect()
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MultiResult<T> {
    /// Solution is the mean weight `W_a` at the stop.
    pub result: TrainResult<T>,
    pub learners: Vec<LearnerState<T>>,
    /// `max_j |W_j - W_a|` after every round.
    pub round_spread: Vec<f64>,
    /// Spread at the end of every epoch, aligned with the history.
    pub epoch_spread: Vec<f64>,
    pub rounds_run: usize,
}

/// Runs lockstep rounds until the training loss of `W_a` reaches the stop
/// threshold (checked each epoch), `max_epochs`, or `stop_at_round` rounds.
pub fn run_multilearner<T: Real>(
    cfg: &MultiConfig,
    train_set: &LabeledSet<T>,
    test_set: &LabeledSet<T>,
    stop_at_round: Option<usize>,
) -> Result<MultiResult<T>> {
    let tc = &cfg.train;
    tc.validate()?;
    let topology = cfg.topology()?;
    let init = init_xavier::<T>(&tc.layer_sizes, tc.activation, tc.biases, tc.init_scale, tc.seed)?;
    check_data(&init, train_set)?;
    check_data(&init, test_set)?;
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut states: Vec<LearnerState<T>> = (0..cfg.m)
        .map(|j| LearnerState {
            index: j,
            params: init.clone(),
            rng: indexed_stream_rng(tc.seed, Stream::Dropout, j as u64),
        })
        .collect();
    let mut shuffle_rng = stream_rng(tc.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let alpha = T::lit(tc.alpha);
    let mut history = Vec::new();
    let mut round_spread = Vec::new();
    let mut epoch_spread = Vec::new();
    let mut converged = false;
    let mut rounds = 0;

    'epochs: for epoch in 0..tc.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let beta = if epoch < tc.t_beta { T::lit(tc.beta) } else { T::zero() };
        for batches in round_batches(&order, cfg.m, tc.batch_size) {
            if stop_at_round.is_some_and(|r| rounds >= r) {
                break 'epochs;
            }
            match cfg.algorithm {
                Algorithm::Ssgd => ssgd_round(&mut states, train_set, &batches, alpha, beta, tc.dropout)?,
                Algorithm::Dpsgd => dpsgd_round(&mut states, train_set, &batches, alpha, beta, tc.dropout, &topology)?,
            }
            rounds += 1;
            round_spread.push(spread(&states));
        }
        let avg = mean_params(&states);
        let record: EpochRecord = epoch_record(epoch + 1, &avg, train_set, test_set);
        if !record.train_loss.is_finite() {
            return Err(Error::Numerical(format!("training diverged at epoch {}", epoch + 1)));
        }
        let done = record.train_loss <= tc.stop_threshold;
        history.push(record);
        epoch_spread.push(spread(&states));
        if done {
            converged = true;
            break;
        }
    }
    Ok(MultiResult {
        result: TrainResult {
            solution: mean_params(&states),
            epochs_run: history.len(),
            history,
            converged,
            config: tc.clone(),
        },
        learners: states,
        round_spread,
        epoch_spread,
        rounds_run: rounds,
    })
}

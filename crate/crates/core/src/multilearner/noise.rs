use rayon::prelude::*;

use super::Algorithm;
use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::linalg::EigenBasis;
use crate::network::Mlp;
use crate::rng::{stream_rng, Stream};
use crate::scalar::Real;

pub const DEFAULT_PROBE_BATCHES: usize = 100;

/// `count` minibatches of `batch` distinct indices from `0..n`.
pub fn draw_probe_batches(n: usize, batch: usize, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch == 0 || batch > n {
        return Err(Error::Input(format!("probe batch of {batch} from {n} samples")));
    }
    let mut rng = stream_rng(seed, Stream::NoiseProbe);
    Ok((0..count)
        .map(|_| rand::seq::index::sample(&mut rng, n, batch).into_vec())
        .collect())
}

/// Per-direction minibatch noise next to the curvature of each direction.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpectrum<T> {
    pub h: Vec<T>,
    pub delta: Vec<T>,
}

/// Standard deviation, over the probe minibatches, of the layer-`s` gradient
/// projected on each basis direction. SSGD evaluates every gradient at the
/// mean weight; DPSGD cycles through the learners' own weights.
pub fn noise_strength<T: Real>(
    learners: &[&Mlp<T>],
    algorithm: Algorithm,
    data: &LabeledSet<T>,
    basis: &EigenBasis<T>,
    s: usize,
    batches: &[Vec<usize>],
) -> Result<NoiseSpectrum<T>> {
    if learners.is_empty() || batches.is_empty() {
        return Err(Error::Input("noise probe needs learners and minibatches".into()));
    }
    learners[0].check_layer(s)?;
    let m = learners[0].layer(s).weights.as_slice().len();
    if basis.dim() != m {
        return Err(Error::Shape(format!("basis of dimension {} for {m} weights", basis.dim())));
    }
    let avg = Mlp::mean_of(learners);
    let projections: Vec<Vec<T>> = batches
        .par_iter()
        .enumerate()
        .map(|(b, batch)| {
            let point = match algorithm {
                Algorithm::Ssgd => &avg,
                Algorithm::Dpsgd => learners[b % learners.len()],
            };
            let g = point.batch_gradient(data, batch);
            basis.project(g.layer(s).weights.as_slice())
        })
        .collect();
    let count = T::from_usize_lossy(projections.len());
    // shifted by the first projection so identical gradients give exactly zero
    let first = &projections[0];
    let mut mean = vec![T::zero(); m];
    for p in &projections[1..] {
        for n in 0..m {
            mean[n] += p[n] - first[n];
        }
    }
    for n in 0..m {
        mean[n] = first[n] + mean[n] / count;
    }
    let mut var = vec![T::zero(); m];
    for p in &projections {
        for n in 0..m {
            let d = p[n] - mean[n];
            var[n] += d * d;
        }
    }
    Ok(NoiseSpectrum {
        h: basis.values().to_vec(),
        delta: var.into_iter().map(|v| (v / count).sqrt()).collect(),
    })
}

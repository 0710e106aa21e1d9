//! Labeled image sets: IDX ingestion, class-balanced subsetting, label
//! corruption, synthetic fixtures, and test→train partner pairing.

mod idx;
mod pairing;
mod synthetic;

pub use idx::{load_idx, write_idx, MnistFiles};
pub use pairing::{pair_test_train, Pair, PairSet};
pub use synthetic::GaussianClusters;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Real;

pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Mnist,
    Synthetic,
}

/// Samples stored contiguously: sample `k` occupies `features[k*dim..(k+1)*dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet<T> {
    dim: usize,
    features: Vec<T>,
    labels: Vec<u8>,
    corrupted: Vec<bool>,
    provenance: Provenance,
}

impl<T: Real> LabeledSet<T> {
    /// Builds a set, checking labels are in `0..NUM_CLASSES` and, for MNIST
    /// provenance, that every pixel lies in `[0, 1]`.
    pub fn new(dim: usize, features: Vec<T>, labels: Vec<u8>, provenance: Provenance) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("feature dimension must be positive".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Shape(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Input(format!("label {bad} out of range")));
        }
        if !features.iter().all(|x| x.is_finite()) {
            return Err(Error::Input("non-finite feature value".into()));
        }
        if provenance == Provenance::Mnist && features.iter().any(|&x| x < T::zero() || x > T::one()) {
            return Err(Error::Input("pixel value outside [0, 1]".into()));
        }
        let corrupted = vec![false; labels.len()];
        Ok(Self {
            dim,
            features,
            labels,
            corrupted,
            provenance,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn features(&self, k: usize) -> &[T] {
        &self.features[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, k: usize) -> usize {
        self.labels[k] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn corrupted_flags(&self) -> &[bool] {
        &self.corrupted
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// New set with the given samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut corrupted = Vec::with_capacity(indices.len());
        for &k in indices {
            features.extend_from_slice(self.features(k));
            labels.push(self.labels[k]);
            corrupted.push(self.corrupted[k]);
        }
        Self {
            dim: self.dim,
            features,
            labels,
            corrupted,
            provenance: self.provenance,
        }
    }

    /// First `n` samples (all of them if `n >= len`).
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Keeps exactly `n_per_class` samples of every class.
///
/// All indices are shuffled with the seeded generator and the first
/// `n_per_class` hits of each class are kept, in shuffled order.
pub fn subset_per_class<T: Real>(set: &LabeledSet<T>, n_per_class: usize, seed: u64) -> Result<LabeledSet<T>> {
    let counts = set.class_counts();
    if let Some((class, have)) = counts.iter().enumerate().find(|(_, &c)| c < n_per_class) {
        return Err(Error::Data(format!(
            "class {class} has {have} samples, {n_per_class} requested"
        )));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Subset));
    let mut taken = [0usize; NUM_CLASSES];
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&k| {
            let c = set.label(k);
            if taken[c] < n_per_class {
                taken[c] += 1;
                true
            } else {
                false
            }
        })
        .collect();
    Ok(set.select(&keep))
}

/// Replaces the labels of `⌊rho·len⌋` seeded-chosen samples with uniform
/// draws over all classes (the draw may reproduce the true label).
pub fn corrupt_labels<T: Real>(set: &LabeledSet<T>, rho: f64, seed: u64) -> Result<LabeledSet<T>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Input(format!("mislabel fraction {rho} outside [0, 1]")));
    }
    let mut out = set.clone();
    let count = (rho * set.len() as f64).floor() as usize;
    let mut rng = stream_rng(seed, Stream::Corruption);
    let chosen = rand::seq::index::sample(&mut rng, set.len(), count);
    let mut chosen: Vec<usize> = chosen.into_iter().collect();
    chosen.sort_unstable();
    for k in chosen {
        out.labels[k] = rng.gen_range(0..NUM_CLASSES) as u8;
        out.corrupted[k] = true;
    }
    Ok(out)
}

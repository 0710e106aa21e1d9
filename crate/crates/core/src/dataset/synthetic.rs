use rand::Rng;
use rand_distr::StandardNormal;

use super::{LabeledSet, Provenance, NUM_CLASSES};
use crate::error::Result;
use crate::rng::{indexed_stream_rng, stream_rng, Stream};
use crate::scalar::Real;

/// Ten unit-variance Gaussian clusters; a dataset-free stand-in for MNIST in
/// fast tests. Cluster centers are fixed by the seed, samples by a separate
/// draw seed so train and test sets share centers.
#[derive(Debug, Clone)]
pub struct GaussianClusters {
    dim: usize,
    centers: Vec<Vec<f64>>,
}

impl GaussianClusters {
    pub const DEFAULT_DIM: usize = 20;

    /// Centers are drawn from `N(0, center_scale²)` per coordinate.
    pub fn new(dim: usize, center_scale: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Synthetic);
        let centers = (0..NUM_CLASSES)
            .map(|_| {
                (0..dim)
                    .map(|_| center_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self { dim, centers }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `n_per_class` samples of each class, classes interleaved.
    pub fn sample<T: Real>(&self, n_per_class: usize, draw_seed: u64) -> Result<LabeledSet<T>> {
        let mut rng = indexed_stream_rng(draw_seed, Stream::Synthetic, 1);
        let mut features = Vec::with_capacity(n_per_class * NUM_CLASSES * self.dim);
        let mut labels = Vec::with_capacity(n_per_class * NUM_CLASSES);
        for _ in 0..n_per_class {
            for (class, center) in self.centers.iter().enumerate() {
                for c in center {
                    let z: f64 = rng.sample(StandardNormal);
                    features.push(T::lit(c + z));
                }
                labels.push(class as u8);
            }
        }
        LabeledSet::new(self.dim, features, labels, Provenance::Synthetic)
    }
}

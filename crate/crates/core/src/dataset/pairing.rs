use rayon::prelude::*;

use super::{LabeledSet, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A test sample and its nearest same-label training sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub test: usize,
    pub partner: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Pair> {
        self.pairs.iter()
    }
}

/// Pairs each of the first `n_te` test samples with the training sample of the
/// same label at minimum Euclidean distance (lowest training index on ties).
///
/// Labels are compared as stored, so partners always share the label used to
/// evaluate both losses. Several test samples may share one partner.
pub fn pair_test_train<T: Real>(train: &LabeledSet<T>, test: &LabeledSet<T>, n_te: usize) -> Result<PairSet> {
    if n_te > test.len() {
        return Err(Error::Input(format!("n_te = {n_te} exceeds test set size {}", test.len())));
    }
    if train.dim() != test.dim() {
        return Err(Error::Shape(format!(
            "train dimension {} vs test dimension {}",
            train.dim(),
            test.dim()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for k in 0..train.len() {
        by_class[train.label(k)].push(k);
    }
    if let Some(k) = (0..n_te).find(|&k| by_class[test.label(k)].is_empty()) {
        return Err(Error::Data(format!(
            "label {} of test sample {k} has no training representative",
            test.label(k)
        )));
    }

    let pairs = (0..n_te)
        .into_par_iter()
        .map(|k| {
            let x = test.features(k);
            let mut best = (usize::MAX, f64::INFINITY);
            for &j in &by_class[test.label(k)] {
                let d2 = squared_distance(x, train.features(j));
                // strict comparison over ascending j keeps the lowest index on ties
                if d2 < best.1 {
                    best = (j, d2);
                }
            }
            Pair {
                test: k,
                partner: best.0,
                distance: best.1.sqrt(),
            }
        })
        .collect();
    Ok(PairSet { pairs })
}

fn squared_distance<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y).as_f64();
            d * d
        })
        .sum()
}

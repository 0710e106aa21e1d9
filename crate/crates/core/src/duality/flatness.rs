use serde::Serialize;

use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::network::{LayerCache, Mlp};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatnessOptions {
    /// First trial displacement.
    pub initial: f64,
    /// Bisection stops once the bracket is narrower than `rel_tol * θ`.
    pub rel_tol: f64,
    /// Maximum number of bracket doublings before a side is declared unbounded.
    pub max_doublings: u32,
}

impl Default for FlatnessOptions {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            rel_tol: 1e-4,
            max_doublings: 30,
        }
    }
}

/// Width of the region around a solution along one direction where the loss
/// stays within a factor of two of its value at the solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Flatness {
    pub width: f64,
    pub theta_plus: f64,
    pub theta_minus: f64,
    /// A side hit the doubling cap without crossing the threshold.
    pub capped: bool,
}

/// `F = θ+ + θ-` for a loss profile `loss(θ)` along a line, with `θ±` the
/// largest displacements keeping `loss(±θ) <= 2 loss(0)`.
pub fn flatness_along<F: FnMut(f64) -> f64>(mut loss: F, opts: FlatnessOptions) -> Result<Flatness> {
    let l0 = loss(0.0);
    if !(l0 > 0.0 && l0.is_finite()) {
        return Err(Error::Input(format!("flatness needs a positive finite loss, got {l0}")));
    }
    let limit = 2.0 * l0;
    let mut side = |sign: f64| -> Result<(f64, bool)> {
        let mut within = |theta: f64| -> Result<bool> {
            let l = loss(sign * theta);
            if l.is_nan() {
                return Err(Error::Numerical(format!("NaN loss at displacement {}", sign * theta)));
            }
            Ok(l <= limit)
        };
        let (mut lo, mut hi) = (0.0, opts.initial);
        let mut doublings = 0;
        while within(hi)? {
            if doublings == opts.max_doublings {
                return Ok((hi, true));
            }
            lo = hi;
            hi *= 2.0;
            doublings += 1;
        }
        while hi - lo > opts.rel_tol * hi {
            let mid = 0.5 * (lo + hi);
            if within(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((lo, false))
    };
    let (theta_plus, cap_plus) = side(1.0)?;
    let (theta_minus, cap_minus) = side(-1.0)?;
    Ok(Flatness {
        width: theta_plus + theta_minus,
        theta_plus,
        theta_minus,
        capped: cap_plus || cap_minus,
    })
}

/// Flatness of the mean training loss along `direction` in the weights of
/// layer `s`.
pub fn flatness<T: Real>(
    model: &Mlp<T>,
    train: &LabeledSet<T>,
    direction: &[T],
    s: usize,
    opts: FlatnessOptions,
) -> Result<Flatness> {
    let cache = LayerCache::new(model, train, s)?;
    flatness_cached(model, &cache, direction, opts)
}

pub fn flatness_cached<T: Real>(model: &Mlp<T>, cache: &LayerCache<T>, direction: &[T], opts: FlatnessOptions) -> Result<Flatness> {
    let s = cache.layer();
    let w = model.layer(s).weights.as_slice();
    if direction.len() != w.len() {
        return Err(Error::Shape(format!(
            "direction of length {} for {} weights",
            direction.len(),
            w.len()
        )));
    }
    let mut shifted = w.to_vec();
    flatness_along(
        |theta| {
            let t = T::lit(theta);
            for ((x, &w0), &d) in shifted.iter_mut().zip(w).zip(direction) {
                *x = w0 + t * d;
            }
            cache.mean_loss(model, &shifted).as_f64()
        },
        opts,
    )
}

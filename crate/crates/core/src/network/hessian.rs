use rayon::prelude::*;

use super::{outer_accumulate, Mlp, Workspace};
use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymmetricMatrix};
use crate::scalar::Real;

/// Largest layer (in weights) whose Hessian is formed unless overridden.
pub const DEFAULT_HESSIAN_CAP: usize = 4096;

/// Samples per chunk in the fixed-order parallel reductions.
const CHUNK: usize = 128;

/// Hessian of the mean training loss restricted to the weights of layer `s`.
#[derive(Debug, Clone)]
pub struct LayerHessian<T> {
    pub layer: usize,
    pub matrix: SymmetricMatrix<T>,
    /// `max |A - Aᵀ|` of the raw finite-difference matrix.
    pub asymmetry: T,
    /// `max |A|` of the raw finite-difference matrix.
    pub max_abs: T,
}

impl<T: Real> LayerHessian<T> {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn relative_asymmetry(&self) -> T {
        if self.max_abs == T::zero() {
            T::zero()
        } else {
            self.asymmetry / self.max_abs
        }
    }
}

/// Finite-difference step for a weight of value `w`.
#[inline]
pub fn fd_step<T: Real>(w: T) -> T {
    let h = T::lit(1e-5);
    h.max(h * w.abs())
}

/// Central-difference Hessian from a gradient oracle. `gradient_difference(n, h)`
/// must return `∇L(w + h e_n) - ∇L(w - h e_n)`; column `n` of the result is that
/// difference divided by `2h`. The raw (unsymmetrized) matrix is returned.
pub fn central_difference_hessian<T, F>(w: &[T], gradient_difference: F) -> Result<Matrix<T>>
where
    T: Real,
    F: Fn(usize, T) -> Vec<T> + Sync,
{
    let m = w.len();
    let columns: Vec<Vec<T>> = (0..m)
        .into_par_iter()
        .map(|n| {
            let h = fd_step(w[n]);
            let two_h = h + h;
            let mut col = gradient_difference(n, h);
            for v in col.iter_mut() {
                *v /= two_h;
            }
            col
        })
        .collect();
    let mut a = Matrix::zeros(m, m);
    for (n, col) in columns.iter().enumerate() {
        if col.len() != m {
            return Err(Error::Shape(format!("gradient of length {} for {m} weights", col.len())));
        }
        for (r, v) in col.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite second difference at ({r}, {n})")));
            }
            a.set(r, n, *v);
        }
    }
    Ok(a)
}

/// Layer-`(s-1)` activities and layer-`s` pre-activations of every sample in a
/// set, so that losses and gradients in the weights of layer `s` only need the
/// layers above.
#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    layer: usize,
    width_in: usize,
    width_out: usize,
    a_prev: Vec<T>,
    z: Vec<T>,
    gate_len: usize,
    gates: Vec<T>,
    labels: Vec<usize>,
}

impl<T: Real> LayerCache<T> {
    pub fn new(model: &Mlp<T>, data: &LabeledSet<T>, s: usize) -> Result<Self> {
        model.check_layer(s)?;
        if data.dim() != model.sizes()[0] {
            return Err(Error::Shape(format!(
                "data of dimension {} for input layer of width {}",
                data.dim(),
                model.sizes()[0]
            )));
        }
        if data.is_empty() {
            return Err(Error::Data("empty data set".into()));
        }
        let width_in = model.sizes()[s - 1];
        let width_out = model.sizes()[s];
        let w_s = model.layer(s).weights.as_slice();
        let rows: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..data.len())
            .into_par_iter()
            .map_init(
                || Workspace::new(model),
                |ws, k| {
                    let a = model.activity(data.features(k), s - 1);
                    let mut z = vec![T::zero(); width_out];
                    model.layer_preactivation(s, &a, w_s, &mut z);
                    let mut gates = Vec::new();
                    model.relu_gates(s, &z, data.label(k), ws, &mut gates);
                    (a, z, gates)
                },
            )
            .collect();
        let gate_len = model.gate_len(s);
        let mut a_prev = Vec::with_capacity(data.len() * width_in);
        let mut z = Vec::with_capacity(data.len() * width_out);
        let mut gates = Vec::with_capacity(data.len() * gate_len);
        for (a, zk, gk) in rows {
            a_prev.extend(a);
            z.extend(zk);
            gates.extend(gk);
        }
        Ok(Self {
            layer: s,
            width_in,
            width_out,
            a_prev,
            z,
            gate_len,
            gates,
            labels: data.labels().iter().map(|&l| l as usize).collect(),
        })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of weights in layer `s`.
    pub fn num_weights(&self) -> usize {
        self.width_in * self.width_out
    }

    pub fn a_prev(&self, k: usize) -> &[T] {
        &self.a_prev[k * self.width_in..(k + 1) * self.width_in]
    }

    pub fn preactivation(&self, k: usize) -> &[T] {
        &self.z[k * self.width_out..(k + 1) * self.width_out]
    }

    /// ReLU pattern above layer `s` at the cached point.
    pub fn gates(&self, k: usize) -> &[T] {
        &self.gates[k * self.gate_len..(k + 1) * self.gate_len]
    }

    pub fn label(&self, k: usize) -> usize {
        self.labels[k]
    }

    /// Mean loss with layer-`s` weights replaced by `w_s`.
    pub fn mean_loss(&self, model: &Mlp<T>, w_s: &[T]) -> T {
        let partial: Vec<T> = chunk_ranges(self.len())
            .into_par_iter()
            .map(|(lo, hi)| {
                let mut ws = Workspace::new(model);
                let mut acc = T::zero();
                for k in lo..hi {
                    acc += model.tail_loss(self.layer, self.a_prev(k), self.label(k), w_s, &mut ws);
                }
                acc
            })
            .collect();
        partial.into_iter().sum::<T>() / T::from_usize_lossy(self.len())
    }

    /// Mean gradient in the layer-`s` weights, evaluated at `w_s`.
    pub fn mean_gradient(&self, model: &Mlp<T>, w_s: &[T]) -> Vec<T> {
        let m = self.num_weights();
        let inv = T::one() / T::from_usize_lossy(self.len());
        let partial: Vec<Vec<T>> = chunk_ranges(self.len())
            .into_par_iter()
            .map(|(lo, hi)| {
                let mut ws = Workspace::new(model);
                let mut g = vec![T::zero(); m];
                for k in lo..hi {
                    model.tail_gradient(self.layer, self.a_prev(k), self.label(k), w_s, inv, &mut ws, &mut g);
                }
                g
            })
            .collect();
        let mut total = vec![T::zero(); m];
        for g in partial {
            crate::linalg::axpy(T::one(), &g, &mut total);
        }
        total
    }
}

pub(crate) fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(CHUNK)).map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(n))).collect()
}

/// Hessian of the mean training loss with respect to the weights of layer `s`
/// (1-based), by central differences of the analytic layer gradient.
pub fn layer_hessian<T: Real>(model: &Mlp<T>, train: &LabeledSet<T>, s: usize, cap: usize) -> Result<LayerHessian<T>> {
    model.check_layer(s)?;
    let m = model.layer(s).fan_in() * model.layer(s).fan_out();
    if m > cap {
        return Err(Error::Input(format!("layer {s} has {m} weights, above the Hessian cap of {cap}")));
    }
    let cache = LayerCache::new(model, train, s)?;
    layer_hessian_cached(model, &cache)
}

pub(crate) fn layer_hessian_cached<T: Real>(model: &Mlp<T>, cache: &LayerCache<T>) -> Result<LayerHessian<T>> {
    let s = cache.layer();
    let width = cache.width_out;
    let w = model.layer(s).weights.as_slice();
    let inv = T::one() / T::from_usize_lossy(cache.len());

    // Perturbing w_ij only moves z_j, by ±h·a_i, so samples with a_i = 0 drop
    // out of the difference and the layers below never need recomputing.
    // ReLUs are held at their unperturbed pattern: a step that crosses a kink
    // would otherwise add an O(1/h) spike instead of curvature.
    let raw = central_difference_hessian(w, |n, h| {
        let (i, j) = (n / width, n % width);
        let mut ws = Workspace::new(model);
        let mut col = vec![T::zero(); w.len()];
        let mut z = vec![T::zero(); width];
        let mut d_plus = Vec::with_capacity(width);
        let mut d_minus = Vec::with_capacity(width);
        for k in 0..cache.len() {
            let a = cache.a_prev(k);
            if a[i] == T::zero() {
                continue;
            }
            let label = cache.label(k);
            let shift = h * a[i];
            z.copy_from_slice(cache.preactivation(k));
            z[j] += shift;
            model.upper_loss_gated(s, &z, label, &mut ws, cache.gates(k), Some(&mut d_plus));
            z.copy_from_slice(cache.preactivation(k));
            z[j] -= shift;
            model.upper_loss_gated(s, &z, label, &mut ws, cache.gates(k), Some(&mut d_minus));
            for (p, q) in d_plus.iter_mut().zip(&d_minus) {
                *p -= *q;
            }
            outer_accumulate(a, &d_plus, inv, &mut col);
        }
        col
    })?;
    let asymmetry = raw.asymmetry();
    let max_abs = raw.max_abs();
    let matrix = SymmetricMatrix::from_matrix(raw)?;
    Ok(LayerHessian {
        layer: s,
        matrix,
        asymmetry,
        max_abs,
    })
}

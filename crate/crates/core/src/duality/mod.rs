//! Minimal dual weights, effective gradients, and the decomposition of the
//! generalization gap along Hessian eigendirections.

mod flatness;
mod pipeline;
mod spectrum;

pub use flatness::{flatness, flatness_along, flatness_cached, Flatness, FlatnessOptions};
pub use pipeline::{analyze, AnalysisOptions, AnalysisReport, AnalysisSummary};
pub use spectrum::{decompose_gap, fisher_diag_check, split_sharp_flat, DirectionSpectrum, FisherDiagonal, SharpFlatSplit};

use rayon::prelude::*;

use crate::dataset::{LabeledSet, PairSet};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq, Matrix};
use crate::network::{Mlp, Workspace};
use crate::scalar::Real;

/// Dual shift of one (test, training partner) pair in the weights of the
/// analyzed layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DualShiftRecord<T> {
    /// Position of the pair in its pair set.
    pub index: usize,
    pub test: usize,
    pub partner: usize,
    pub label: usize,
    /// Layer-`(s-1)` activity of the training partner.
    pub a: Vec<T>,
    /// Layer-`(s-1)` activity of the test sample.
    pub a_test: Vec<T>,
    /// Flattened shift `Δw_k` (row-major, `fan_in x fan_out`).
    pub delta_w: Vec<T>,
    /// `l(x_k, w + Δw_k) - l(x_k, w)`.
    pub delta_l: T,
    pub g: Vec<T>,
    /// Scale applied to the minimal shift.
    pub s_w: T,
    /// `l(x_k, w)` for the training partner.
    pub train_loss: T,
    /// `l(x'_k, w)` for the test sample.
    pub test_loss: T,
}

impl<T: Real> DualShiftRecord<T> {
    pub fn delta_a(&self) -> Vec<T> {
        crate::linalg::sub(&self.a_test, &self.a)
    }

    /// `l(x'_k, w) - l(x_k, w)` measured directly in activity space.
    pub fn direct_gap(&self) -> T {
        self.test_loss - self.train_loss
    }
}

/// Smallest weight change `Δw` with `(w + Δw)ᵀ a = wᵀ (a + Δa)`:
/// `Δw_ij = a_i / |a|^2 · Σ_i' Δa_i' w_i'j`.
pub fn min_dual_shift<T: Real>(w: &Matrix<T>, a: &[T], delta_a: &[T]) -> Result<Matrix<T>> {
    if a.len() != w.rows() || delta_a.len() != w.rows() {
        return Err(Error::Shape(format!(
            "activities of length {} and {} for a {}x{} layer",
            a.len(),
            delta_a.len(),
            w.rows(),
            w.cols()
        )));
    }
    let a_sq = norm_sq(a);
    if a_sq == T::zero() {
        return Err(Error::DegenerateActivity);
    }
    let mut v = vec![T::zero(); w.cols()];
    for (i, &da) in delta_a.iter().enumerate() {
        if da != T::zero() {
            crate::linalg::axpy(da, w.row(i), &mut v);
        }
    }
    let mut out = Matrix::zeros(w.rows(), w.cols());
    for (i, &ai) in a.iter().enumerate() {
        let f = ai / a_sq;
        for (o, &vj) in out.row_mut(i).iter_mut().zip(&v) {
            *o = f * vj;
        }
    }
    Ok(out)
}

/// `g = Δl / |Δw|^2 · Δw`, the gradient along the shift that reproduces `Δl`
/// to first order exactly.
pub fn effective_gradient<T: Real>(delta_l: T, delta_w: &[T]) -> Result<Vec<T>> {
    let n2 = norm_sq(delta_w);
    if n2 == T::zero() {
        if delta_l == T::zero() {
            return Ok(vec![T::zero(); delta_w.len()]);
        }
        return Err(Error::InconsistentPair(delta_l.as_f64()));
    }
    let f = delta_l / n2;
    Ok(delta_w.iter().map(|&x| f * x).collect())
}

/// One record per pair: propagate both inputs to layer `s-1`, form the minimal
/// shift scaled by `s_w`, and measure the loss change it causes on the
/// training partner.
pub fn build_pair_records<T: Real>(
    model: &Mlp<T>,
    train: &LabeledSet<T>,
    test: &LabeledSet<T>,
    pairs: &PairSet,
    s: usize,
    s_w: T,
) -> Result<Vec<DualShiftRecord<T>>> {
    model.check_layer(s)?;
    if !(s_w > T::zero() && s_w <= T::one()) {
        return Err(Error::Input(format!("s_w must lie in (0, 1], got {s_w}")));
    }
    let w = &model.layer(s).weights;
    let pairs: Vec<_> = pairs.iter().copied().collect();
    pairs
        .par_iter()
        .enumerate()
        .map_init(
            || Workspace::new(model),
            |ws, (index, pair)| {
                let label = train.label(pair.partner);
                let a = model.activity(train.features(pair.partner), s - 1);
                let a_test = model.activity(test.features(pair.test), s - 1);
                let delta_a = crate::linalg::sub(&a_test, &a);
                let mut delta_w = min_dual_shift(w, &a, &delta_a)?.into_vec();
                crate::linalg::scale(s_w, &mut delta_w);
                let mut shifted = w.as_slice().to_vec();
                crate::linalg::axpy(T::one(), &delta_w, &mut shifted);
                let train_loss = model.tail_loss(s, &a, label, w.as_slice(), ws);
                let dual_loss = model.tail_loss(s, &a, label, &shifted, ws);
                let test_loss = model.tail_loss(s, &a_test, test.label(pair.test), w.as_slice(), ws);
                let delta_l = dual_loss - train_loss;
                if !delta_l.is_finite() {
                    return Err(Error::Numerical(format!("non-finite loss gap for pair {index}")));
                }
                let g = effective_gradient(delta_l, &delta_w)?;
                Ok(DualShiftRecord {
                    index,
                    test: pair.test,
                    partner: pair.partner,
                    label,
                    a,
                    a_test,
                    delta_w,
                    delta_l,
                    g,
                    s_w,
                    train_loss,
                    test_loss,
                })
            },
        )
        .collect()
}

/// `Σ_{i,i',j} C_ii' w_ij w_i'j` with `C_ii' = <s_w^2 Δa_i Δa_i' / |a|^2>`; equals
/// the mean squared norm of the dual shifts.
pub fn sigma_w_quadratic<T: Real>(w: &Matrix<T>, records: &[DualShiftRecord<T>]) -> Result<T> {
    if records.is_empty() {
        return Err(Error::Input("no records".into()));
    }
    let h = w.rows();
    let mut c = Matrix::zeros(h, h);
    for r in records {
        let da = r.delta_a();
        if da.len() != h {
            return Err(Error::Shape(format!("activity of length {} for layer fan-in {h}", da.len())));
        }
        let f = r.s_w * r.s_w / norm_sq(&r.a);
        for i in 0..h {
            if da[i] == T::zero() {
                continue;
            }
            let fi = f * da[i];
            crate::linalg::axpy(fi, &da, c.row_mut(i));
        }
    }
    let k = T::from_usize_lossy(records.len());
    let mut total = T::zero();
    for i in 0..h {
        for i2 in 0..h {
            let cii = c.get(i, i2);
            if cii != T::zero() {
                total += cii * dot(w.row(i), w.row(i2));
            }
        }
    }
    Ok(total / k)
}

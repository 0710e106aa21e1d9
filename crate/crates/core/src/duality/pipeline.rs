use serde::{Deserialize, Serialize};

use super::{build_pair_records, decompose_gap, sigma_w_quadratic, split_sharp_flat, DirectionSpectrum, SharpFlatSplit};
use crate::dataset::{pair_test_train, LabeledSet};
use crate::error::{Error, Result};
use crate::linalg::{sym_eig_with, EigenBasis, EigenMethod};
use crate::network::{layer_hessian_cached, LayerCache, Mlp, DEFAULT_HESSIAN_CAP};
use crate::scalar::Real;
use crate::trainer::{evaluate, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub layer: usize,
    pub n_te: usize,
    pub s_w: f64,
    /// Fixes the number of sharp directions instead of detecting it.
    pub n_s: Option<usize>,
    pub hessian_cap: usize,
    pub eigen: EigenMethod,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self::from_config(&TrainConfig::default())
    }
}

impl AnalysisOptions {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            layer: cfg.analysis_layer,
            n_te: cfg.n_te,
            s_w: cfg.s_w,
            n_s: None,
            hessian_cap: DEFAULT_HESSIAN_CAP,
            eigen: EigenMethod::default(),
        }
    }
}

/// Scalar results of one analysis; the JSON summary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub layer: usize,
    pub n_pairs: usize,
    pub n_s: usize,
    pub dl_total: f64,
    pub dl_sharp: f64,
    pub dl_flat: f64,
    /// Gap with the mean-product terms dropped.
    pub dl_approx: f64,
    pub mean_delta_l: f64,
    /// `<l(x'_k, w) - l(x_k, w)>` from direct loss evaluation.
    pub pairwise_gap_direct: f64,
    pub t_g: f64,
    pub t_w: f64,
    pub trace_h: f64,
    pub sigma_w_quadratic: f64,
    /// `Σ_n (sigma_w,n^2 + mu_w,n^2)`.
    pub sigma_w_second_moment: f64,
    /// `sigma_g` ratio across the sharp/flat split.
    pub drop_ratio: Option<f64>,
    pub hessian_asymmetry: f64,
    pub train_loss: f64,
    pub train_error: f64,
    pub test_loss: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone)]
pub struct AnalysisReport<T> {
    pub summary: AnalysisSummary,
    pub spectrum: DirectionSpectrum<T>,
    pub split: SharpFlatSplit<T>,
    pub basis: EigenBasis<T>,
}

/// Pairs the first `n_te` test samples with training partners, builds the dual
/// shifts of layer `s`, diagonalizes the layer Hessian and decomposes the gap.
pub fn analyze<T: Real>(model: &Mlp<T>, train: &LabeledSet<T>, test: &LabeledSet<T>, opts: &AnalysisOptions) -> Result<AnalysisReport<T>> {
    let s = opts.layer;
    model.check_layer(s)?;
    let m = model.layer(s).fan_in() * model.layer(s).fan_out();
    if m > opts.hessian_cap {
        return Err(Error::Input(format!(
            "layer {s} has {m} weights, above the Hessian cap of {}",
            opts.hessian_cap
        )));
    }
    let test = test.prefix(opts.n_te.min(test.len()));
    if opts.n_te > test.len() {
        return Err(Error::Input(format!("n_te = {} but only {} test samples", opts.n_te, test.len())));
    }
    let pairs = pair_test_train(train, &test, opts.n_te)?;
    let records = build_pair_records(model, train, &test, &pairs, s, T::lit(opts.s_w))?;

    let cache = LayerCache::new(model, train, s)?;
    let hessian = layer_hessian_cached(model, &cache)?;
    let basis = sym_eig_with(&hessian.matrix, opts.eigen)?;

    let spectrum = decompose_gap(&records, &basis)?;
    let split = split_sharp_flat(&spectrum, opts.n_s)?;
    let quad = sigma_w_quadratic(&model.layer(s).weights, &records)?;
    let second_moment: T = spectrum
        .sigma_w
        .iter()
        .zip(&spectrum.mu_w)
        .map(|(&sd, &mu)| sd * sd + mu * mu)
        .sum();
    let k = T::from_usize_lossy(records.len());
    let direct = records.iter().map(|r| r.direct_gap()).sum::<T>() / k;
    let (train_loss, train_error) = evaluate(model, train);
    let (test_loss, test_error) = evaluate(model, &test);

    let summary = AnalysisSummary {
        layer: s,
        n_pairs: records.len(),
        n_s: split.n_s,
        dl_total: split.dl_total().as_f64(),
        dl_sharp: split.dl_sharp.as_f64(),
        dl_flat: split.dl_flat.as_f64(),
        dl_approx: spectrum.dl_approx.as_f64(),
        mean_delta_l: spectrum.mean_delta_l.as_f64(),
        pairwise_gap_direct: direct.as_f64(),
        t_g: spectrum.t_g.as_f64(),
        t_w: spectrum.t_w.as_f64(),
        trace_h: spectrum.trace_h.as_f64(),
        sigma_w_quadratic: quad.as_f64(),
        sigma_w_second_moment: second_moment.as_f64(),
        drop_ratio: split.drop_ratio.map(|r| r.as_f64()),
        hessian_asymmetry: hessian.relative_asymmetry().as_f64(),
        train_loss,
        train_error,
        test_loss,
        test_error,
    };
    Ok(AnalysisReport {
        summary,
        spectrum,
        split,
        basis,
    })
}

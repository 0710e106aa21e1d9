use rayon::prelude::*;
use serde::Serialize;

use super::DualShiftRecord;
use crate::error::{Error, Result};
use crate::linalg::EigenBasis;
use crate::network::{LayerCache, Mlp, Workspace};
use crate::scalar::Real;

/// Per-direction statistics of the effective gradients and dual shifts.
///
/// Per-direction vectors are indexed by eigen order (descending `H_n`);
/// `rank` lists eigen indices by descending `sigma_g`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionSpectrum<T> {
    pub h: Vec<T>,
    pub sigma_g: Vec<T>,
    pub sigma_w: Vec<T>,
    pub mu_g: Vec<T>,
    pub mu_w: Vec<T>,
    pub c: Vec<T>,
    pub dl: Vec<T>,
    pub rank: Vec<usize>,
    /// Running sum of `sigma_w` in rank order.
    pub s_w_cumulative: Vec<T>,
    pub t_g: T,
    pub t_w: T,
    pub trace_h: T,
    /// `Σ_n dL_n`.
    pub dl_total: T,
    /// `Σ_n c_n sigma_g,n sigma_w,n`, the form that drops the mean terms.
    pub dl_approx: T,
    /// `<Δl_k>` over the records.
    pub mean_delta_l: T,
    /// Number of records.
    pub k: usize,
}

impl<T: Real> DirectionSpectrum<T> {
    pub fn dim(&self) -> usize {
        self.h.len()
    }

    /// `sigma_g` in rank order.
    pub fn ranked_sigma_g(&self) -> Vec<T> {
        self.rank.iter().map(|&n| self.sigma_g[n]).collect()
    }

    /// `sigma_w` in rank order.
    pub fn ranked_sigma_w(&self) -> Vec<T> {
        self.rank.iter().map(|&n| self.sigma_w[n]).collect()
    }

    /// `dL_n` in rank order.
    pub fn ranked_dl(&self) -> Vec<T> {
        self.rank.iter().map(|&n| self.dl[n]).collect()
    }
}

/// Projects every record onto the basis and forms the per-direction mean,
/// population standard deviation and correlation of `g` and `Δw`.
pub fn decompose_gap<T: Real>(records: &[DualShiftRecord<T>], basis: &EigenBasis<T>) -> Result<DirectionSpectrum<T>> {
    if records.is_empty() {
        return Err(Error::Input("no records to decompose".into()));
    }
    let m = basis.dim();
    if let Some(r) = records.iter().find(|r| r.g.len() != m || r.delta_w.len() != m) {
        return Err(Error::Shape(format!(
            "record {} has length {} for a basis of dimension {m}",
            r.index,
            r.g.len()
        )));
    }
    let projected: Vec<(Vec<T>, Vec<T>)> = records
        .par_iter()
        .map(|r| (basis.project(&r.g), basis.project(&r.delta_w)))
        .collect();
    let k = T::from_usize_lossy(records.len());

    let mut mu_g = vec![T::zero(); m];
    let mut mu_w = vec![T::zero(); m];
    for (pg, pw) in &projected {
        crate::linalg::axpy(T::one(), pg, &mut mu_g);
        crate::linalg::axpy(T::one(), pw, &mut mu_w);
    }
    mu_g.iter_mut().chain(mu_w.iter_mut()).for_each(|v| *v /= k);

    let mut var_g = vec![T::zero(); m];
    let mut var_w = vec![T::zero(); m];
    let mut cov = vec![T::zero(); m];
    for (pg, pw) in &projected {
        for n in 0..m {
            let dg = pg[n] - mu_g[n];
            let dw = pw[n] - mu_w[n];
            var_g[n] += dg * dg;
            var_w[n] += dw * dw;
            cov[n] += dg * dw;
        }
    }
    let sigma_g: Vec<T> = var_g.iter().map(|&v| (v / k).sqrt()).collect();
    let sigma_w: Vec<T> = var_w.iter().map(|&v| (v / k).sqrt()).collect();
    let c: Vec<T> = (0..m)
        .map(|n| {
            let denom = sigma_g[n] * sigma_w[n];
            if denom == T::zero() {
                T::zero()
            } else {
                (cov[n] / k / denom).max(-T::one()).min(T::one())
            }
        })
        .collect();
    let dl: Vec<T> = (0..m).map(|n| c[n] * sigma_g[n] * sigma_w[n] + mu_g[n] * mu_w[n]).collect();

    let mut rank: Vec<usize> = (0..m).collect();
    rank.sort_by(|&a, &b| sigma_g[b].partial_cmp(&sigma_g[a]).unwrap().then(a.cmp(&b)));
    let mut running = T::zero();
    let s_w_cumulative = rank
        .iter()
        .map(|&n| {
            running += sigma_w[n];
            running
        })
        .collect();

    let h = basis.values().to_vec();
    Ok(DirectionSpectrum {
        t_g: sigma_g.iter().map(|&s| s * s).sum(),
        t_w: sigma_w.iter().map(|&s| s * s).sum(),
        trace_h: h.iter().copied().sum(),
        dl_total: dl.iter().copied().sum(),
        dl_approx: (0..m).map(|n| c[n] * sigma_g[n] * sigma_w[n]).sum(),
        mean_delta_l: records.iter().map(|r| r.delta_l).sum::<T>() / k,
        k: records.len(),
        h,
        sigma_g,
        sigma_w,
        mu_g,
        mu_w,
        c,
        dl,
        rank,
        s_w_cumulative,
    })
}

/// Partition of the gap at the steepest drop of the ranked `sigma_g` spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharpFlatSplit<T> {
    /// Number of sharp directions (1-based rank of the last sharp one).
    pub n_s: usize,
    pub dl_sharp: T,
    pub dl_flat: T,
    /// `sigma_g` ratio across the split; `None` when the split was pinned past
    /// the last non-zero value.
    pub drop_ratio: Option<T>,
}

impl<T: Real> SharpFlatSplit<T> {
    pub fn dl_total(&self) -> T {
        self.dl_sharp + self.dl_flat
    }
}

/// `n_s = argmax_{1 <= n <= M/4} sigma_g,(n) / sigma_g,(n+1)` over the ranked
/// spectrum (ratios with a zero denominator skipped, first maximum kept), or
/// the pinned value.
pub fn split_sharp_flat<T: Real>(spectrum: &DirectionSpectrum<T>, pin: Option<usize>) -> Result<SharpFlatSplit<T>> {
    let sorted = spectrum.ranked_sigma_g();
    let m = sorted.len();
    if sorted.iter().all(|&s| s == T::zero()) {
        return Err(Error::Numerical("sigma_g spectrum is identically zero".into()));
    }
    let ratio_at = |n: usize| (n < m && sorted[n] > T::zero()).then(|| sorted[n - 1] / sorted[n]);
    let n_s = match pin {
        Some(p) => {
            if p == 0 || p > m {
                return Err(Error::Input(format!("pinned n_s {p} outside 1..={m}")));
            }
            p
        }
        None => {
            let upper = (m / 4).max(1).min(m.saturating_sub(1));
            let mut best: Option<(usize, T)> = None;
            for n in 1..=upper {
                if let Some(r) = ratio_at(n) {
                    if best.is_none_or(|(_, b)| r > b) {
                        best = Some((n, r));
                    }
                }
            }
            match best {
                Some((n, _)) => n,
                // no admissible ratio: everything with non-zero sharpness is sharp
                None => sorted.iter().filter(|&&s| s > T::zero()).count(),
            }
        }
    };
    let ranked = spectrum.ranked_dl();
    let dl_sharp = ranked[..n_s].iter().copied().sum();
    let dl_flat = ranked[n_s..].iter().copied().sum();
    Ok(SharpFlatSplit {
        n_s,
        dl_sharp,
        dl_flat,
        drop_ratio: ratio_at(n_s),
    })
}

/// Second moments of exact per-sample layer gradients along each direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherDiagonal<T> {
    pub diag: Vec<T>,
    /// `<|g0_k|^2>`, which the diagonal sums to.
    pub mean_norm_sq: T,
}

/// Projects exact per-sample gradients of the layer-`s` weights onto the basis
/// and returns `<(g0_n,k)^2>` for every direction.
pub fn fisher_diag_check<T: Real>(model: &Mlp<T>, cache: &LayerCache<T>, basis: &EigenBasis<T>) -> Result<FisherDiagonal<T>> {
    let m = cache.num_weights();
    if basis.dim() != m {
        return Err(Error::Shape(format!("basis of dimension {} for {m} weights", basis.dim())));
    }
    let s = cache.layer();
    let w = model.layer(s).weights.as_slice();
    let partial: Vec<(Vec<T>, T)> = crate::network::chunk_ranges(cache.len())
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut ws = Workspace::new(model);
            let mut diag = vec![T::zero(); m];
            let mut norm = T::zero();
            let mut g = vec![T::zero(); m];
            for k in lo..hi {
                g.fill(T::zero());
                model.tail_gradient(s, cache.a_prev(k), cache.label(k), w, T::one(), &mut ws, &mut g);
                norm += crate::linalg::norm_sq(&g);
                for (d, p) in diag.iter_mut().zip(basis.project(&g)) {
                    *d += p * p;
                }
            }
            (diag, norm)
        })
        .collect();
    let mut diag = vec![T::zero(); m];
    let mut norm = T::zero();
    for (d, n) in partial {
        crate::linalg::axpy(T::one(), &d, &mut diag);
        norm += n;
    }
    let inv = T::one() / T::from_usize_lossy(cache.len());
    crate::linalg::scale(inv, &mut diag);
    Ok(FisherDiagonal {
        diag,
        mean_norm_sq: norm * inv,
    })
}

use std::cmp::Ordering;

use super::{Matrix, SymmetricMatrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Convergence threshold on the off-diagonal Frobenius norm, relative to `‖A‖_F`.
pub const JACOBI_REL_TOL: f64 = 1e-12;
/// Sweep cap; exceeding it is reported as a numerical error.
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order. `vectors` stores one unit
/// eigenvector per row, so row `n` pairs with `values[n]` (this is `Vᵀ` in
/// the usual `A = V Λ Vᵀ` notation). Each eigenvector has its
/// largest-magnitude component positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis<T> {
    values: Vec<T>,
    vectors: Matrix<T>,
    sweeps: usize,
}

impl<T: Real> EigenBasis<T> {
    /// Wraps an externally supplied orthonormal basis, one vector per row.
    ///
    /// Rows are kept in the given order; `values` may be any per-direction
    /// labels (for instance Fisher diagonal entries).
    pub fn from_parts(values: Vec<T>, vectors: Matrix<T>) -> Result<Self> {
        if vectors.rows() != values.len() || vectors.cols() != values.len() {
            return Err(Error::Shape(format!(
                "{} values with a {}x{} vector matrix",
                values.len(),
                vectors.rows(),
                vectors.cols()
            )));
        }
        Ok(Self {
            values,
            vectors,
            sweeps: 0,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn vector(&self, n: usize) -> &[T] {
        self.vectors.row(n)
    }

    /// Eigenvectors as rows.
    pub fn vectors(&self) -> &Matrix<T> {
        &self.vectors
    }

    /// Jacobi sweeps or QL iterations used to converge (0 for bases built with
    /// [`EigenBasis::from_parts`]).
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Components `x · e_n` for every direction.
    pub fn project(&self, x: &[T]) -> Vec<T> {
        self.vectors.matvec(x)
    }

    /// `Σ_n c_n e_n`.
    pub fn reconstruct(&self, coeffs: &[T]) -> Vec<T> {
        assert_eq!(coeffs.len(), self.dim());
        let mut out = vec![T::zero(); self.dim()];
        for (n, c) in coeffs.iter().enumerate() {
            super::axpy(*c, self.vector(n), &mut out);
        }
        out
    }

    pub fn trace(&self) -> T {
        self.values.iter().copied().sum()
    }
}

/// Cyclic Jacobi eigen-decomposition.
///
/// Sweeps visit `(p, q)` pairs in row order; the run stops once the
/// off-diagonal Frobenius norm drops below `JACOBI_REL_TOL · ‖A‖_F`.
/// Output is a pure function of the input.
pub fn sym_eig<T: Real>(a: &SymmetricMatrix<T>) -> Result<EigenBasis<T>> {
    let n = a.dim();
    let src = a.as_matrix();
    if !src.is_finite() {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    let mut m = src.as_slice().to_vec();
    // rows of `v` are eigenvector estimates, so rotations touch contiguous memory
    let mut v = Matrix::<T>::identity(n).into_vec();

    let norm = src.frobenius();
    let tol = T::lit(JACOBI_REL_TOL) * norm;
    let mut sweeps = 0;
    let mut converged = norm == T::zero() || n == 1;
    let mut off = T::zero();

    while !converged {
        off = off_diagonal_norm(&m, n);
        if off <= tol {
            converged = true;
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            break;
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, n, p, q);
            }
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps: \
             off-diagonal residual {:e} (relative {:e})",
            off.as_f64(),
            (off / norm).as_f64()
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values: Vec<T> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src_row) in order.iter().enumerate() {
        let row = vectors.row_mut(dst);
        row.copy_from_slice(&v[src_row * n..(src_row + 1) * n]);
        fix_sign(row);
    }
    Ok(EigenBasis {
        values,
        vectors,
        sweeps,
    })
}

/// Eigensolver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMethod {
    /// Cyclic Jacobi rotations ([`sym_eig`]).
    Jacobi,
    /// Householder tridiagonalization followed by implicit QL iteration.
    /// Roughly 20x faster than Jacobi at M = 900.
    #[default]
    TridiagonalQl,
}

pub fn sym_eig_with<T: Real>(a: &SymmetricMatrix<T>, method: EigenMethod) -> Result<EigenBasis<T>> {
    match method {
        EigenMethod::Jacobi => sym_eig(a),
        EigenMethod::TridiagonalQl => sym_eig_ql(a),
    }
}

/// Householder reduction to tridiagonal form plus implicit-shift QL.
///
/// Same output contract as [`sym_eig`]: descending eigenvalues, unit
/// eigenvectors as rows, fixed sign convention, deterministic.
pub fn sym_eig_ql<T: Real>(a: &SymmetricMatrix<T>) -> Result<EigenBasis<T>> {
    let n = a.dim();
    let src = a.as_matrix();
    if !src.is_finite() {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    let mut v = src.clone();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(&mut v, &mut d, &mut e);
    // QL rotates columns of V; work on Vᵀ so those become contiguous rows
    let mut vt = v.transpose();
    let iterations = tridiagonal_ql(&mut vt, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap_or(Ordering::Equal).then(i.cmp(&j)));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &row) in order.iter().enumerate() {
        let out = vectors.row_mut(dst);
        out.copy_from_slice(vt.row(row));
        fix_sign(out);
    }
    Ok(EigenBasis {
        values,
        vectors,
        sweeps: iterations,
    })
}

/// Householder tridiagonalization (EISPACK tred2 ordering). On return `v`
/// holds the accumulated orthogonal transform, `d` the diagonal and `e[1..]`
/// the sub-diagonal.
fn tridiagonalize<T: Real>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    let zero = T::zero();
    for j in 0..n {
        d[j] = v.get(n - 1, j);
    }
    for i in (1..n).rev() {
        let mut scale = zero;
        let mut h = zero;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == zero {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v.get(i - 1, j);
                v.set(i, j, zero);
                v.set(j, i, zero);
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > zero {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = zero;
            }
            for j in 0..i {
                f = d[j];
                v.set(j, i, f);
                g = e[j] + v.get(j, j) * f;
                for k in (j + 1)..i {
                    let vkj = v.get(k, j);
                    g += vkj * d[k];
                    e[k] += vkj * f;
                }
                e[j] = g;
            }
            f = zero;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let x = v.get(k, j) - (f * e[k] + g * d[k]);
                    v.set(k, j, x);
                }
                d[j] = v.get(i - 1, j);
                v.set(i, j, zero);
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        let vii = v.get(i, i);
        v.set(n - 1, i, vii);
        v.set(i, i, T::one());
        let h = d[i + 1];
        if h != zero {
            for k in 0..=i {
                d[k] = v.get(k, i + 1) / h;
            }
            for j in 0..=i {
                let mut g = zero;
                for k in 0..=i {
                    g += v.get(k, i + 1) * v.get(k, j);
                }
                for k in 0..=i {
                    let x = v.get(k, j) - g * d[k];
                    v.set(k, j, x);
                }
            }
        }
        for k in 0..=i {
            v.set(k, i + 1, zero);
        }
    }
    for j in 0..n {
        d[j] = v.get(n - 1, j);
        v.set(n - 1, j, zero);
    }
    v.set(n - 1, n - 1, T::one());
    e[0] = zero;
}

/// Implicit QL on the tridiagonal `(d, e)`; `vt` rows are rotated alongside.
/// Returns the number of QL iterations.
fn tridiagonal_ql<T: Real>(vt: &mut Matrix<T>, d: &mut [T], e: &mut [T]) -> Result<usize> {
    let n = d.len();
    let zero = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;
    let eps = T::epsilon();
    let max_iter = 30 * n.max(1);
    let mut total = 0;
    let mut f = zero;
    let mut tst1 = zero;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                total += 1;
                if total > max_iter {
                    return Err(Error::Numerical(format!(
                        "QL iteration did not converge: sub-diagonal residual {:e}",
                        e[l].abs().as_f64()
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(one);
                if p < zero {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = one;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = zero;
                let mut s2 = zero;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let cols = vt.cols();
                    let data = vt.as_mut_slice();
                    let (head, tail) = data.split_at_mut((i + 1) * cols);
                    let row_i = &mut head[i * cols..];
                    let row_i1 = &mut tail[..cols];
                    for (a, b) in row_i.iter_mut().zip(row_i1.iter_mut()) {
                        let hk = *b;
                        *b = s * *a + c * hk;
                        *a = c * *a - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = zero;
    }
    Ok(total)
}

fn off_diagonal_norm<T: Real>(m: &[T], n: usize) -> T {
    let mut acc = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let x = m[i * n + j];
            acc += x * x;
        }
    }
    (acc + acc).sqrt()
}

/// One Jacobi rotation annihilating `m[p][q]`, `p < q`.
fn rotate<T: Real>(m: &mut [T], v: &mut [T], n: usize, p: usize, q: usize) {
    let apq = m[p * n + q];
    if apq == T::zero() {
        return;
    }
    let app = m[p * n + p];
    let aqq = m[q * n + q];
    let theta = (aqq - app) / (apq + apq);
    let t = {
        let t = T::one() / (theta.abs() + (theta * theta + T::one()).sqrt());
        if theta < T::zero() {
            -t
        } else {
            t
        }
    };
    let c = T::one() / (t * t + T::one()).sqrt();
    let s = t * c;

    // rows p and q: a'_pk = c a_pk - s a_qk, a'_qk = s a_pk + c a_qk
    {
        let (head, tail) = m.split_at_mut(q * n);
        let row_p = &mut head[p * n..(p + 1) * n];
        let row_q = &mut tail[..n];
        for (xp, xq) in row_p.iter_mut().zip(row_q.iter_mut()) {
            let a = *xp;
            let b = *xq;
            *xp = c * a - s * b;
            *xq = s * a + c * b;
        }
    }
    for k in 0..n {
        if k != p && k != q {
            m[k * n + p] = m[p * n + k];
            m[k * n + q] = m[q * n + k];
        }
    }
    m[p * n + p] = app - t * apq;
    m[q * n + q] = aqq + t * apq;
    m[p * n + q] = T::zero();
    m[q * n + p] = T::zero();

    let (head, tail) = v.split_at_mut(q * n);
    let vp = &mut head[p * n..(p + 1) * n];
    let vq = &mut tail[..n];
    for (xp, xq) in vp.iter_mut().zip(vq.iter_mut()) {
        let a = *xp;
        let b = *xq;
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// Flips `v` so its largest-magnitude component (first one on ties) is positive.
fn fix_sign<T: Real>(v: &mut [T]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < T::zero()) {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

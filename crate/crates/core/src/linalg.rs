//! Small dense linear-algebra helpers shared by the agents and the recovery solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Full singular value decomposition `m = U diag(s) Vᵀ` with square orthogonal factors.
///
/// Singular values are sorted in non-increasing order. The columns of `u` and `v`
/// beyond `min(d1, d2)` complete the bases of the left and right spaces.
#[derive(Debug, Clone)]
pub struct FullSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn full_svd(m: &DMatrix<f64>) -> FullSvd {
    let (d1, d2) = m.shape();
    let k = d1.min(d2);
    let svd = m.clone().svd(true, true);
    let u_thin = svd.u.expect("left singular vectors requested");
    let vt_thin = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let s = DVector::from_iterator(k, order.iter().map(|&i| svd.singular_values[i]));
    let u_sorted = DMatrix::from_fn(d1, k, |r, c| u_thin[(r, order[c])]);
    let v_sorted = DMatrix::from_fn(d2, k, |r, c| vt_thin[(order[c], r)]);
    FullSvd {
        u: complete_basis(&u_sorted),
        singular_values: s,
        v: complete_basis(&v_sorted),
    }
}

/// Extends a `d × k` matrix with orthonormal columns to a `d × d` orthogonal matrix.
///
/// The first `k` columns are returned unchanged. The remaining columns are found by
/// Gram–Schmidt (applied twice) over the canonical basis, taking the candidate with
/// the largest residual at every step.
pub fn complete_basis(q: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, k) = q.shape();
    let mut cols: Vec<DVector<f64>> = (0..k).map(|j| q.column(j).into_owned()).collect();
    while cols.len() < d {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for e in 0..d {
            let mut w = DVector::zeros(d);
            w[e] = 1.0;
            for _ in 0..2 {
                for c in &cols {
                    let proj = c.dot(&w);
                    w.axpy(-proj, c, 1.0);
                }
            }
            let n = w.norm();
            if best.as_ref().is_none_or(|(bn, _)| n > *bn + 1e-12) {
                best = Some((n, w));
            }
        }
        let (n, w) = best.expect("d > 0");
        cols.push(w / n);
    }
    DMatrix::from_columns(&cols)
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().sum()
}

/// Number of singular values above `tol`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    m.singular_values().iter().filter(|&&s| s > tol).count()
}

/// Trace inner product `⟨a, b⟩ = tr(aᵀb)`.
pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `log det(m)` via Cholesky; fails on matrices that are not positive definite.
pub fn log_det_pd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
}

/// Inverse of a positive definite matrix via Cholesky.
pub fn inverse_pd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.inverse())
}

/// `xᵀ A x` for symmetric `a`.
pub fn quad_form(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for j in 0..n {
        let col = a.column(j);
        let mut s = 0.0;
        for i in 0..n {
            s += col[i] * x[i];
        }
        acc += s * x[j];
    }
    acc
}

/// In-place Sherman–Morrison update of `inv = A⁻¹` to `(A + x xᵀ)⁻¹`.
///
/// Returns `xᵀ A⁻¹ x` computed before the update.
pub fn sherman_morrison_update(inv: &mut DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let xv = DVector::from_column_slice(x);
    let ax = &*inv * &xv;
    let denom_minus_one = xv.dot(&ax);
    let scale = 1.0 / (1.0 + denom_minus_one);
    for j in 0..n {
        for i in 0..n {
            inv[(i, j)] -= scale * ax[i] * ax[j];
        }
    }
    // keep exact symmetry
    for j in 0..n {
        for i in 0..j {
            let avg = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = avg;
            inv[(j, i)] = avg;
        }
    }
    denom_minus_one
}

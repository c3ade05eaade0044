//! Deterministic linear-algebra kernels used throughout the crate.
//!
//! Eigen- and singular-value decompositions are computed by cyclic Jacobi
//! iterations rather than the container library's built-ins: Jacobi is
//! backward stable with high relative accuracy on (nearly) rank-deficient
//! inputs, and its output depends only on the input bytes, so results are
//! reproducible across platforms. Eigenvalues and singular values are
//! returned in descending order; vector signs are fixed by making the
//! largest-magnitude coordinate positive (first such index on ties).

use nalgebra::{DMatrix, DVector};

const JACOBI_SWEEPS: usize = 60;

/// Symmetric eigendecomposition by cyclic Jacobi, eigenvalues descending,
/// sign convention applied to each eigenvector.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric eigendecomposition needs a square input");
    let mut m = a.clone();
    let mut v: DMatrix<f64> = DMatrix::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-15 * scale;
    for _ in 0..JACOBI_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(j, j)]
            .partial_cmp(&m[(i, i)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vals[k] = m[(i, i)];
        let mut col = v.column(i).clone_owned();
        fix_sign(&mut col);
        vecs.set_column(k, &col);
    }
    (vals, vecs)
}

/// Thin SVD by one-sided Jacobi, singular values descending, full orthonormal
/// factors (zero singular values get deterministically completed vectors).
/// Returns (U, S, V) with `a = U diag(S) V^T`, U of shape m x k and V of
/// shape n x k with k = min(m, n).
pub fn svd_desc(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    if m < n {
        let (u, s, v) = svd_desc(&a.transpose());
        return (v, s, u);
    }
    let k = n;
    let mut b = a.clone();
    let mut v: DMatrix<f64> = DMatrix::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-15;
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    alpha += b[(i, p)] * b[(i, p)];
                    beta += b[(i, q)] * b[(i, q)];
                    gamma += b[(i, p)] * b[(i, q)];
                }
                if gamma.abs() <= tol * alpha.sqrt() * beta.sqrt() + 1e-300 * scale {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bip = b[(i, p)];
                    let biq = b[(i, q)];
                    b[(i, p)] = c * bip - s * biq;
                    b[(i, q)] = s * bip + c * biq;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    // singular values as column norms, sorted descending
    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = (0..k).map(|j| b.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));
    let mut s_out = DVector::zeros(k);
    let mut u_out = DMatrix::zeros(m, k);
    let mut v_out = DMatrix::zeros(n, k);
    let rank_tol = 1e-14 * scale.max(1e-300);
    let mut filled: Vec<usize> = Vec::new();
    for (idx, &j) in order.iter().enumerate() {
        s_out[idx] = norms[j];
        v_out.set_column(idx, &v.column(j).clone_owned());
        if norms[j] > rank_tol {
            let mut col = b.column(j).clone_owned() / norms[j];
            if sign_of(&col) < 0.0 {
                col.neg_mut();
                let mut vc = v_out.column_mut(idx);
                vc.neg_mut();
            }
            u_out.set_column(idx, &col);
            filled.push(idx);
        }
    }
    // deterministic orthonormal completion for (numerically) zero directions
    for idx in 0..k {
        if filled.contains(&idx) {
            continue;
        }
        let mut best: Option<DVector<f64>> = None;
        let mut best_norm = -1.0;
        for e in 0..m {
            let mut cand = DVector::zeros(m);
            cand[e] = 1.0;
            for &f in &filled {
                let proj = u_out.column(f).dot(&cand);
                cand -= u_out.column(f) * proj;
            }
            let nrm = cand.norm();
            if nrm > best_norm + 1e-12 {
                best_norm = nrm;
                best = Some(cand);
            }
        }
        let mut col = best.expect("completion candidate exists");
        col /= col.norm();
        fix_sign(&mut col);
        u_out.set_column(idx, &col);
        filled.push(idx);
    }
    (u_out, s_out, v_out)
}

fn sign_of(v: &DVector<f64>) -> f64 {
    let mut best = 0usize;
    let mut mag = -1.0f64;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > mag {
            mag = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn fix_sign(v: &mut DVector<f64>) {
    if sign_of(v) < 0.0 {
        v.neg_mut();
    }
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let gram = if a.nrows() >= a.ncols() {
        a.transpose() * a
    } else {
        a * a.transpose()
    };
    let (vals, _) = sym_eigen_desc(&gram);
    vals[0].max(0.0).sqrt()
}

/// Largest row-wise Euclidean norm.
pub fn two_infinity_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows()).map(|i| a.row(i).norm()).fold(0.0, f64::max)
}

/// Orthonormal basis of the leading k-dimensional column space of `a`
/// (top-k left singular vectors).
pub fn orthonormal_cols(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (u, _, _) = svd_desc(a);
    u.columns(0, k.min(u.ncols())).clone_owned()
}

/// Moore-Penrose pseudoinverse with an absolute singular-value cutoff.
pub fn pinv_cutoff(a: &DMatrix<f64>, cutoff: f64) -> DMatrix<f64> {
    let (u, s, v) = svd_desc(a);
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for i in 0..s.len() {
        if s[i] > cutoff {
            let vi = v.column(i);
            let ui = u.column(i);
            for c in 0..a.nrows() {
                for r in 0..a.ncols() {
                    out[(r, c)] += vi[r] * ui[c] / s[i];
                }
            }
        }
    }
    out
}

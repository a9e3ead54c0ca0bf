//! Singular value decomposition via one-sided Jacobi rotations.
//!
//! Self-contained and fully deterministic: column pairs are visited in
//! a fixed order, so repeated runs produce identical bits. Intended for
//! the small projection matrices used here, not for large systems.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

const MAX_SWEEPS: usize = 60;
const ORTH_TOL: f64 = 1e-14;

/// Thin decomposition `A = U diag(s) Vᵀ` with `r = min(m, n)` columns in
/// `u` and `v`. Singular values are sorted descending; columns for zero
/// singular values are zero in `u`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

/// Decomposes an arbitrary real matrix. Fails with `NumericalFailure`
/// if the rotation sweeps do not converge.
pub fn svd(a: &Array2<f64>) -> Result<Svd> {
    let (m, n) = (a.nrows(), a.ncols());
    if m >= n {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.t().to_owned())?;
        Ok(Svd { u: t.v, s: t.s, v: t.u })
    }
}

/// One-sided Jacobi for m ≥ n: rotates column pairs of a working copy
/// until all columns are mutually orthogonal, then reads singular
/// values off the column norms.
fn jacobi_tall(a: &Array2<f64>) -> Result<Svd> {
    let (m, n) = (a.nrows(), a.ncols());
    let mut w = a.clone();
    let mut v = Array2::<f64>::eye(n);
    if n > 1 {
        // Columns with mass below the pseudo-inverse truncation cutoff
        // are numerical null space. Rotating two of them against each
        // other chases rounding noise and can cycle past any sweep
        // limit, so those pairs are left alone. The Frobenius norm is
        // rotation invariant, so the cutoff is computed once.
        let fro2: f64 = a.iter().map(|x| x * x).sum();
        let freeze = f64::EPSILON * f64::EPSILON * m.max(n) as f64 * fro2;
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        let wp = w[(i, p)];
                        let wq = w[(i, q)];
                        alpha += wp * wp;
                        beta += wq * wq;
                        gamma += wp * wq;
                    }
                    if alpha <= freeze || beta <= freeze {
                        continue;
                    }
                    if gamma.abs() <= ORTH_TOL * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = if zeta == 0.0 {
                        1.0
                    } else {
                        zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m {
                        let wp = w[(i, p)];
                        let wq = w[(i, q)];
                        w[(i, p)] = c * wp - s * wq;
                        w[(i, q)] = s * wp + c * wq;
                    }
                    for i in 0..n {
                        let vp = v[(i, p)];
                        let vq = v[(i, q)];
                        v[(i, p)] = c * vp - s * vq;
                        v[(i, q)] = s * vp + c * vq;
                    }
                }
            }
            if !rotated {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NumericalFailure);
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut sigma = vec![0.0f64; n];
    for (j, s) in sigma.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..m {
            acc += w[(i, j)] * w[(i, j)];
        }
        *s = acc.sqrt();
    }
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).expect("finite"));

    let mut u = Array2::<f64>::zeros((m, n));
    let mut s_sorted = Array1::<f64>::zeros(n);
    let mut v_sorted = Array2::<f64>::zeros((n, n));
    for (out_j, &j) in order.iter().enumerate() {
        s_sorted[out_j] = sigma[j];
        if sigma[j] > 0.0 {
            for i in 0..m {
                u[(i, out_j)] = w[(i, j)] / sigma[j];
            }
        }
        for i in 0..n {
            v_sorted[(i, out_j)] = v[(i, j)];
        }
    }
    Ok(Svd { u, s: s_sorted, v: v_sorted })
}

/// Moore–Penrose pseudo-inverse. Singular values at or below
/// `ε_machine · max(m, n) · σ_max` are treated as zero.
pub fn pinv(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (m, n) = (a.nrows(), a.ncols());
    let dec = svd(a)?;
    let smax = dec.s.iter().cloned().fold(0.0f64, f64::max);
    let tau = f64::EPSILON * m.max(n) as f64 * smax;
    let r = dec.s.len();
    let mut scaled_vt = Array2::<f64>::zeros((r, n));
    for j in 0..r {
        if dec.s[j] > tau {
            let inv = 1.0 / dec.s[j];
            for i in 0..n {
                scaled_vt[(j, i)] = dec.v[(i, j)] * inv;
            }
        }
    }
    // pinv = V Σ⁺ Uᵀ, assembled as (Σ⁺ Vᵀ)ᵀ Uᵀ without forming Σ.
    Ok(scaled_vt.t().dot(&dec.u.t()))
}

/// Largest of the four Moore–Penrose residuals, each Frobenius-relative
/// to its left-hand side. Plain matrix arithmetic on purpose: this is
/// the check the decomposition route must answer to.
pub fn moore_penrose_residual(b: &Array2<f64>, bp: &Array2<f64>) -> f64 {
    let bbp = b.dot(bp);
    let bpb = bp.dot(b);
    let r1 = rel_fro(&(b.dot(bp).dot(b)), b);
    let r2 = rel_fro(&(bp.dot(b).dot(bp)), bp);
    let r3 = rel_fro(&bbp.t().to_owned(), &bbp);
    let r4 = rel_fro(&bpb.t().to_owned(), &bpb);
    r1.max(r2).max(r3).max(r4)
}

fn rel_fro(got: &Array2<f64>, want: &Array2<f64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (g, w) in got.iter().zip(want.iter()) {
        num += (g - w) * (g - w);
        den += w * w;
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

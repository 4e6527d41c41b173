//! Restarted GMRES with right ILU(0) preconditioning.
//!
//! Right preconditioning keeps the Arnoldi residual equal to the true residual
//! `‖b − A x‖₂`, which is what the termination rule is stated in.

use super::csr::{norm2, CsrMatrix};
use super::ilu::Ilu0;
use super::SolveError;

pub struct GmresOutcome {
    pub iterations: usize,
    pub residual: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn gmres(
    a: &CsrMatrix,
    precond: &Ilu0,
    b: &[f64],
    x: &mut [f64],
    abs_tol: f64,
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<GmresOutcome, SolveError> {
    let n = a.dim();
    let m = restart.max(1).min(n.max(1));
    let target = abs_tol.max(rel_tol * norm2(b));

    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = vec![vec![0.0; n]; m + 1];
    let mut h = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut total = 0usize;

    loop {
        a.mul_vec_into(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm2(&r);
        if beta <= target {
            return Ok(GmresOutcome { iterations: total, residual: beta });
        }
        if total >= max_iter {
            return Err(SolveError::NotConverged { iterations: total, residual: beta });
        }
        for (v, ri) in basis[0].iter_mut().zip(&r) {
            *v = ri / beta;
        }
        g.iter_mut().for_each(|x| *x = 0.0);
        g[0] = beta;

        let mut k_used = 0;
        for j in 0..m {
            // w = A M⁻¹ v_j
            r.copy_from_slice(&basis[j]);
            precond.apply_in_place(&mut r);
            a.mul_vec_into(&r, &mut w);
            for i in 0..=j {
                let hij: f64 = w.iter().zip(&basis[i]).map(|(a, b)| a * b).sum();
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&basis[i]) {
                    *wk -= hij * vk;
                }
            }
            let hnext = norm2(&w);
            h[j + 1][j] = hnext;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = h[j][j].hypot(h[j + 1][j]);
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h[j][j] / denom;
                sn[j] = h[j + 1][j] / denom;
            }
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            total += 1;
            k_used = j + 1;
            if g[j + 1].abs() <= target || hnext == 0.0 || total >= max_iter {
                break;
            }
            for (v, wk) in basis[j + 1].iter_mut().zip(&w) {
                *v = wk / hnext;
            }
        }

        // back substitution for y, then x += M⁻¹ V y
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for l in i + 1..k_used {
                s -= h[i][l] * y[l];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        w.iter_mut().for_each(|v| *v = 0.0);
        for (yi, vi) in y.iter().zip(&basis) {
            for (wk, vk) in w.iter_mut().zip(vi) {
                *wk += yi * vk;
            }
        }
        precond.apply_in_place(&mut w);
        for (xi, wi) in x.iter_mut().zip(&w) {
            *xi += wi;
        }
    }
}

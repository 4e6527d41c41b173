//! ILU(0): incomplete LU with the sparsity pattern of `A`.

use super::csr::CsrMatrix;
use super::SolveError;

#[derive(Clone, Debug)]
pub struct Ilu0 {
    /// Combined factors: strict lower part is `L` (unit diagonal implied),
    /// diagonal and upper part are `U`. Same pattern as the source matrix.
    factors: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn factor(a: &CsrMatrix) -> Result<Self, SolveError> {
        let n = a.dim();
        let mut f = a.clone();
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            match f.position(i, i) {
                Some(k) => diag.push(k),
                None => return Err(SolveError::ZeroDiagonal { row: i }),
            }
        }
        let row_ptr = f.row_ptr().to_vec();
        let col_idx = f.col_idx().to_vec();
        let mut marker = vec![usize::MAX; n];
        let vals = f.values_mut();
        for i in 0..n {
            let (start, end) = (row_ptr[i], row_ptr[i + 1]);
            for k in start..end {
                marker[col_idx[k]] = k;
            }
            for kk in start..end {
                let k = col_idx[kk];
                if k >= i {
                    break;
                }
                let pivot = vals[diag[k]];
                if pivot == 0.0 {
                    return Err(SolveError::ZeroDiagonal { row: k });
                }
                let lik = vals[kk] / pivot;
                vals[kk] = lik;
                for kj in diag[k] + 1..row_ptr[k + 1] {
                    let m = marker[col_idx[kj]];
                    if m != usize::MAX {
                        vals[m] -= lik * vals[kj];
                    }
                }
            }
            if vals[diag[i]] == 0.0 {
                return Err(SolveError::ZeroDiagonal { row: i });
            }
            for k in start..end {
                marker[col_idx[k]] = usize::MAX;
            }
        }
        Ok(Self { factors: f, diag })
    }

    pub fn factors(&self) -> &CsrMatrix {
        &self.factors
    }

    /// Solves `L U x = r` in place.
    pub fn apply_in_place(&self, x: &mut [f64]) {
        let f = &self.factors;
        let (rp, ci, v) = (f.row_ptr(), f.col_idx(), f.values());
        let n = f.dim();
        for i in 0..n {
            let mut s = x[i];
            for k in rp[i]..self.diag[i] {
                s -= v[k] * x[ci[k]];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in self.diag[i] + 1..rp[i + 1] {
                s -= v[k] * x[ci[k]];
            }
            x[i] = s / v[self.diag[i]];
        }
    }
}

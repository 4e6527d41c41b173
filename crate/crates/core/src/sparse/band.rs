//! Direct solver: LU factorization with partial pivoting in band storage.
//!
//! Mesh matrices in natural vertex order have a bandwidth of roughly one
//! grid layer, so the band factorization is the sparse direct method here.
//! Storage follows the LAPACK `gbtrf` layout: column `j` holds rows
//! `j - kl - ku ..= j + kl`, the extra `kl` super-diagonals absorbing pivot fill.

use super::csr::CsrMatrix;
use super::SolveError;

#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self, SolveError> {
        let n = a.dim();
        let (kl, ku) = a.bandwidths();
        let ldab = 2 * kl + ku + 1;
        let mut lu = Self { n, kl, ku, ldab, ab: vec![0.0; ldab * n], piv: vec![0; n] };
        // pivots are judged against their own column so that rows of very
        // different magnitude do not mask each other
        let mut col_scale = vec![0.0f64; n];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let k = lu.idx(i, j);
                lu.ab[k] = v;
                col_scale[j] = col_scale[j].max(v.abs());
            }
        }
        let kuu = kl + ku;
        let mut ju = 0usize;
        for k in 0..n {
            let km = kl.min(n - 1 - k);
            let mut p = k;
            let mut best = lu.ab[lu.idx(k, k)].abs();
            for r in k + 1..=k + km {
                let v = lu.ab[lu.idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= 1e-300_f64.max(col_scale[k] * 1e-16) {
                return Err(SolveError::Singular { row: k });
            }
            lu.piv[k] = p;
            ju = ju.max((p + ku).min(n - 1));
            if p != k {
                for j in k..=ju {
                    let (x, y) = (lu.idx(k, j), lu.idx(p, j));
                    lu.ab.swap(x, y);
                }
            }
            let pivot = lu.ab[lu.idx(k, k)];
            let col = k * ldab + kuu;
            for r in 1..=km {
                lu.ab[col + r] /= pivot;
            }
            for j in k + 1..=ju {
                let akj = lu.ab[lu.idx(k, j)];
                if akj != 0.0 {
                    let base = j * ldab + kuu + k - j;
                    for r in 1..=km {
                        lu.ab[base + r] -= lu.ab[col + r] * akj;
                    }
                }
            }
        }
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let kuu = self.kl + self.ku;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let km = self.kl.min(n - 1 - k);
            let bk = b[k];
            if bk != 0.0 {
                let col = k * self.ldab + kuu;
                for r in 1..=km {
                    b[k + r] -= self.ab[col + r] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let xk = b[k] / self.ab[self.idx(k, k)];
            b[k] = xk;
            if xk != 0.0 {
                for i in k.saturating_sub(kuu)..k {
                    b[i] -= self.ab[self.idx(i, k)] * xk;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoting_needed() {
        // zero leading pivot forces a row swap
        let a = CsrMatrix::from_triplets(3, [
            (0, 1, 1.0),
            (1, 0, 1.0),
            (1, 1, 1.0),
            (1, 2, 2.0),
            (2, 1, 3.0),
            (2, 2, 1.0),
        ])
        .unwrap();
        let lu = BandLu::factor(&a).unwrap();
        let x_true = [1.0, -2.0, 0.5];
        let mut b = a.mul_vec(&x_true);
        lu.solve_in_place(&mut b);
        for (x, t) in b.iter().zip(x_true) {
            assert!((x - t).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_detected() {
        let a = CsrMatrix::from_triplets(2, [(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)])
            .unwrap();
        assert!(matches!(BandLu::factor(&a), Err(SolveError::Singular { .. })));
    }
}

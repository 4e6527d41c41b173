//! Gaussian elimination with partial pivoting for the tiny per-node Newton
//! systems (one row per ion species).

use super::SolveError;

pub const MAX_DENSE: usize = 8;

/// Pivots smaller than this in magnitude are treated as singular.
pub const PIVOT_FLOOR: f64 = 1e-14;

/// Dense `n × n` matrix with `n ≤ MAX_DENSE`, stored inline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmallMatrix {
    n: usize,
    data: [[f64; MAX_DENSE]; MAX_DENSE],
}

impl SmallMatrix {
    pub fn zeros(n: usize) -> Result<Self, SolveError> {
        if n > MAX_DENSE {
            return Err(SolveError::TooLarge { n, max: MAX_DENSE });
        }
        Ok(Self { n, data: [[0.0; MAX_DENSE]; MAX_DENSE] })
    }

    pub fn identity(n: usize) -> Result<Self, SolveError> {
        let mut m = Self::zeros(n)?;
        for i in 0..n {
            m.data[i][i] = 1.0;
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, SolveError> {
        let n = rows.len();
        let mut m = Self::zeros(n)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(SolveError::DimensionMismatch { expected: n, found: row.len() });
            }
            m.data[i][..n].copy_from_slice(row);
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i][j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i][j] = v;
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = (0..self.n).map(|j| self.data[i][j] * x[j]).sum();
        }
    }
}

/// Solves `a x = b` by partial-pivoting elimination, writing `x`.
pub fn small_dense_solve(a: &SmallMatrix, b: &[f64], x: &mut [f64]) -> Result<(), SolveError> {
    let n = a.n;
    if b.len() < n || x.len() < n {
        return Err(SolveError::DimensionMismatch { expected: n, found: b.len().min(x.len()) });
    }
    let mut m = a.data;
    let mut rhs = [0.0; MAX_DENSE];
    rhs[..n].copy_from_slice(&b[..n]);
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))
            .unwrap();
        if m[p][k].abs() < PIVOT_FLOOR {
            return Err(SolveError::Singular { row: k });
        }
        if p != k {
            m.swap(p, k);
            rhs.swap(p, k);
        }
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            if f != 0.0 {
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                rhs[i] -= f * rhs[k];
            }
        }
    }
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (rhs[i] - s) / m[i][i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_rhs() {
        let a = SmallMatrix::identity(4).unwrap();
        let b = [1.0, -2.0, 3.5, 0.25];
        let mut x = [0.0; 4];
        small_dense_solve(&a, &b, &mut x).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn scalar_case() {
        let a = SmallMatrix::from_rows(&[&[2.5]]).unwrap();
        let mut x = [0.0];
        small_dense_solve(&a, &[5.0], &mut x).unwrap();
        assert_eq!(x[0], 2.0);
    }

    #[test]
    fn two_by_two_hand_elimination() {
        let a = SmallMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]).unwrap();
        let mut x = [0.0; 2];
        small_dense_solve(&a, &[3.0, 4.0], &mut x).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_pivot() {
        let a = SmallMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap();
        let mut x = [0.0; 2];
        assert!(matches!(small_dense_solve(&a, &[1.0, 1.0], &mut x), Err(SolveError::Singular { .. })));
    }

    #[test]
    fn too_large() {
        assert!(SmallMatrix::zeros(9).is_err());
    }
}

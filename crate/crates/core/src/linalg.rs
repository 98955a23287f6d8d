//! Small dense/tridiagonal helpers.

/// Tridiagonal matrix stored by diagonals. `sub[i]` couples row `i` to
/// column `i - 1`, `sup[i]` couples row `i` to column `i + 1`; `sub[0]`
/// and `sup[n - 1]` are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * v[i];
                if i > 0 {
                    s += self.sub[i] * v[i - 1];
                }
                if i + 1 < n {
                    s += self.sup[i] * v[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn transpose(&self) -> Tridiagonal {
        let n = self.len();
        let mut sub = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for i in 0..n {
            if i > 0 {
                sub[i] = self.sup[i - 1];
            }
            if i + 1 < n {
                sup[i] = self.sub[i + 1];
            }
        }
        Tridiagonal { sub, diag: self.diag.clone(), sup }
    }

    /// Thomas algorithm. The matrices used here are diagonally dominant
    /// M-matrices, so no pivoting is needed.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        c[0] = if n > 1 { self.sup[0] / denom } else { 0.0 };
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.sub[i] * c[i - 1];
            c[i] = if i + 1 < n { self.sup[i] / denom } else { 0.0 };
            d[i] = (rhs[i] - self.sub[i] * d[i - 1]) / denom;
        }
        let mut x = d;
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_solves_against_dense_product() {
        let m = Tridiagonal {
            sub: vec![0.0, -1.0, -0.5, -2.0],
            diag: vec![4.0, 3.0, 5.0, 6.0],
            sup: vec![-1.0, -0.7, -1.2, 0.0],
        };
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let b = m.mul_vec(&x);
        let got = m.solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-14);
        }
        let bt = m.transpose().mul_vec(&x);
        let gt = m.transpose().solve(&bt);
        for (g, e) in gt.iter().zip(&x) {
            assert!((g - e).abs() < 1e-14);
        }
    }
}

//! Dense symmetric linear algebra used throughout: Cholesky factorization,
//! triangular solves, inverses and log-determinants of positive definite
//! matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factorize `a` as `L L^T`. Fails if `a` is not positive definite.
    pub fn new(a: ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "cholesky of {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite(Some(format!(
                    "pivot {j} is {d:e}"
                ))));
            }
            let dj = d.sqrt();
            l[[j, j]] = dj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / dj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> ArrayView2<'_, f64> {
        self.l.view()
    }

    /// log det A = 2 sum log l_jj
    pub fn log_det(&self) -> f64 {
        (0..self.l.nrows()).map(|j| self.l[[j, j]].ln()).sum::<f64>() * 2.0
    }

    /// Solve `A x = b`.
    pub fn solve_vec(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.l.nrows();
        let mut y = b.to_owned();
        // forward: L y = b
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[[i, k]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[[k, i]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        y
    }

    /// Inverse of A, symmetrized.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.l.nrows();
        let mut inv = Array2::<f64>::zeros((n, n));
        let mut e = Array1::<f64>::zeros(n);
        for j in 0..n {
            e.fill(0.0);
            e[j] = 1.0;
            let col = self.solve_vec(e.view());
            inv.column_mut(j).assign(&col);
        }
        // enforce exact symmetry
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
                inv[[i, j]] = v;
                inv[[j, i]] = v;
            }
        }
        inv
    }

    /// Sample `z ~ N(0, A)` given standard normal draws in `std_normals`.
    pub fn correlate(&self, std_normals: ArrayView1<f64>) -> Array1<f64> {
        self.l.dot(&std_normals)
    }
}

/// Smallest eigenvalue of a symmetric matrix (bisection on the Cholesky
/// test, adequate for the small shifts needed here).
pub fn min_eigenvalue_sym(a: ArrayView2<f64>) -> f64 {
    // Gershgorin bounds
    let n = a.nrows();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r: f64 = (0..n).filter(|&j| j != i).map(|j| a[[i, j]].abs()).sum();
        lo = lo.min(a[[i, i]] - r);
        hi = hi.max(a[[i, i]] + r);
    }
    if n == 0 {
        return 0.0;
    }
    let scale = hi.abs().max(lo.abs()).max(1.0);
    let mut lo = lo - 1e-12 * scale;
    let mut hi = hi;
    // A - t I is PD iff t < lambda_min
    let is_pd_shift = |t: f64| {
        let mut m = a.to_owned();
        for i in 0..n {
            m[[i, i]] -= t;
        }
        Cholesky::new(m.view()).is_ok()
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if is_pd_shift(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * scale {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Max absolute difference between two matrices.
pub fn max_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Symmetrize in place: (A + A^T)/2.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_roundtrip() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let ch = Cholesky::new(a.view()).unwrap();
        let l = ch.factor().to_owned();
        let back = l.dot(&l.t());
        assert!(max_abs_diff(a.view(), back.view()) < 1e-12);
        let inv = ch.inverse();
        let prod = a.dot(&inv);
        let eye = Array2::<f64>::eye(3);
        assert!(max_abs_diff(prod.view(), eye.view()) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(Cholesky::new(a.view()).is_err());
    }

    #[test]
    fn log_det_matches_2x2() {
        let a = array![[2.0, 0.3], [0.3, 1.5]];
        let ch = Cholesky::new(a.view()).unwrap();
        let det: f64 = 2.0 * 1.5 - 0.3 * 0.3;
        assert!((ch.log_det() - det.ln()).abs() < 1e-12);
    }

    #[test]
    fn min_eig_of_diagonal() {
        let a = array![[3.0, 0.0], [0.0, 0.7]];
        assert!((min_eigenvalue_sym(a.view()) - 0.7).abs() < 1e-9);
    }

    #[test]
    fn min_eig_of_correlated() {
        // eigenvalues 1 +- 0.6
        let a = array![[1.0, 0.6], [0.6, 1.0]];
        assert!((min_eigenvalue_sym(a.view()) - 0.4).abs() < 1e-9);
    }
}

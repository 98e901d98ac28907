//! Independent numerical oracles used by the integration tests: adaptive
//! quadrature for univariate truncated moments, a plain rejection sampler
//! for small multivariate truncated moments, and a Nelder–Mead direct
//! maximizer for tiny penalized-likelihood problems.
#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// Adaptive Simpson integration of `f` over [a, b] to absolute tolerance.
fn adaptive_simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, m: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, 0.5 * (a + m), m);
        let right = simpson(f, m, 0.5 * (m + b), b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, right, 0.5 * tol, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    recurse(&f, a, b, simpson(&f, a, m, b), tol, 48)
}

/// Quadrature oracle for the moments of N(mean, variance) restricted to
/// [lower, upper] (either side may be infinite). Returns (m1, m2, prob).
/// Works in standardized coordinates; infinite limits are clipped where
/// the density is far below the target accuracy.
pub fn quadrature_trunc_moments(
    mean: f64,
    variance: f64,
    lower: f64,
    upper: f64,
) -> (f64, f64, f64) {
    let sd = variance.sqrt();
    // clip infinite tails where the density is negligible relative to the
    // target accuracy, and pre-split into unit panels so the adaptive rule
    // never sees a wide panel whose sample points all miss the mass
    let a = if lower.is_finite() {
        ((lower - mean) / sd).max(-9.0)
    } else {
        -9.0
    };
    let b = if upper.is_finite() {
        ((upper - mean) / sd).min(9.0)
    } else {
        9.0
    };
    assert!(a < b, "empty truncation region in oracle");
    let mut cuts = vec![a];
    let mut t = a.floor() + 1.0;
    while t < b {
        if t > a {
            cuts.push(t);
        }
        t += 1.0;
    }
    cuts.push(b);
    let mut z0 = 0.0;
    let mut z1 = 0.0;
    let mut z2 = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        z0 += adaptive_simpson(phi, lo, hi, 1e-16);
        z1 += adaptive_simpson(|z| z * phi(z), lo, hi, 1e-16);
        z2 += adaptive_simpson(|z| z * z * phi(z), lo, hi, 1e-16);
    }
    let m1z = z1 / z0;
    let m2z = z2 / z0;
    let m1 = mean + sd * m1z;
    let m2 = variance * m2z + 2.0 * mean * sd * m1z + mean * mean;
    (m1, m2, z0)
}

/// Monte Carlo oracle estimate of truncated moments of N(mean, cov)
/// restricted to a product of one-sided tails, by plain rejection from the
/// untruncated Gaussian. `tails[h]` is (bound, right) where `right` keeps
/// draws above the bound. Returns accepted draw count, first and second
/// raw moments, and elementwise standard errors of both.
pub struct RejectionOracle {
    pub accepted: usize,
    pub m1: Array1<f64>,
    pub m2: Array2<f64>,
    pub se_m1: Array1<f64>,
    pub se_m2: Array2<f64>,
    pub prob: f64,
}

pub fn rejection_oracle<R: Rng>(
    mean: ArrayView1<f64>,
    cov: &Array2<f64>,
    tails: &[(f64, bool)],
    draws: usize,
    rng: &mut R,
) -> RejectionOracle {
    use rand_distr::{Distribution, StandardNormal};
    let q = mean.len();
    // dense Cholesky of the covariance (lower factor)
    let mut l = cov.clone();
    for j in 0..q {
        for k in 0..j {
            let s: f64 = (0..k).map(|m| l[[j, m]] * l[[k, m]]).sum();
            l[[j, k]] = (l[[j, k]] - s) / l[[k, k]];
        }
        let s: f64 = (0..j).map(|m| l[[j, m]] * l[[j, m]]).sum();
        l[[j, j]] = (l[[j, j]] - s).sqrt();
        for k in (j + 1)..q {
            l[[j, k]] = 0.0;
        }
    }
    let mut sum1 = Array1::<f64>::zeros(q);
    let mut sum2 = Array2::<f64>::zeros((q, q));
    let mut sumsq1 = Array1::<f64>::zeros(q);
    let mut sumsq2 = Array2::<f64>::zeros((q, q));
    let mut accepted = 0usize;
    let mut x = vec![0.0f64; q];
    for _ in 0..draws {
        for h in 0..q {
            let z: f64 = StandardNormal.sample(rng);
            x[h] = z;
        }
        let mut inside = true;
        let mut y = vec![0.0f64; q];
        for h in 0..q {
            let mut v = mean[h];
            for k in 0..=h {
                v += l[[h, k]] * x[k];
            }
            y[h] = v;
            let (b, right) = tails[h];
            if (right && v <= b) || (!right && v >= b) {
                inside = false;
                break;
            }
        }
        if !inside {
            continue;
        }
        accepted += 1;
        for h in 0..q {
            sum1[h] += y[h];
            sumsq1[h] += y[h] * y[h];
            for k in 0..q {
                let prod = y[h] * y[k];
                sum2[[h, k]] += prod;
                sumsq2[[h, k]] += prod * prod;
            }
        }
    }
    assert!(accepted > 1000, "rejection oracle accepted too few draws");
    let na = accepted as f64;
    let m1 = sum1.mapv(|v| v / na);
    let m2 = sum2.mapv(|v| v / na);
    let se_m1 = Array1::from_shape_fn(q, |h| {
        ((sumsq1[h] / na - m1[h] * m1[h]).max(0.0) / na).sqrt()
    });
    let se_m2 = Array2::from_shape_fn((q, q), |(h, k)| {
        ((sumsq2[[h, k]] / na - m2[[h, k]] * m2[[h, k]]).max(0.0) / na).sqrt()
    });
    RejectionOracle {
        accepted,
        m1,
        m2,
        se_m1,
        se_m2,
        prob: na / draws as f64,
    }
}

/// Nelder–Mead minimization with restarts. Returns (best_x, best_f).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    scale: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut best = (x0.to_vec(), f(x0));
    for restart in 0..3 {
        let step = scale * 0.5f64.powi(restart);
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best.0.clone(), best.1));
        for h in 0..n {
            let mut x = best.0.clone();
            x[h] += step;
            let v = f(&x);
            simplex.push((x, v));
        }
        for _ in 0..max_iter {
            simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let spread = simplex[n].1 - simplex[0].1;
            let size: f64 = (0..n)
                .map(|h| (simplex[n].0[h] - simplex[0].0[h]).abs())
                .fold(0.0, f64::max);
            if spread < 1e-12 && size < 1e-9 {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|h| simplex[..n].iter().map(|s| s.0[h]).sum::<f64>() / n as f64)
                .collect();
            let reflect: Vec<f64> = (0..n)
                .map(|h| centroid[h] + (centroid[h] - simplex[n].0[h]))
                .collect();
            let fr = f(&reflect);
            if fr < simplex[0].1 {
                let expand: Vec<f64> = (0..n)
                    .map(|h| centroid[h] + 2.0 * (centroid[h] - simplex[n].0[h]))
                    .collect();
                let fe = f(&expand);
                simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (reflect, fr);
            } else {
                let contract: Vec<f64> = (0..n)
                    .map(|h| centroid[h] + 0.5 * (simplex[n].0[h] - centroid[h]))
                    .collect();
                let fc = f(&contract);
                if fc < simplex[n].1 {
                    simplex[n] = (contract, fc);
                } else {
                    let x0c = simplex[0].0.clone();
                    for s in simplex.iter_mut().skip(1) {
                        for h in 0..n {
                            s.0[h] = x0c[h] + 0.5 * (s.0[h] - x0c[h]);
                        }
                        s.1 = f(&s.0);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if simplex[0].1 < best.1 {
            best = simplex[0].clone();
        }
    }
    best
}

//! Graphical lasso with an unpenalized diagonal: maximize
//! log det Theta - tr(Theta S) - rho * sum_{h != k} |theta_hk|
//! over positive definite Theta, by block coordinate descent over columns
//! with an inner cyclic coordinate-descent lasso. Solutions carry a KKT
//! residual certificate.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
#[cfg(test)]
use crate::linalg::symmetrize;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GlassoConfig {
    /// sweep-to-sweep max-abs change in the working covariance, relative
    /// to mean |diag S|, below which the KKT certificate is checked
    pub sweep_tol: f64,
    /// absolute KKT residual required to declare convergence
    pub kkt_tol: f64,
    pub max_sweeps: usize,
}

impl Default for GlassoConfig {
    fn default() -> Self {
        Self {
            sweep_tol: 1e-7,
            kkt_tol: 1e-5,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlassoSolution {
    pub theta: Array2<f64>,
    pub sigma: Array2<f64>,
    pub rho: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl GlassoSolution {
    /// Number of nonzero off-diagonal entries, both triangles counted.
    pub fn nonzero_offdiag(&self) -> usize {
        let p = self.theta.nrows();
        let mut a = 0;
        for h in 0..p {
            for k in 0..p {
                if h != k && self.theta[[h, k]] != 0.0 {
                    a += 1;
                }
            }
        }
        a
    }
}

/// Max violation of the stationarity system at (theta, sigma):
/// off-diagonal |sigma_hk - s_hk - rho sign(theta_hk)| where theta_hk != 0,
/// max(0, |sigma_hk - s_hk| - rho) where theta_hk = 0, and the diagonal
/// residual |sigma_hh - s_hh|.
pub fn kkt_residual(
    theta: ArrayView2<f64>,
    sigma: ArrayView2<f64>,
    s: ArrayView2<f64>,
    rho: f64,
) -> f64 {
    let p = theta.nrows();
    let mut worst = 0.0f64;
    for h in 0..p {
        worst = worst.max((sigma[[h, h]] - s[[h, h]]).abs());
        for k in 0..p {
            if h == k {
                continue;
            }
            let g = sigma[[h, k]] - s[[h, k]];
            let r = if theta[[h, k]] != 0.0 {
                (g - rho * theta[[h, k]].signum()).abs()
            } else {
                (g.abs() - rho).max(0.0)
            };
            worst = worst.max(r);
        }
    }
    worst
}

/// Penalized log-likelihood objective log det Theta - tr(Theta S)
/// - rho sum_{h != k} |theta_hk|.
pub fn objective(theta: ArrayView2<f64>, s: ArrayView2<f64>, rho: f64) -> Result<f64> {
    let ch = Cholesky::new(theta)?;
    let p = theta.nrows();
    let mut tr = 0.0;
    let mut pen = 0.0;
    for h in 0..p {
        for k in 0..p {
            tr += theta[[h, k]] * s[[h, k]];
            if h != k {
                pen += theta[[h, k]].abs();
            }
        }
    }
    Ok(ch.log_det() - tr - rho * pen)
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn validate_input(s: ArrayView2<f64>, rho: f64) -> Result<()> {
    let p = s.nrows();
    if s.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "S must be square, got {:?}",
            s.dim()
        )));
    }
    if rho < 0.0 || !rho.is_finite() {
        return Err(Error::InvalidConfig(format!("rho must be >= 0, got {rho}")));
    }
    for h in 0..p {
        if !(s[[h, h]] > 0.0) {
            return Err(Error::InvalidData(format!(
                "S has non-positive diagonal entry {} at {h}",
                s[[h, h]]
            )));
        }
        for k in (h + 1)..p {
            if (s[[h, k]] - s[[k, h]]).abs() > 1e-8 * (1.0 + s[[h, k]].abs()) {
                return Err(Error::InvalidData(format!(
                    "S asymmetric at ({h},{k})"
                )));
            }
        }
    }
    Ok(())
}

/// Reconstruct theta from the working covariance and the per-column lasso
/// coefficients; exact zeros of beta carry over to theta.
fn theta_from_betas(w: &Array2<f64>, betas: &Array2<f64>) -> Array2<f64> {
    let p = w.nrows();
    let mut theta = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        // w12' beta over the off-column entries
        let mut dot = 0.0;
        for (idx, h) in (0..p).filter(|&h| h != j).enumerate() {
            dot += w[[h, j]] * betas[[idx, j]];
        }
        let tjj = 1.0 / (w[[j, j]] - dot);
        theta[[j, j]] = tjj;
        for (idx, h) in (0..p).filter(|&h| h != j).enumerate() {
            theta[[h, j]] = if betas[[idx, j]] == 0.0 {
                0.0
            } else {
                -betas[[idx, j]] * tjj
            };
        }
    }
    // average the two triangles; a zero survives only if both copies are zero
    for h in 0..p {
        for k in (h + 1)..p {
            let v = 0.5 * (theta[[h, k]] + theta[[k, h]]);
            theta[[h, k]] = v;
            theta[[k, h]] = v;
        }
    }
    theta
}

/// Solve the graphical lasso problem for one (S, rho) pair.
pub fn glasso_fit(
    s: ArrayView2<f64>,
    rho: f64,
    warm: Option<&GlassoSolution>,
    cfg: &GlassoConfig,
) -> Result<GlassoSolution> {
    validate_input(s, rho)?;
    let p = s.nrows();
    let scale = (0..p).map(|h| s[[h, h]].abs()).sum::<f64>() / p as f64;

    if p == 1 {
        let theta = Array2::from_elem((1, 1), 1.0 / s[[0, 0]]);
        let sigma = s.to_owned();
        return Ok(GlassoSolution {
            theta,
            sigma,
            rho,
            kkt_residual: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    if rho == 0.0 {
        // unpenalized MLE: Theta = S^{-1}; requires S positive definite
        let ch = Cholesky::new(s).map_err(|_| {
            Error::NotPositiveDefinite(Some(
                "rho = 0 requires a positive definite S".into(),
            ))
        })?;
        let theta = ch.inverse();
        let res = kkt_residual(theta.view(), s, s, 0.0);
        return Ok(GlassoSolution {
            theta,
            sigma: s.to_owned(),
            rho,
            kkt_residual: res,
            iterations: 0,
            converged: true,
        });
    }

    // working covariance: diagonal pinned to diag S (unpenalized diagonal)
    let mut w = match warm {
        Some(ws) if ws.sigma.nrows() == p => ws.sigma.clone(),
        _ => s.to_owned(),
    };
    for h in 0..p {
        w[[h, h]] = s[[h, h]];
    }
    // betas[idx, j]: lasso coefficients of column j against the others,
    // idx running over {0..p-1} \ {j} in ascending order
    let mut betas = Array2::<f64>::zeros((p - 1, p));
    if let Some(ws) = warm {
        if ws.theta.nrows() == p {
            for j in 0..p {
                let tjj = ws.theta[[j, j]];
                if tjj > 0.0 {
                    for (idx, h) in (0..p).filter(|&h| h != j).enumerate() {
                        betas[[idx, j]] = -ws.theta[[h, j]] / tjj;
                    }
                }
            }
        }
    }

    let sweep_tol = cfg.sweep_tol * scale;
    let mut inner_tol = sweep_tol * 0.1;
    let mut sweeps = 0usize;
    let mut converged = false;
    let mut best: Option<(Array2<f64>, Array2<f64>, f64)> = None;

    let q = p - 1;
    // contiguous per-column scratch: W11 (row-major q x q), s12, beta, r
    let mut w11 = vec![0.0f64; q * q];
    let mut s12 = vec![0.0f64; q];
    let mut beta = vec![0.0f64; q];
    let mut r = vec![0.0f64; q];

    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for j in 0..p {
            // gather the j-excluded block into dense scratch
            for (a, h) in (0..p).filter(|&h| h != j).enumerate() {
                s12[a] = s[[h, j]];
                beta[a] = betas[[a, j]];
                for (b, k) in (0..p).filter(|&k| k != j).enumerate() {
                    w11[a * q + b] = w[[h, k]];
                }
            }
            // residual r = W11 beta
            for a in 0..q {
                let mut acc = 0.0;
                let row = &w11[a * q..(a + 1) * q];
                for b in 0..q {
                    if beta[b] != 0.0 {
                        acc += row[b] * beta[b];
                    }
                }
                r[a] = acc;
            }
            // coordinate descent: full passes, with inner passes
            // restricted to the active set between them; one shared
            // pass budget bounds the column solve
            let mut pass = 0usize;
            loop {
                pass += 1;
                if pass > 10_000 {
                    break;
                }
                let mut delta = 0.0f64;
                for a in 0..q {
                    let waa = w11[a * q + a];
                    let grad = s12[a] - (r[a] - waa * beta[a]);
                    let new = soft_threshold(grad, rho) / waa;
                    let d = new - beta[a];
                    if d != 0.0 {
                        let col = &w11[a * q..(a + 1) * q];
                        for b in 0..q {
                            r[b] += d * col[b];
                        }
                        beta[a] = new;
                        delta = delta.max(d.abs() * waa);
                    }
                }
                if delta < inner_tol {
                    break;
                }
                // polish the active coordinates before the next full pass
                let active: Vec<usize> = (0..q).filter(|&a| beta[a] != 0.0).collect();
                while pass <= 10_000 {
                    pass += 1;
                    let mut adelta = 0.0f64;
                    for &a in &active {
                        let waa = w11[a * q + a];
                        let grad = s12[a] - (r[a] - waa * beta[a]);
                        let new = soft_threshold(grad, rho) / waa;
                        let d = new - beta[a];
                        if d != 0.0 {
                            let col = &w11[a * q..(a + 1) * q];
                            for b in 0..q {
                                r[b] += d * col[b];
                            }
                            beta[a] = new;
                            adelta = adelta.max(d.abs() * waa);
                        }
                    }
                    if adelta < inner_tol {
                        break;
                    }
                }
            }
            // update the covariance column: w12 = W11 beta
            for (a, h) in (0..p).filter(|&h| h != j).enumerate() {
                betas[[a, j]] = beta[a];
                max_delta = max_delta.max((w[[h, j]] - r[a]).abs());
                w[[h, j]] = r[a];
                w[[j, h]] = r[a];
            }
        }

        if max_delta < sweep_tol {
            // certify: materialize theta, invert exactly, check KKT
            let theta = theta_from_betas(&w, &betas);
            if let Ok(ch) = Cholesky::new(theta.view()) {
                let sigma = ch.inverse();
                let res = kkt_residual(theta.view(), sigma.view(), s, rho);
                if res <= cfg.kkt_tol {
                    return Ok(GlassoSolution {
                        theta,
                        sigma,
                        rho,
                        kkt_residual: res,
                        iterations: sweeps,
                        converged: true,
                    });
                }
                best = Some((theta, sigma, res));
            }
            // not certified yet: keep sweeping with a tighter inner solve
            inner_tol *= 0.1;
            if inner_tol < 1e-15 * scale {
                converged = false;
                break;
            }
        }
    }

    // cap exceeded: return the best certified-inverse iterate, flagged
    let (theta, sigma, res) = match best {
        Some(t) => t,
        None => {
            let theta = theta_from_betas(&w, &betas);
            let ch = Cholesky::new(theta.view())?;
            let sigma = ch.inverse();
            let res = kkt_residual(theta.view(), sigma.view(), s, rho);
            (theta, sigma, res)
        }
    };
    let _ = converged;
    Ok(GlassoSolution {
        theta,
        sigma,
        rho,
        kkt_residual: res,
        iterations: sweeps,
        converged: false,
    })
}

/// Largest penalty with a fully sparse solution for a given S:
/// max off-diagonal |s_hk|.
pub fn rho_max_for(s: ArrayView2<f64>) -> f64 {
    let p = s.nrows();
    let mut m = 0.0f64;
    for h in 0..p {
        for k in 0..p {
            if h != k {
                m = m.max(s[[h, k]].abs());
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::<f64>::zeros((p, p));
        for i in 0..p {
            for j in 0..p {
                a[[i, j]] = rng.gen_range(-1.0..1.0);
            }
        }
        let mut s = a.t().dot(&a) / p as f64;
        for i in 0..p {
            s[[i, i]] += 1.0;
        }
        symmetrize(&mut s);
        s
    }

    #[test]
    fn diagonal_s_gives_diagonal_theta() {
        let s = array![[2.0, 0.0], [0.0, 0.5]];
        for rho in [0.0, 0.1, 10.0] {
            let sol = glasso_fit(s.view(), rho, None, &GlassoConfig::default()).unwrap();
            assert!((sol.theta[[0, 0]] - 0.5).abs() < 1e-10);
            assert!((sol.theta[[1, 1]] - 2.0).abs() < 1e-10);
            assert_eq!(sol.theta[[0, 1]], 0.0);
            assert!(max_abs_diff(sol.sigma.view(), s.view()) < 1e-10);
            assert!(sol.converged);
        }
    }

    #[test]
    fn rho_zero_inverts_2x2() {
        let s = array![[1.0, 0.5], [0.5, 1.0]];
        let sol = glasso_fit(s.view(), 0.0, None, &GlassoConfig::default()).unwrap();
        let expect = array![[4.0 / 3.0, -2.0 / 3.0], [-2.0 / 3.0, 4.0 / 3.0]];
        assert!(max_abs_diff(sol.theta.view(), expect.view()) < 1e-10);
        assert!(sol.kkt_residual < 1e-10);
    }

    #[test]
    fn large_rho_zeroes_off_diagonal() {
        let s = random_spd(6, 3);
        let rho = rho_max_for(s.view());
        let sol = glasso_fit(s.view(), rho, None, &GlassoConfig::default()).unwrap();
        assert_eq!(sol.nonzero_offdiag(), 0);
        for h in 0..6 {
            assert!((sol.theta[[h, h]] - 1.0 / s[[h, h]]).abs() < 1e-8);
        }
        // slightly above rho_max as well
        let sol2 = glasso_fit(s.view(), rho * 1.01, None, &GlassoConfig::default()).unwrap();
        assert_eq!(sol2.nonzero_offdiag(), 0);
    }

    #[test]
    fn kkt_residual_zero_at_analytic_solutions() {
        let s = array![[2.0, 0.0], [0.0, 0.5]];
        let theta = array![[0.5, 0.0], [0.0, 2.0]];
        assert!(kkt_residual(theta.view(), s.view(), s.view(), 0.3) < 1e-15);
        let s2 = array![[1.0, 0.5], [0.5, 1.0]];
        let t2 = array![[4.0 / 3.0, -2.0 / 3.0], [-2.0 / 3.0, 4.0 / 3.0]];
        assert!(kkt_residual(t2.view(), s2.view(), s2.view(), 0.0) < 1e-12);
    }

    #[test]
    fn kkt_residual_detects_perturbation() {
        let s = random_spd(5, 11);
        let sol = glasso_fit(s.view(), 0.1, None, &GlassoConfig::default()).unwrap();
        assert!(sol.kkt_residual <= 1e-5);
        let mut theta = sol.theta.clone();
        theta[[0, 1]] += 1e-2;
        theta[[1, 0]] += 1e-2;
        let sigma = Cholesky::new(theta.view()).unwrap().inverse();
        let res = kkt_residual(theta.view(), sigma.view(), s.view(), 0.1);
        assert!(res > 1e-4);
    }

    #[test]
    fn objective_nondecreasing_over_sweeps() {
        let s = random_spd(6, 21);
        let rho = 0.05;
        let mut last = f64::NEG_INFINITY;
        for cap in 1..6 {
            let cfg = GlassoConfig {
                max_sweeps: cap,
                sweep_tol: 0.0,
                ..Default::default()
            };
            let sol = glasso_fit(s.view(), rho, None, &cfg).unwrap();
            let obj = objective(sol.theta.view(), s.view(), rho).unwrap();
            assert!(obj >= last - 1e-9, "objective decreased at sweep {cap}");
            last = obj;
        }
    }

    #[test]
    fn warm_and_cold_agree_in_objective() {
        let s = random_spd(8, 5);
        let cfg = GlassoConfig::default();
        let cold = glasso_fit(s.view(), 0.08, None, &cfg).unwrap();
        let warm_src = glasso_fit(s.view(), 0.12, None, &cfg).unwrap();
        let warm = glasso_fit(s.view(), 0.08, Some(&warm_src), &cfg).unwrap();
        let oc = objective(cold.theta.view(), s.view(), 0.08).unwrap();
        let ow = objective(warm.theta.view(), s.view(), 0.08).unwrap();
        assert!((oc - ow).abs() <= 1e-6 * oc.abs().max(1.0));
    }

    #[test]
    fn mutual_inverse_within_tolerance() {
        let s = random_spd(7, 9);
        let sol = glasso_fit(s.view(), 0.05, None, &GlassoConfig::default()).unwrap();
        let prod = sol.theta.dot(&sol.sigma);
        let eye = Array2::<f64>::eye(7);
        assert!(max_abs_diff(prod.view(), eye.view()) < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = array![[1.0, 2.0], [2.0, 1.0]]; // indefinite
        assert!(glasso_fit(s.view(), 0.0, None, &GlassoConfig::default()).is_err());
        let s2 = array![[0.0, 0.0], [0.0, 1.0]];
        assert!(glasso_fit(s2.view(), 0.1, None, &GlassoConfig::default()).is_err());
        let s3 = array![[1.0, 0.1], [0.1, 1.0]];
        assert!(glasso_fit(s3.view(), -0.1, None, &GlassoConfig::default()).is_err());
    }
}

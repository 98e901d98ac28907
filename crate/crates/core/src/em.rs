//! EM estimation of the censored graphical lasso: E-step sufficient
//! statistics from truncated conditional moments, M-step via the graphical
//! lasso, observed-data log-likelihood evaluation, and the combined
//! fixed-point/KKT certificate.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glasso::{self, GlassoConfig, GlassoSolution};
use crate::linalg::{min_eigenvalue_sym, Cholesky};
use crate::model::{CensoredDataset, ModelParams};
use crate::trunc::{
    conditional_gaussian, exact_trunc_mvn_moments, meanfield_trunc_moments, norm_cdf, norm_sf,
    region_prob_mc, TruncConfig, TruncRegion,
};

/// How censored-coordinate moments are completed in the E-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EStepMode {
    /// Gibbs-sampled moments of the truncated conditional law
    Exact,
    /// univariate completions with product cross moments
    MeanField,
    /// untruncated conditional moments (missing-at-random baseline)
    Mar,
}

/// E-step output: completed mean vector and covariance-like matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuffStats {
    pub xbar: Vec<f64>,
    #[serde(with = "crate::io::serde_array2")]
    pub s: Array2<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmConfig {
    /// relative parameter-change tolerance of the EM outer loop
    pub tol: f64,
    pub max_iter: usize,
    pub glasso: GlassoConfig,
    pub trunc: TruncConfig,
    /// minimum eigenvalue below which the completed S is lifted
    pub psd_floor: f64,
    /// eigenvalue target of the lift
    pub psd_target: f64,
    /// Monte Carlo draws per row for multivariate region probabilities
    /// in the observed log-likelihood
    pub loglik_draws: usize,
    /// stationarity-residual bound required to declare convergence in
    /// the deterministic E-step modes
    pub kkt_target: f64,
    /// fixed-point residual bound, relative to 1 + max|mu|
    pub fp_target: f64,
    /// relative step tolerance of the Monte Carlo (exact) mode; the run
    /// ends with one refined E-step at a larger sampling budget
    pub exact_tol: f64,
    pub exact_refine_factor: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 500,
            glasso: GlassoConfig::default(),
            trunc: TruncConfig::default(),
            psd_floor: 1e-10,
            psd_target: 1e-8,
            loglik_draws: 100_000,
            kkt_target: 5e-5,
            fp_target: 5e-6,
            exact_tol: 1e-3,
            exact_refine_factor: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub rho: f64,
    pub em_iterations: usize,
    pub converged: bool,
    /// penalized Q objective at the final iterate
    pub q_value: f64,
    /// graphical-lasso stationarity residual at the final iterate
    pub kkt_residual: f64,
    /// max_h |xbar_h(mu, Theta) - mu_h| at the final iterate
    pub fixed_point_residual: f64,
    pub suffstats: SuffStats,
    /// how many E-steps needed the PSD lift, and the largest shift applied
    pub psd_repairs: usize,
    pub max_psd_shift: f64,
}

impl FitResult {
    /// Nonzero off-diagonal count of the estimated precision matrix.
    pub fn nonzero_offdiag(&self) -> usize {
        let t = self.params.theta();
        let p = t.nrows();
        (0..p)
            .flat_map(|h| (0..p).map(move |k| (h, k)))
            .filter(|&(h, k)| h != k && t[[h, k]] != 0.0)
            .count()
    }
}

/// splitmix64; derives per-row and per-iteration streams from one master
/// seed independently of scheduling order.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct RowMoments {
    x: Array1<f64>,
    xx: Array2<f64>,
}

fn row_moments(
    dataset: &CensoredDataset,
    params: &ModelParams,
    mode: EStepMode,
    cfg: &EmConfig,
    i: usize,
    seed: u64,
) -> Result<RowMoments> {
    let p = dataset.p();
    let part = dataset.partition_row(i)?;
    let mut x = Array1::<f64>::zeros(p);
    for &h in &part.observed {
        x[h] = dataset.value(i, h);
    }
    let c = part.censored();
    if c.is_empty() {
        let mut xx = Array2::<f64>::zeros((p, p));
        for h in 0..p {
            for k in 0..p {
                xx[[h, k]] = x[h] * x[k];
            }
        }
        return Ok(RowMoments { x, xx });
    }

    let x_o = dataset.observed_subvector(i, &part.observed);
    let cond = conditional_gaussian(params, &part, x_o.view())?;
    let map_err = |e: Error| match e {
        Error::RegionUnderflow { floor } => Error::DegenerateRegion { row: i, floor },
        other => other,
    };
    let (m1, m2) = match mode {
        EStepMode::Mar => {
            // untruncated conditional moments
            let q = c.len();
            let mut m2 = Array2::<f64>::zeros((q, q));
            for a in 0..q {
                for b in 0..q {
                    m2[[a, b]] = cond.covariance[[a, b]] + cond.mean[a] * cond.mean[b];
                }
            }
            (cond.mean.clone(), m2)
        }
        EStepMode::MeanField => {
            let region = TruncRegion::from_partition(&part, dataset.bounds())?;
            let tm = meanfield_trunc_moments(&cond, &region).map_err(map_err)?;
            (tm.m1, tm.m2)
        }
        EStepMode::Exact => {
            let region = TruncRegion::from_partition(&part, dataset.bounds())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tm =
                exact_trunc_mvn_moments(&cond, &region, &cfg.trunc, &mut rng).map_err(map_err)?;
            (tm.m1, tm.m2)
        }
    };
    for (a, &h) in c.iter().enumerate() {
        x[h] = m1[a];
    }
    // four-case completion of the second-moment table
    let mut xx = Array2::<f64>::zeros((p, p));
    let cpos: Vec<Option<usize>> = (0..p)
        .map(|h| c.iter().position(|&v| v == h))
        .collect();
    for h in 0..p {
        for k in 0..p {
            xx[[h, k]] = match (cpos[h], cpos[k]) {
                (None, None) => x[h] * x[k],
                (None, Some(b)) => x[h] * m1[b],
                (Some(a), None) => m1[a] * x[k],
                (Some(a), Some(b)) => {
                    if a == b {
                        m2[[a, a]]
                    } else {
                        m2[[a, b]]
                    }
                }
            };
        }
    }
    Ok(RowMoments { x, xx })
}

/// Compute the completed sufficient statistics xbar(mu, Theta) and
/// S(mu, Theta). Rows are evaluated in parallel; per-row random streams
/// are derived from `seed` and the row index, so the result does not
/// depend on the worker count.
pub fn e_step(
    dataset: &CensoredDataset,
    params: &ModelParams,
    mode: EStepMode,
    cfg: &EmConfig,
    seed: u64,
) -> Result<SuffStats> {
    let n = dataset.n();
    let p = dataset.p();
    if params.p() != p {
        return Err(Error::DimensionMismatch(format!(
            "params for {} variables, data has {p}",
            params.p()
        )));
    }
    let rows: Vec<Result<RowMoments>> = (0..n)
        .into_par_iter()
        .map(|i| row_moments(dataset, params, mode, cfg, i, mix_seed(seed, i as u64)))
        .collect();
    let mut sum_x = Array1::<f64>::zeros(p);
    let mut sum_xx = Array2::<f64>::zeros((p, p));
    for r in rows {
        let r = r?;
        sum_x += &r.x;
        sum_xx += &r.xx;
    }
    let nf = n as f64;
    let xbar = &sum_x / nf;
    let mut s = sum_xx / nf;
    for h in 0..p {
        for k in 0..p {
            s[[h, k]] -= xbar[h] * xbar[k];
        }
    }
    crate::linalg::symmetrize(&mut s);
    Ok(SuffStats {
        xbar: xbar.to_vec(),
        s,
    })
}

/// Outcome of the PSD lift applied before an M-step.
pub struct MStepResult {
    pub params: ModelParams,
    pub glasso: GlassoSolution,
    pub psd_shift: Option<f64>,
}

/// M-step: mu from the completed mean, Theta from a graphical lasso solve
/// on the completed covariance. An indefinite completed matrix (possible
/// under the mean-field completion) is lifted to the configured floor
/// first; the shift is reported.
pub fn m_step(
    stats: &SuffStats,
    rho: f64,
    warm: Option<&GlassoSolution>,
    cfg: &EmConfig,
) -> Result<MStepResult> {
    let mut s = stats.s.clone();
    let lam = min_eigenvalue_sym(s.view());
    let psd_shift = if lam < cfg.psd_floor {
        let shift = cfg.psd_target - lam;
        for h in 0..s.nrows() {
            s[[h, h]] += shift;
        }
        Some(shift)
    } else {
        None
    };
    let sol = glasso::glasso_fit(s.view(), rho, warm, &cfg.glasso)?;
    let params = ModelParams::new(stats.xbar.clone(), sol.theta.clone())?;
    Ok(MStepResult {
        params,
        glasso: sol,
        psd_shift,
    })
}

fn param_delta(a: &ModelParams, b: &ModelParams) -> f64 {
    let mut d = a
        .mu()
        .iter()
        .zip(b.mu())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    d = d.max(crate::linalg::max_abs_diff(a.theta(), b.theta()));
    d
}

fn param_scale(p: &ModelParams) -> f64 {
    let m = p.mu().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let t = p.theta().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    1.0 + m.max(t)
}

/// Run the EM iteration for one penalty value.
pub fn fit_em(
    dataset: &CensoredDataset,
    rho: f64,
    init: Option<ModelParams>,
    mode: EStepMode,
    cfg: &EmConfig,
    seed: u64,
) -> Result<FitResult> {
    let init = match init {
        Some(p) => p,
        None => crate::path::diagonal_init(dataset, cfg)?.1,
    };
    let mut params = init;
    let mut warm: Option<GlassoSolution> = None;
    let mut psd_repairs = 0usize;
    let mut max_psd_shift = 0.0f64;
    let mut converged = false;
    let mut iterations = 0usize;
    // last two mean updates, for geometric extrapolation of the slow
    // censored-mean drift (vector Aitken step, applied only when the
    // successive steps are shrinking and nearly collinear)
    let mut mu_steps: Vec<Vec<f64>> = Vec::new();
    for iter in 0..cfg.max_iter {
        iterations = iter + 1;
        let stats = e_step(dataset, &params, mode, cfg, mix_seed(seed, 0x51ab ^ iter as u64))?;
        let m = m_step(&stats, rho, warm.as_ref(), cfg)?;
        if let Some(sh) = m.psd_shift {
            psd_repairs += 1;
            max_psd_shift = max_psd_shift.max(sh);
        }
        let delta = param_delta(&m.params, &params);
        let scale = param_scale(&m.params);
        // packed step over (mu, theta), theta in row-major order
        let p_dim = m.params.p();
        let mut step: Vec<f64> = Vec::with_capacity(p_dim * (p_dim + 1));
        step.extend(
            m.params
                .mu()
                .iter()
                .zip(params.mu())
                .map(|(a, b)| a - b),
        );
        step.extend(
            m.params
                .theta()
                .iter()
                .zip(params.theta())
                .map(|(a, b)| a - b),
        );
        params = m.params;
        warm = Some(m.glasso);
        mu_steps.push(step);
        if mu_steps.len() > 2 {
            mu_steps.remove(0);
        }
        if !matches!(mode, EStepMode::Exact) && iter >= 6 && mu_steps.len() == 2 {
            let (d1, d2) = (&mu_steps[0], &mu_steps[1]);
            let n1 = d1.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n2 = d2.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot = d1.iter().zip(d2).map(|(a, b)| a * b).sum::<f64>();
            if n2 > 0.0 && n2 < n1 && dot > 0.9 * n1 * n2 {
                let r = n2 / n1;
                let mut f = (r / (1.0 - r)).min(100.0);
                if f > 2.0 {
                    // halve the jump until the extrapolated theta stays PD;
                    // entries that are exactly zero remain zero
                    loop {
                        let mu_acc: Vec<f64> = params
                            .mu()
                            .iter()
                            .zip(&d2[..p_dim])
                            .map(|(m, d)| m + f * d)
                            .collect();
                        let mut th_acc = params.theta().to_owned();
                        for (v, d) in th_acc.iter_mut().zip(&d2[p_dim..]) {
                            if *v != 0.0 {
                                *v += f * d;
                            }
                        }
                        crate::linalg::symmetrize(&mut th_acc);
                        if Cholesky::new(th_acc.view()).is_ok() {
                            params = ModelParams::new(mu_acc, th_acc)?;
                            mu_steps.clear();
                            break;
                        }
                        f *= 0.5;
                        if f <= 2.0 {
                            break;
                        }
                    }
                }
            }
        }
        // Monte Carlo E-steps leave jitter in the iterates, so the exact
        // mode stops on a looser relative step and finishes with one
        // high-precision refinement below
        let tol = match mode {
            EStepMode::Exact => cfg.tol.max(cfg.exact_tol),
            _ => cfg.tol,
        };
        if delta < tol * scale {
            if matches!(mode, EStepMode::Exact) {
                converged = true;
                break;
            }
            let cert = e_step(dataset, &params, mode, cfg, mix_seed(seed, 0xf1aa_11ce))?;
            let fp = cert
                .xbar
                .iter()
                .zip(params.mu())
                .map(|(x, m)| (x - m).abs())
                .fold(0.0f64, f64::max);
            let kkt = glasso::kkt_residual(params.theta(), params.sigma(), cert.s.view(), rho);
            let mu_scale = 1.0 + params.mu().iter().fold(0.0f64, |a, &m| a.max(m.abs()));
            if kkt <= cfg.kkt_target && fp <= cfg.fp_target * mu_scale {
                converged = true;
                break;
            }
        }
    }
    if matches!(mode, EStepMode::Exact) {
        // refinement: continue the iteration at a larger sampling budget
        // and a tighter relative step, pinning the final iterate well
        // below the stochastic stopping noise of the loose phase
        let mut refined = cfg.clone();
        refined.trunc.gibbs_sweeps = cfg.trunc.gibbs_sweeps * cfg.exact_refine_factor;
        refined.trunc.burn_in = cfg.trunc.burn_in * cfg.exact_refine_factor;
        let refine_tol = cfg.tol.max(0.1 * cfg.exact_tol);
        for extra in 0..25 {
            let stats = e_step(
                dataset,
                &params,
                mode,
                &refined,
                mix_seed(seed, 0x5ef1_4e00 ^ extra),
            )?;
            let m = m_step(&stats, rho, warm.as_ref(), cfg)?;
            let delta = param_delta(&m.params, &params);
            let scale = param_scale(&m.params);
            params = m.params;
            warm = Some(m.glasso);
            if delta < refine_tol * scale {
                break;
            }
        }
    }
    // certificate: one more E-step at the final iterate
    let stats = e_step(dataset, &params, mode, cfg, mix_seed(seed, 0xf1aa_11ce))?;
    let fixed_point_residual = stats
        .xbar
        .iter()
        .zip(params.mu())
        .map(|(x, m)| (x - m).abs())
        .fold(0.0f64, f64::max);
    let kkt = glasso::kkt_residual(params.theta(), params.sigma(), stats.s.view(), rho);
    let q_value = glasso::objective(params.theta(), stats.s.view(), rho)?;
    Ok(FitResult {
        params,
        rho,
        em_iterations: iterations,
        converged,
        q_value,
        kkt_residual: kkt,
        fixed_point_residual,
        suffstats: stats,
        psd_repairs,
        max_psd_shift,
    })
}

/// Complete the data matrix: observed entries pass through, censored
/// entries are replaced by their conditional expectations under `mode`.
pub fn impute(
    dataset: &CensoredDataset,
    params: &ModelParams,
    mode: EStepMode,
    cfg: &EmConfig,
    seed: u64,
) -> Result<Array2<f64>> {
    let (n, p) = (dataset.n(), dataset.p());
    let rows: Vec<Result<RowMoments>> = (0..n)
        .into_par_iter()
        .map(|i| row_moments(dataset, params, mode, cfg, i, mix_seed(seed, i as u64)))
        .collect();
    let mut out = Array2::<f64>::zeros((n, p));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&r?.x);
    }
    Ok(out)
}

/// Observed-data log-likelihood: Gaussian density over the observed
/// coordinates plus the log region probability of the censored ones.
/// Rows with two or more censored coordinates use Monte Carlo; the second
/// return value is the standard error of the total from those rows.
pub fn observed_loglik(
    dataset: &CensoredDataset,
    params: &ModelParams,
    cfg: &EmConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = dataset.n();
    let terms: Vec<Result<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| row_loglik(dataset, params, cfg, i, mix_seed(seed, 0x1091 ^ i as u64)))
        .collect();
    let mut total = 0.0;
    let mut var = 0.0;
    for t in terms {
        let (ll, se) = t?;
        total += ll;
        var += se * se;
    }
    Ok((total, var.sqrt()))
}

fn row_loglik(
    dataset: &CensoredDataset,
    params: &ModelParams,
    cfg: &EmConfig,
    i: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    const LOG_2PI: f64 = 1.837_877_066_409_345_4;
    let part = dataset.partition_row(i)?;
    let c = part.censored();
    let mut ll = 0.0;
    if !part.observed.is_empty() {
        // marginal Gaussian density of the observed subvector
        let q = part.observed.len();
        let mut sig_oo = Array2::<f64>::zeros((q, q));
        for (a, &h) in part.observed.iter().enumerate() {
            for (b, &k) in part.observed.iter().enumerate() {
                sig_oo[[a, b]] = params.sigma()[[h, k]];
            }
        }
        let ch = Cholesky::new(sig_oo.view())
            .map_err(|_| Error::IllConditioned("Sigma_oo not PD".into()))?;
        let x_o = dataset.observed_subvector(i, &part.observed);
        let mu_o = Array1::from_iter(part.observed.iter().map(|&h| params.mu()[h]));
        let d = &x_o - &mu_o;
        let quad = d.dot(&ch.solve_vec(d.view()));
        ll += -0.5 * (q as f64 * LOG_2PI + ch.log_det() + quad);
    }
    if c.is_empty() {
        return Ok((ll, 0.0));
    }
    let x_o = dataset.observed_subvector(i, &part.observed);
    let cond = conditional_gaussian(params, &part, x_o.view())?;
    let region = TruncRegion::from_partition(&part, dataset.bounds())?;
    if c.len() == 1 {
        let sd = cond.covariance[[0, 0]].sqrt();
        let z = match region.tails[0] {
            crate::trunc::Tail::Left(b) => norm_cdf((b - cond.mean[0]) / sd),
            crate::trunc::Tail::Right(b) => norm_sf((b - cond.mean[0]) / sd),
        };
        if !(z > crate::trunc::PROB_FLOOR) {
            return Err(Error::DegenerateRegion {
                row: i,
                floor: crate::trunc::PROB_FLOOR,
            });
        }
        return Ok((ll + z.ln(), 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, se) = region_prob_mc(&cond, &region, cfg.loglik_draws, &mut rng)?;
    if p <= 0.0 {
        return Err(Error::DegenerateRegion {
            row: i,
            floor: crate::trunc::PROB_FLOOR,
        });
    }
    // delta method: se(log p) = se(p)/p
    Ok((ll + p.ln(), se / p))
}

/// Penalized observed objective of the estimator definition:
/// (1/n) * loglik - rho * sum over unordered pairs h < k of |theta_hk|.
/// The pair penalty is counted once, matching the stationarity conditions
/// sigma_hk - s_hk - rho*v_hk = 0 that define the estimator (and hence the
/// rho_max formula and the M-step's graphical lasso scale).
pub fn penalized_objective(
    dataset: &CensoredDataset,
    params: &ModelParams,
    rho: f64,
    cfg: &EmConfig,
    seed: u64,
) -> Result<f64> {
    let (ll, _) = observed_loglik(dataset, params, cfg, seed)?;
    let p = params.p();
    let mut pen = 0.0;
    for h in 0..p {
        for k in (h + 1)..p {
            pen += params.theta()[[h, k]].abs();
        }
    }
    Ok(ll / dataset.n() as f64 - rho * pen)
}

/// Empirical mean and covariance (denominator n) of a fully observed
/// dataset; errors if any entry is censored.
pub fn empirical_moments(dataset: &CensoredDataset) -> Result<SuffStats> {
    if dataset.n_censored() > 0 {
        return Err(Error::InvalidData(
            "empirical moments need a fully observed dataset".into(),
        ));
    }
    let (n, p) = (dataset.n(), dataset.p());
    let mut xbar = vec![0.0f64; p];
    for i in 0..n {
        for h in 0..p {
            xbar[h] += dataset.value(i, h);
        }
    }
    for v in &mut xbar {
        *v /= n as f64;
    }
    let mut s = Array2::<f64>::zeros((p, p));
    for i in 0..n {
        for h in 0..p {
            for k in 0..p {
                s[[h, k]] += (dataset.value(i, h) - xbar[h]) * (dataset.value(i, k) - xbar[k]);
            }
        }
    }
    s /= n as f64;
    Ok(SuffStats { xbar, s })
}

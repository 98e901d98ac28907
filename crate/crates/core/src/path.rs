//! Solution paths over a decreasing penalty grid, the largest useful
//! penalty and its diagonal solution, and BIC-based selection.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::em::{self, EStepMode, EmConfig, FitResult};
use crate::error::{Error, Result};
use crate::model::{CensoredDataset, CensoringBounds, ModelParams, OBSERVED};

/// How the smallest penalty of a grid is given.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoMin {
    /// absolute value
    Absolute(f64),
    /// fraction of rho_max
    Ratio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

/// Which BIC variant drives selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Exact,
    Approx,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathResult {
    pub rhos: Vec<f64>,
    pub fits: Vec<FitResult>,
    /// approximate BIC per grid point
    pub abic: Vec<f64>,
    /// exact BIC, if computed
    pub bic: Option<Vec<f64>>,
    /// set when the path aborted early; fits then cover a prefix of rhos
    pub failure: Option<String>,
}

/// Tobit-type maximum likelihood for one column: observed values
/// contribute the Gaussian density, censored ones the log tail mass.
/// Solved by the one-dimensional specialization of the EM iteration.
pub fn univariate_censored_mle(
    dataset: &CensoredDataset,
    h: usize,
    cfg: &EmConfig,
) -> Result<(f64, f64)> {
    let p = dataset.p();
    if h >= p {
        return Err(Error::ColumnFailure(h, format!("only {p} columns")));
    }
    let n = dataset.n();
    let mut values = Array2::<f64>::zeros((n, 1));
    let mut indicator = Array2::<i8>::zeros((n, 1));
    let mut obs = Vec::new();
    for i in 0..n {
        indicator[[i, 0]] = dataset.status(i, h);
        if dataset.status(i, h) == OBSERVED {
            values[[i, 0]] = dataset.value(i, h);
            obs.push(dataset.value(i, h));
        } else {
            values[[i, 0]] = f64::NAN;
        }
    }
    if obs.len() < 2 {
        return Err(Error::ColumnFailure(
            h,
            format!("needs at least 2 observed values, has {}", obs.len()),
        ));
    }
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let var = obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / obs.len() as f64;
    if !(var > 0.0) {
        return Err(Error::ColumnFailure(h, "zero observed variance".into()));
    }
    let bounds = CensoringBounds::new(
        vec![dataset.bounds().lower[h]],
        vec![dataset.bounds().upper[h]],
    )?;
    let col = CensoredDataset::from_parts(values, indicator, bounds)?;
    let init = ModelParams::new(vec![mean], Array2::from_elem((1, 1), 1.0 / var))?;
    // one dimension: the mean-field E-step is exact and deterministic.
    // The initializer solve uses its own convergence settings so caller
    // caps on the outer EM cannot starve it.
    let cfg1 = EmConfig {
        tol: 1e-9,
        max_iter: 2000,
        ..cfg.clone()
    };
    let fit = em::fit_em(&col, 0.0, Some(init), EStepMode::MeanField, &cfg1, 0)
        .map_err(|e| Error::ColumnFailure(h, e.to_string()))?;
    if !fit.converged {
        return Err(Error::ColumnFailure(h, "univariate EM did not converge".into()));
    }
    let mu = fit.params.mu()[0];
    let sigma2 = fit.params.sigma()[[0, 0]];
    Ok((mu, sigma2))
}

/// Diagonal model assembled from the per-column censored MLEs; the
/// solution at the largest penalty and the default EM initializer.
pub fn diagonal_init(dataset: &CensoredDataset, cfg: &EmConfig) -> Result<(f64, ModelParams)> {
    let p = dataset.p();
    let mut mu = vec![0.0; p];
    let mut theta = Array2::<f64>::zeros((p, p));
    for h in 0..p {
        let (m, v) = univariate_censored_mle(dataset, h, cfg)?;
        mu[h] = m;
        theta[[h, h]] = 1.0 / v;
    }
    let params = ModelParams::new(mu, theta)?;
    // one E-step at the diagonal model gives the completed covariance
    // whose largest off-diagonal entry is the smallest fully-sparse rho;
    // the conditional law is independent across censored coordinates
    // here, so the mean-field completion is exact and deterministic
    let stats = em::e_step(dataset, &params, EStepMode::MeanField, cfg, 0)?;
    let rho_max = crate::glasso::rho_max_for(stats.s.view());
    Ok((rho_max, params))
}

/// Largest penalty value and the corresponding diagonal solution.
pub fn rho_max(dataset: &CensoredDataset, cfg: &EmConfig) -> Result<(f64, ModelParams)> {
    diagonal_init(dataset, cfg)
}

/// Warm-started fits over a decreasing penalty grid.
pub fn fit_path(
    dataset: &CensoredDataset,
    k: usize,
    rho_min: RhoMin,
    spacing: Spacing,
    mode: EStepMode,
    cfg: &EmConfig,
    seed: u64,
) -> Result<PathResult> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("path needs K >= 2, got {k}")));
    }
    let (rmax, params0) = rho_max(dataset, cfg)?;
    let rmin = match rho_min {
        RhoMin::Absolute(v) => v,
        RhoMin::Ratio(r) => r * rmax,
    };
    if !(rmin < rmax) || rmin < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "rho_min {rmin} must lie in [0, rho_max = {rmax})"
        )));
    }
    let rhos: Vec<f64> = match spacing {
        Spacing::Linear => (0..k)
            .map(|j| rmax + (rmin - rmax) * j as f64 / (k - 1) as f64)
            .collect(),
        Spacing::Log => {
            if rmin <= 0.0 {
                return Err(Error::InvalidConfig(
                    "log spacing needs rho_min > 0".into(),
                ));
            }
            (0..k)
                .map(|j| {
                    (rmax.ln() + (rmin.ln() - rmax.ln()) * j as f64 / (k - 1) as f64).exp()
                })
                .collect()
        }
    };
    let mut fits: Vec<FitResult> = Vec::with_capacity(k);
    let mut failure = None;
    let mut warm = params0;
    for (j, &rho) in rhos.iter().enumerate() {
        match em::fit_em(
            dataset,
            rho,
            Some(warm.clone()),
            mode,
            cfg,
            em::mix_seed(seed, j as u64),
        ) {
            Ok(fit) => {
                warm = fit.params.clone();
                fits.push(fit);
            }
            Err(e) => {
                failure = Some(format!("fit at rho = {rho} (index {j}) failed: {e}"));
                break;
            }
        }
    }
    let n = dataset.n();
    let abic = fits.iter().map(|f| bic_approx_one(f, n)).collect();
    Ok(PathResult {
        rhos,
        fits,
        abic,
        bic: None,
        failure,
    })
}

fn penalty_term(fit: &FitResult, n: usize) -> f64 {
    let p = fit.params.p() as f64;
    (2.0 * p + fit.nonzero_offdiag() as f64) * (n as f64).ln() / n as f64
}

fn bic_approx_one(fit: &FitResult, n: usize) -> f64 {
    // -log det Theta + tr(Theta S) from the stored Q-value pieces
    let theta = fit.params.theta();
    let ch = crate::linalg::Cholesky::new(theta).expect("fitted theta is PD");
    let p = theta.nrows();
    let mut tr = 0.0;
    for h in 0..p {
        for k in 0..p {
            tr += theta[[h, k]] * fit.suffstats.s[[h, k]];
        }
    }
    -ch.log_det() + tr + penalty_term(fit, n)
}

/// Approximate BIC per path point, from stored quantities only.
pub fn bic_approx(path: &PathResult, n: usize) -> Vec<f64> {
    path.fits.iter().map(|f| bic_approx_one(f, n)).collect()
}

/// Exact BIC per path point; evaluates the observed log-likelihood.
pub fn bic_exact(
    path: &PathResult,
    dataset: &CensoredDataset,
    cfg: &EmConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = dataset.n();
    path.fits
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let (ll, _) =
                em::observed_loglik(dataset, &f.params, cfg, em::mix_seed(seed, j as u64))?;
            Ok(-2.0 / n as f64 * ll + penalty_term(f, n))
        })
        .collect()
}

/// Argmin of a criterion vector; ties break toward the sparser model
/// (the larger penalty, i.e. the smaller index).
pub fn select(values: &[f64]) -> Option<usize> {
    let mut best = None;
    let mut best_v = f64::INFINITY;
    for (j, &v) in values.iter().enumerate() {
        if v < best_v {
            best_v = v;
            best = Some(j);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode_censoring, CensorSide};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn observed_dataset(n: usize, p: usize, seed: u64) -> CensoredDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut raw = Array2::<f64>::zeros((n, p));
        for v in raw.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        encode_censoring(raw.view(), &CensoringBounds::unbounded(p), &vec![None; p]).unwrap()
    }

    #[test]
    fn univariate_mle_reduces_to_sample_moments() {
        let ds = observed_dataset(40, 1, 3);
        let cfg = EmConfig::default();
        let (mu, v) = univariate_censored_mle(&ds, 0, &cfg).unwrap();
        let emp = crate::em::empirical_moments(&ds).unwrap();
        assert!((mu - emp.xbar[0]).abs() < 1e-8);
        assert!((v - emp.s[[0, 0]]).abs() < 1e-6);
    }

    #[test]
    fn univariate_mle_symmetric_censoring_centers_at_zero() {
        // observed {-1, +1} balanced, equal left/right censoring at -2/2
        let mut values = Array2::<f64>::zeros((8, 1));
        let mut ind = Array2::<i8>::zeros((8, 1));
        for i in 0..3 {
            values[[2 * i, 0]] = -1.0;
            values[[2 * i + 1, 0]] = 1.0;
        }
        values[[6, 0]] = f64::NAN;
        ind[[6, 0]] = -1;
        values[[7, 0]] = f64::NAN;
        ind[[7, 0]] = 1;
        let bounds = CensoringBounds::new(vec![-2.0], vec![2.0]).unwrap();
        let ds = CensoredDataset::from_parts(values, ind, bounds).unwrap();
        let cfg = EmConfig {
            tol: 1e-10,
            ..Default::default()
        };
        let (mu, _) = univariate_censored_mle(&ds, 0, &cfg).unwrap();
        assert!(mu.abs() < 1e-6, "mu = {mu}");
    }

    #[test]
    fn univariate_mle_rejects_bad_columns() {
        // all-censored column
        let mut values = Array2::<f64>::zeros((3, 1));
        values.fill(f64::NAN);
        let ind = Array2::<i8>::from_elem((3, 1), 1);
        let bounds = CensoringBounds::new(vec![f64::NEG_INFINITY], vec![1.0]).unwrap();
        let ds = CensoredDataset::from_parts(values, ind, bounds).unwrap();
        assert!(univariate_censored_mle(&ds, 0, &EmConfig::default()).is_err());
    }

    #[test]
    fn rho_max_reduces_to_empirical_covariance() {
        let ds = observed_dataset(50, 3, 5);
        let cfg = EmConfig::default();
        let (rmax, params0) = rho_max(&ds, &cfg).unwrap();
        let emp = crate::em::empirical_moments(&ds).unwrap();
        let expect = crate::glasso::rho_max_for(emp.s.view());
        assert!((rmax - expect).abs() < 1e-8);
        for h in 0..3 {
            assert!((params0.mu()[h] - emp.xbar[h]).abs() < 1e-8);
            assert!((params0.theta()[[h, h]] - 1.0 / emp.s[[h, h]]).abs() < 1e-5);
        }
    }

    #[test]
    fn rho_max_small_for_independent_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mut raw = Array2::<f64>::zeros((n, 2));
        for v in raw.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let ds = encode_censoring(
            raw.view(),
            &CensoringBounds::unbounded(2),
            &vec![None; 2],
        )
        .unwrap();
        let (rmax, _) = rho_max(&ds, &EmConfig::default()).unwrap();
        assert!(rmax < 0.2, "rho_max = {rmax}");
    }

    #[test]
    fn fit_em_at_rho_max_keeps_diagonal_solution() {
        // censored data, p = 2
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 80;
        let mut raw = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let z1: f64 = StandardNormal.sample(&mut rng);
            raw[[i, 0]] = z0;
            raw[[i, 1]] = 0.4 * z0 + 0.9 * z1 + 0.5;
        }
        let bounds =
            CensoringBounds::new(vec![f64::NEG_INFINITY; 2], vec![1.0, 1.0]).unwrap();
        let ds = encode_censoring(raw.view(), &bounds, &vec![Some(CensorSide::Right); 2]).unwrap();
        let cfg = EmConfig::default();
        let (rmax, params0) = rho_max(&ds, &cfg).unwrap();
        let fit = em::fit_em(
            &ds,
            rmax,
            Some(params0.clone()),
            EStepMode::MeanField,
            &cfg,
            0,
        )
        .unwrap();
        assert_eq!(fit.nonzero_offdiag(), 0);
        for h in 0..2 {
            assert!((fit.params.mu()[h] - params0.mu()[h]).abs() < 1e-4);
            assert!(
                (fit.params.theta()[[h, h]] - params0.theta()[[h, h]]).abs() < 1e-4
            );
        }
    }

    #[test]
    fn path_near_rho_max_stays_diagonal() {
        let ds = observed_dataset(40, 3, 8);
        let cfg = EmConfig::default();
        let path = fit_path(
            &ds,
            2,
            RhoMin::Ratio(1.0 - 1e-9),
            Spacing::Linear,
            EStepMode::MeanField,
            &cfg,
            0,
        )
        .unwrap();
        assert!(path.failure.is_none());
        assert_eq!(path.fits.len(), 2);
        // at rho_max the fit is exactly diagonal; a hair below, any
        // activated entries are vanishingly small
        assert_eq!(path.fits[0].nonzero_offdiag(), 0);
        let th = path.fits[1].params.theta();
        for h in 0..3 {
            for k in 0..3 {
                if h != k {
                    assert!(th[[h, k]].abs() < 1e-6, "theta[{h},{k}] = {}", th[[h, k]]);
                }
            }
        }
        assert!(path.rhos[0] > path.rhos[1]);
    }

    #[test]
    fn path_on_observed_data_equals_glasso_path() {
        let ds = observed_dataset(60, 4, 2);
        let cfg = EmConfig::default();
        let path = fit_path(
            &ds,
            5,
            RhoMin::Ratio(0.1),
            Spacing::Linear,
            EStepMode::MeanField,
            &cfg,
            0,
        )
        .unwrap();
        let emp = crate::em::empirical_moments(&ds).unwrap();
        let mut warm = None;
        for (j, &rho) in path.rhos.iter().enumerate() {
            let direct =
                crate::glasso::glasso_fit(emp.s.view(), rho, warm.as_ref(), &cfg.glasso)
                    .unwrap();
            assert!(
                crate::linalg::max_abs_diff(
                    path.fits[j].params.theta(),
                    direct.theta.view()
                ) < 1e-6
            );
            warm = Some(direct);
        }
    }

    #[test]
    fn bic_formulas() {
        let ds = observed_dataset(50, 3, 13);
        let cfg = EmConfig::default();
        let path = fit_path(
            &ds,
            4,
            RhoMin::Ratio(0.05),
            Spacing::Linear,
            EStepMode::MeanField,
            &cfg,
            0,
        )
        .unwrap();
        let n = ds.n();
        // diagonal first fit: penalty term exactly 2p log(n)/n
        let f0 = &path.fits[0];
        assert_eq!(f0.nonzero_offdiag(), 0);
        let pen0 = penalty_term(f0, n);
        assert!((pen0 - 6.0 * (n as f64).ln() / n as f64).abs() < 1e-12);
        // equal likelihood, 2 extra nonzeros => difference 2 log(n)/n
        let fake_diff = (2.0) * (n as f64).ln() / n as f64;
        assert!(fake_diff > 0.0);
        // exact BIC on fully observed data equals the Gaussian BIC
        let bic = bic_exact(&path, &ds, &cfg, 0).unwrap();
        for (j, f) in path.fits.iter().enumerate() {
            let (ll, se) = em::observed_loglik(&ds, &f.params, &cfg, 0).unwrap();
            assert_eq!(se, 0.0);
            let expect = -2.0 / n as f64 * ll + penalty_term(f, n);
            assert!((bic[j] - expect).abs() < 1e-10);
        }
        // approximate BIC on fully observed data uses the empirical covariance
        let emp = crate::em::empirical_moments(&ds).unwrap();
        for (j, f) in path.fits.iter().enumerate() {
            let theta = f.params.theta();
            let ch = crate::linalg::Cholesky::new(theta).unwrap();
            let mut tr = 0.0;
            for h in 0..3 {
                for k in 0..3 {
                    tr += theta[[h, k]] * emp.s[[h, k]];
                }
            }
            let expect = -ch.log_det() + tr + penalty_term(f, n);
            assert!((path.abic[j] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn bic_approx_diagonal_algebra() {
        // diagonal theta matched to S diagonal: -sum log theta_hh + p + penalty
        let ds = observed_dataset(30, 3, 21);
        let cfg = EmConfig::default();
        let path = fit_path(
            &ds,
            2,
            RhoMin::Ratio(1.0 - 1e-9),
            Spacing::Linear,
            EStepMode::MeanField,
            &cfg,
            0,
        )
        .unwrap();
        let f = &path.fits[0];
        let n = ds.n();
        let theta = f.params.theta();
        let logs: f64 = (0..3).map(|h| theta[[h, h]].ln()).sum();
        let expect = -logs + 3.0 + 6.0 * (n as f64).ln() / n as f64;
        assert!((path.abic[0] - expect).abs() < 1e-6);
    }

    #[test]
    fn select_argmin_and_ties() {
        assert_eq!(select(&[1.0, 2.0, 3.0]), Some(0));
        assert_eq!(select(&[3.0, 2.0, 1.0]), Some(2));
        assert_eq!(select(&[3.0, 1.0, 2.0]), Some(1));
        // tie breaks toward the larger rho (earlier index)
        assert_eq!(select(&[2.0, 1.0, 1.0]), Some(1));
        assert_eq!(select(&[]), None);
    }
}

//! Synthetic-data generation, baseline estimators and benchmark studies:
//! sparse random precision matrices, right-censored Gaussian samples,
//! detection-limit imputation and missing-at-random EM baselines, and the
//! structure-recovery / estimation-error metrics.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{self, EStepMode, EmConfig, FitResult};
use crate::error::{Error, Result};
use crate::glasso::{self, GlassoConfig, GlassoSolution};
use crate::linalg::{min_eigenvalue_sym, Cholesky};
use crate::model::{CensoredDataset, CensoringBounds, ModelParams, OBSERVED};
use crate::path::{self, RhoMin, Spacing};
use crate::trunc::norm_quantile;

/// How means of non-censored variables are drawn.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncensoredMean {
    /// uniform draw on an interval
    Uniform { lo: f64, hi: f64 },
    /// placed so the right-censoring probability equals this value
    CensorProb(f64),
}

/// Generator configuration for one synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    pub p: usize,
    pub n: usize,
    /// off-diagonal support probability (k/p in the study designs)
    pub edge_prob: f64,
    /// number of censored variables (|D| or H)
    pub n_censored_vars: usize,
    /// common right-censoring limit
    pub upper: f64,
    /// target right-censoring probability for the censored variables
    pub censor_prob: f64,
    pub uncensored: UncensoredMean,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n == 0 {
            return Err(Error::InvalidConfig("p and n must be positive".into()));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "edge_prob must be in (0,1), got {}",
                self.edge_prob
            )));
        }
        if self.n_censored_vars > self.p {
            return Err(Error::InvalidConfig(format!(
                "{} censored variables but p = {}",
                self.n_censored_vars, self.p
            )));
        }
        if !(self.censor_prob > 0.0 && self.censor_prob < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "censor_prob must be in (0,1), got {}",
                self.censor_prob
            )));
        }
        Ok(())
    }
}

/// Ground truth retained by the generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub mu: Vec<f64>,
    #[serde(with = "crate::io::serde_array2")]
    pub theta: Array2<f64>,
    /// upper-triangle true edges (h < k)
    pub edges: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Sparse symmetric positive definite precision matrix: Bernoulli
/// off-diagonal support, magnitudes uniform on [0.3, 0.7] with random
/// sign, diagonal lifted by a common constant so lambda_min >= 0.3.
pub fn gen_sparse_precision(p: usize, edge_prob: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Array2::<f64>::zeros((p, p));
    for h in 0..p {
        for k in (h + 1)..p {
            if rng.gen::<f64>() < edge_prob {
                b[[h, k]] = EDGE_WEIGHT;
                b[[k, h]] = b[[h, k]];
            }
        }
    }
    let lam = min_eigenvalue_sym(b.view());
    let shift = lam.abs() + 0.2;
    for h in 0..p {
        b[[h, h]] += shift;
    }
    // EXPERIMENT: huge-style correlation rescale (unit marginal variances)
    let sigma = Cholesky::new(b.view()).unwrap().inverse();
    for h in 0..p {
        for k in 0..p {
            b[[h, k]] *= (sigma[[h, h]] * sigma[[k, k]]).sqrt();
        }
    }
    b
}

/// Mean placing the right-censoring probability at `prob` for a variable
/// with marginal SD `sigma` and limit `u`: mu = u - sigma * PhiInv(1 - prob).
pub fn mu_for_censor_prob(u: f64, sigma: f64, prob: f64) -> f64 {
    u - sigma * norm_quantile(1.0 - prob)
}

/// Draw one right-censored sample under `theta` and the spec's mean
/// design; the ground truth (including the latent draws) is retained.
pub fn gen_censored_sample(
    spec: &SimSpec,
    theta: &Array2<f64>,
) -> Result<(CensoredDataset, Truth, Array2<f64>)> {
    spec.validate()?;
    let p = spec.p;
    let mut rng = ChaCha8Rng::seed_from_u64(em::mix_seed(spec.seed, 0x5a17));
    let ch_theta = Cholesky::new(theta.view())?;
    let sigma = ch_theta.inverse();
    let ch_sigma = Cholesky::new(sigma.view())?;

    let mut idx: Vec<usize> = (0..p).collect();
    idx.shuffle(&mut rng);
    let censored_vars: Vec<usize> = idx[..spec.n_censored_vars].to_vec();
    let mut mu = vec![0.0f64; p];
    for h in 0..p {
        let sd = sigma[[h, h]].sqrt();
        if censored_vars.contains(&h) {
            mu[h] = mu_for_censor_prob(spec.upper, sd, spec.censor_prob);
        } else {
            mu[h] = match spec.uncensored {
                UncensoredMean::Uniform { lo, hi } => rng.gen_range(lo..hi),
                UncensoredMean::CensorProb(q) => mu_for_censor_prob(spec.upper, sd, q),
            };
        }
    }

    let mut latent = Array2::<f64>::zeros((spec.n, p));
    let mut z = ndarray::Array1::<f64>::zeros(p);
    for i in 0..spec.n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = ch_sigma.correlate(z.view());
        for h in 0..p {
            latent[[i, h]] = mu[h] + x[h];
        }
    }
    let bounds = CensoringBounds::new(vec![f64::NEG_INFINITY; p], vec![spec.upper; p])?;
    let dataset = crate::model::encode_censoring(latent.view(), &bounds, &vec![None; p])?;
    let mut edges = Vec::new();
    for h in 0..p {
        for k in (h + 1)..p {
            if theta[[h, k]] != 0.0 {
                edges.push((h, k));
            }
        }
    }
    let truth = Truth {
        mu,
        theta: theta.clone(),
        edges,
        seed: spec.seed,
    };
    Ok((dataset, truth, latent))
}

/// Detection-limit imputation baseline: censored entries replaced by the
/// nearest limit, then a plain graphical lasso path on the empirical
/// covariance.
pub fn baseline_lod_glasso(
    dataset: &CensoredDataset,
    rho_grid: &[f64],
    cfg: &GlassoConfig,
) -> Result<Vec<GlassoSolution>> {
    let (n, p) = (dataset.n(), dataset.p());
    let mut x = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for h in 0..p {
            x[[i, h]] = match dataset.status(i, h) {
                OBSERVED => dataset.value(i, h),
                crate::model::LEFT_CENSORED => dataset.bounds().lower[h],
                _ => dataset.bounds().upper[h],
            };
        }
    }
    let mut xbar = vec![0.0f64; p];
    for h in 0..p {
        xbar[h] = x.column(h).sum() / n as f64;
    }
    let mut s = Array2::<f64>::zeros((p, p));
    for i in 0..n {
        for h in 0..p {
            for k in h..p {
                s[[h, k]] += (x[[i, h]] - xbar[h]) * (x[[i, k]] - xbar[k]);
            }
        }
    }
    for h in 0..p {
        for k in h..p {
            s[[h, k]] /= n as f64;
            s[[k, h]] = s[[h, k]];
        }
    }
    for h in 0..p {
        if !(s[[h, h]] > 0.0) {
            return Err(Error::ColumnFailure(
                h,
                "zero variance after detection-limit imputation".into(),
            ));
        }
    }
    let mut out = Vec::with_capacity(rho_grid.len());
    let mut warm: Option<GlassoSolution> = None;
    for &rho in rho_grid {
        let sol = glasso::glasso_fit(s.view(), rho, warm.as_ref(), cfg)?;
        warm = Some(sol.clone());
        out.push(sol);
    }
    Ok(out)
}

/// Diagonal initializer for the missing-at-random EM: per-column observed
/// mean and variance.
pub fn mar_diagonal_init(dataset: &CensoredDataset) -> Result<ModelParams> {
    let p = dataset.p();
    let mut mu = vec![0.0f64; p];
    let mut theta = Array2::<f64>::zeros((p, p));
    for h in 0..p {
        let obs: Vec<f64> = (0..dataset.n())
            .filter(|&i| dataset.status(i, h) == OBSERVED)
            .map(|i| dataset.value(i, h))
            .collect();
        if obs.len() < 2 {
            return Err(Error::ColumnFailure(h, "fewer than 2 observed values".into()));
        }
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let v = obs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / obs.len() as f64;
        if !(v > 0.0) {
            return Err(Error::ColumnFailure(h, "zero observed variance".into()));
        }
        mu[h] = m;
        theta[[h, h]] = 1.0 / v;
    }
    ModelParams::new(mu, theta)
}

/// Missing-at-random EM baseline: the same EM skeleton with untruncated
/// conditional moments in the E-step, over an externally supplied grid.
pub fn baseline_mar_em(
    dataset: &CensoredDataset,
    rho_grid: &[f64],
    cfg: &EmConfig,
    seed: u64,
) -> Result<Vec<FitResult>> {
    let mut out = Vec::with_capacity(rho_grid.len());
    let mut warm = mar_diagonal_init(dataset)?;
    for (j, &rho) in rho_grid.iter().enumerate() {
        let fit = em::fit_em(
            dataset,
            rho,
            Some(warm.clone()),
            EStepMode::Mar,
            cfg,
            em::mix_seed(seed, j as u64),
        )?;
        warm = fit.params.clone();
        out.push(fit);
    }
    Ok(out)
}

/// Grid for the MAR baseline: its own largest useful penalty down to the
/// shared floor.
pub fn mar_rho_grid(dataset: &CensoredDataset, k: usize, rho_min: f64, cfg: &EmConfig) -> Result<Vec<f64>> {
    let init = mar_diagonal_init(dataset)?;
    let stats = em::e_step(dataset, &init, EStepMode::Mar, cfg, 0)?;
    let rmax = glasso::rho_max_for(stats.s.view());
    Ok(linear_grid(rmax.max(rho_min * 2.0), rho_min, k))
}

pub fn linear_grid(rho_max: f64, rho_min: f64, k: usize) -> Vec<f64> {
    (0..k)
        .map(|j| rho_max + (rho_min - rho_max) * j as f64 / (k - 1) as f64)
        .collect()
}

/// Per-replicate structure-recovery and estimation-error metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub mse_mu: Option<Vec<f64>>,
    pub mse_theta: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub min_mse_mu: Option<f64>,
    pub min_mse_theta: f64,
    pub auc: f64,
}

fn frob_sq(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Evaluate a path of estimates against the ground truth. MSE is squared
/// Euclidean / Frobenius distance; TPR/FPR are over the off-diagonal
/// support; AUC is the trapezoid over the path-traced ROC points
/// augmented with (0,0).
pub fn metrics(
    truth: &Truth,
    mus: Option<&[Vec<f64>]>,
    thetas: &[Array2<f64>],
) -> ReplicateMetrics {
    let p = truth.theta.nrows();
    let n_pos = truth.edges.len();
    let n_neg = p * (p - 1) / 2 - n_pos;
    let mse_mu = mus.map(|ms| {
        ms.iter()
            .map(|m| {
                m.iter()
                    .zip(&truth.mu)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    let mut mse_theta = Vec::with_capacity(thetas.len());
    let mut tpr = Vec::with_capacity(thetas.len());
    let mut fpr = Vec::with_capacity(thetas.len());
    for th in thetas {
        mse_theta.push(frob_sq(th.view(), truth.theta.view()));
        let mut tp = 0usize;
        let mut fp = 0usize;
        for h in 0..p {
            for k in (h + 1)..p {
                let est = th[[h, k]] != 0.0;
                let real = truth.theta[[h, k]] != 0.0;
                if est && real {
                    tp += 1;
                } else if est && !real {
                    fp += 1;
                }
            }
        }
        tpr.push(if n_pos > 0 { tp as f64 / n_pos as f64 } else { 1.0 });
        fpr.push(if n_neg > 0 { fp as f64 / n_neg as f64 } else { 0.0 });
    }
    let auc = roc_auc(&fpr, &tpr);
    ReplicateMetrics {
        min_mse_mu: mse_mu.as_ref().map(|v| v.iter().copied().fold(f64::INFINITY, f64::min)),
        min_mse_theta: mse_theta.iter().copied().fold(f64::INFINITY, f64::min),
        mse_mu,
        mse_theta,
        tpr,
        fpr,
        auc,
    }
}

/// Trapezoid area under the path-traced (FPR, TPR) points, with (0,0)
/// prepended and points sorted by FPR. Restricted to the path: not a full
/// ROC sweep.
pub fn roc_auc(fpr: &[f64], tpr: &[f64]) -> f64 {
    let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    pts.extend(fpr.iter().copied().zip(tpr.iter().copied()));
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut auc = 0.0;
    for w in pts.windows(2) {
        auc += (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1);
    }
    auc
}

/// One study of the benchmark harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Study {
    Model1 { h: usize },
    Model2 { k: usize },
    Model3,
    ApproxVsExact { d_values: Vec<usize> },
    CensorRobustness { fractions: Vec<f64> },
    /// tiny smoke configuration
    Smoke { p: usize },
}

impl Study {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "model1" => Ok(Study::Model1 { h: 25 }),
            "model1_h35" => Ok(Study::Model1 { h: 35 }),
            "model2" | "model2_k1" => Ok(Study::Model2 { k: 1 }),
            "model2_k5" => Ok(Study::Model2 { k: 5 }),
            "model3" => Ok(Study::Model3),
            "approx_vs_exact" => Ok(Study::ApproxVsExact { d_values: vec![2, 5] }),
            "censor_robustness" => Ok(Study::CensorRobustness {
                fractions: vec![0.1, 0.2, 0.3],
            }),
            "smoke" => Ok(Study::Smoke { p: 5 }),
            other => Err(Error::InvalidConfig(format!("unknown study '{other}'"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Study::Model1 { h } => format!("model1_h{h}"),
            Study::Model2 { k } => format!("model2_k{k}"),
            Study::Model3 => "model3".into(),
            Study::ApproxVsExact { .. } => "approx_vs_exact".into(),
            Study::CensorRobustness { .. } => "censor_robustness".into(),
            Study::Smoke { .. } => "smoke".into(),
        }
    }
}

/// One report row: a method evaluated on one replicate (and, for the
/// robustness study, one censoring level).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub method: String,
    pub min_mse_mu: Option<f64>,
    pub min_mse_theta: Option<f64>,
    pub auc: Option<f64>,
    /// max over the grid of squared distances to the paired path
    /// (approx-vs-exact study only)
    pub max_dmu_sq: Option<f64>,
    pub max_dtheta_fsq: Option<f64>,
    /// Euclidean norm between latent and imputed values over censored
    /// cells (robustness study only)
    pub imputation_error: Option<f64>,
    /// largest KKT residual over the converged fits of the path
    /// (penalized-EM methods only)
    pub max_kkt: Option<f64>,
    /// largest fixed-point residual over the converged fits, relative to
    /// 1 + max|mu|
    pub max_fp_rel: Option<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    pub replicates: usize,
    pub mean_min_mse_mu: Option<f64>,
    pub sd_min_mse_mu: Option<f64>,
    pub mean_min_mse_theta: Option<f64>,
    pub sd_min_mse_theta: Option<f64>,
    pub mean_auc: Option<f64>,
    pub sd_auc: Option<f64>,
    pub mean_max_dmu_sq: Option<f64>,
    pub mean_max_dtheta_fsq: Option<f64>,
    pub mean_imputation_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub study: String,
    pub replicates: usize,
    pub seed: u64,
    pub rows: Vec<ReplicateRow>,
    pub aggregates: Vec<MethodAggregate>,
    pub failures: Vec<String>,
    /// wall-clock seconds per (replicate, stage); excluded from the
    /// serialized report so reruns compare byte-identically
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn aggregate_rows(rows: &[ReplicateRow]) -> Vec<MethodAggregate> {
    let mut methods: Vec<String> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let sel: Vec<&ReplicateRow> = rows.iter().filter(|r| r.method == m).collect();
            let col = |f: &dyn Fn(&ReplicateRow) -> Option<f64>| -> Option<(f64, f64)> {
                let vals: Vec<f64> = sel.iter().filter_map(|r| f(r)).collect();
                if vals.len() == sel.len() && !vals.is_empty() {
                    Some(mean_sd(&vals))
                } else {
                    None
                }
            };
            let mmu = col(&|r| r.min_mse_mu);
            let mth = col(&|r| r.min_mse_theta);
            let auc = col(&|r| r.auc);
            let dmu = col(&|r| r.max_dmu_sq);
            let dth = col(&|r| r.max_dtheta_fsq);
            let imp = col(&|r| r.imputation_error);
            MethodAggregate {
                method: m,
                replicates: sel.len(),
                mean_min_mse_mu: mmu.map(|x| x.0),
                sd_min_mse_mu: mmu.map(|x| x.1),
                mean_min_mse_theta: mth.map(|x| x.0),
                sd_min_mse_theta: mth.map(|x| x.1),
                mean_auc: auc.map(|x| x.0),
                sd_auc: auc.map(|x| x.1),
                mean_max_dmu_sq: dmu.map(|x| x.0),
                mean_max_dtheta_fsq: dth.map(|x| x.0),
                mean_imputation_error: imp.map(|x| x.0),
            }
        })
        .collect()
}

const GRID_K: usize = 30;
const GRID_RHO_MIN: f64 = 1e-3;

/// Largest KKT and relative fixed-point residuals over the converged fits
/// of a path; None when no fit converged.
fn converged_residuals(fits: &[em::FitResult]) -> (Option<f64>, Option<f64>) {
    let conv: Vec<&em::FitResult> = fits.iter().filter(|f| f.converged).collect();
    if conv.is_empty() {
        return (None, None);
    }
    let kkt = conv.iter().map(|f| f.kkt_residual).fold(0.0f64, f64::max);
    let fp = conv
        .iter()
        .map(|f| {
            let mu_scale = 1.0 + f.params.mu().iter().fold(0.0f64, |a, &m| a.max(m.abs()));
            f.fixed_point_residual / mu_scale
        })
        .fold(0.0f64, f64::max);
    (Some(kkt), Some(fp))
}

fn estimator_comparison_rows(
    spec: &SimSpec,
    cfg: &EmConfig,
    rep: usize,
) -> Result<Vec<ReplicateRow>> {
    let theta = gen_sparse_precision(spec.p, spec.edge_prob, em::mix_seed(spec.seed, 0x7e7a));
    let (ds, truth, _) = gen_censored_sample(spec, &theta)?;
    let mut rows = Vec::new();

    // cglasso
    let path = path::fit_path(
        &ds,
        GRID_K,
        RhoMin::Absolute(GRID_RHO_MIN),
        Spacing::Linear,
        EStepMode::MeanField,
        cfg,
        em::mix_seed(spec.seed, 1),
    )?;
    if let Some(f) = &path.failure {
        return Err(Error::InvalidData(f.clone()));
    }
    let mus: Vec<Vec<f64>> = path.fits.iter().map(|f| f.params.mu().to_vec()).collect();
    let thetas: Vec<Array2<f64>> =
        path.fits.iter().map(|f| f.params.theta().to_owned()).collect();
    let m = metrics(&truth, Some(&mus), &thetas);
    let (max_kkt, max_fp_rel) = converged_residuals(&path.fits);
    rows.push(ReplicateRow {
        replicate: rep,
        method: "cglasso".into(),
        min_mse_mu: m.min_mse_mu,
        min_mse_theta: Some(m.min_mse_theta),
        auc: Some(m.auc),
        max_dmu_sq: None,
        max_dtheta_fsq: None,
        imputation_error: None,
        max_kkt,
        max_fp_rel,
        tpr: m.tpr,
        fpr: m.fpr,
    });

    // baselines run on the same penalty grid as the censored estimator so
    // the three paths are directly comparable
    let grid = path.rhos.clone();
    let lod_path = baseline_lod_glasso(&ds, &grid, &cfg.glasso)?;
    let lod_thetas: Vec<Array2<f64>> = lod_path.iter().map(|s| s.theta.clone()).collect();
    let m = metrics(&truth, None, &lod_thetas);
    rows.push(ReplicateRow {
        replicate: rep,
        method: "lod-glasso".into(),
        min_mse_mu: None,
        min_mse_theta: Some(m.min_mse_theta),
        auc: Some(m.auc),
        max_dmu_sq: None,
        max_dtheta_fsq: None,
        imputation_error: None,
        max_kkt: None,
        max_fp_rel: None,
        tpr: m.tpr,
        fpr: m.fpr,
    });

    // missing-at-random EM on the shared grid
    let mar = baseline_mar_em(&ds, &grid, cfg, em::mix_seed(spec.seed, 2))?;
    let mus: Vec<Vec<f64>> = mar.iter().map(|f| f.params.mu().to_vec()).collect();
    let thetas: Vec<Array2<f64>> = mar.iter().map(|f| f.params.theta().to_owned()).collect();
    let m = metrics(&truth, Some(&mus), &thetas);
    let (max_kkt, max_fp_rel) = converged_residuals(&mar);
    rows.push(ReplicateRow {
        replicate: rep,
        method: "mar-em".into(),
        min_mse_mu: m.min_mse_mu,
        min_mse_theta: Some(m.min_mse_theta),
        auc: Some(m.auc),
        max_dmu_sq: None,
        max_dtheta_fsq: None,
        imputation_error: None,
        max_kkt,
        max_fp_rel,
        tpr: m.tpr,
        fpr: m.fpr,
    });
    Ok(rows)
}

fn approx_vs_exact_rows(
    d: usize,
    seed: u64,
    cfg: &EmConfig,
    rep: usize,
) -> Result<Vec<ReplicateRow>> {
    let spec = SimSpec {
        p: 10,
        n: 100,
        edge_prob: 0.1,
        n_censored_vars: d,
        upper: 40.0,
        censor_prob: 0.25,
        uncensored: UncensoredMean::CensorProb(1e-11),
        seed,
    };
    let theta = gen_sparse_precision(spec.p, spec.edge_prob, em::mix_seed(seed, 0x7e7a));
    let (ds, _truth, _) = gen_censored_sample(&spec, &theta)?;
    let approx = path::fit_path(
        &ds,
        GRID_K,
        RhoMin::Absolute(GRID_RHO_MIN),
        Spacing::Linear,
        EStepMode::MeanField,
        cfg,
        em::mix_seed(seed, 3),
    )?;
    let exact = path::fit_path(
        &ds,
        GRID_K,
        RhoMin::Absolute(GRID_RHO_MIN),
        Spacing::Linear,
        EStepMode::Exact,
        cfg,
        em::mix_seed(seed, 4),
    )?;
    if approx.failure.is_some() || exact.failure.is_some() {
        return Err(Error::InvalidData("path failure in approx-vs-exact".into()));
    }
    let mut max_dmu: f64 = 0.0;
    let mut max_dth: f64 = 0.0;
    for (fa, fe) in approx.fits.iter().zip(&exact.fits) {
        let dmu: f64 = fa
            .params
            .mu()
            .iter()
            .zip(fe.params.mu())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let dth = frob_sq(fa.params.theta(), fe.params.theta());
        max_dmu = max_dmu.max(dmu);
        max_dth = max_dth.max(dth);
    }
    Ok(vec![ReplicateRow {
        replicate: rep,
        method: format!("approx_vs_exact_d{d}"),
        min_mse_mu: None,
        min_mse_theta: None,
        auc: None,
        max_dmu_sq: Some(max_dmu),
        max_dtheta_fsq: Some(max_dth),
        imputation_error: None,
        max_kkt: None,
        max_fp_rel: None,
        tpr: vec![],
        fpr: vec![],
    }])
}

fn censor_robustness_rows(
    fractions: &[f64],
    seed: u64,
    cfg: &EmConfig,
    rep: usize,
) -> Result<Vec<ReplicateRow>> {
    // fully observed Gaussian data, then the top q% of all values censored
    let p = 20;
    let n = 100;
    let spec = SimSpec {
        p,
        n,
        edge_prob: 3.0 / p as f64,
        n_censored_vars: 0,
        upper: f64::INFINITY,
        censor_prob: 0.5,
        uncensored: UncensoredMean::Uniform { lo: 10.0, hi: 35.0 },
        seed,
    };
    let theta = gen_sparse_precision(p, spec.edge_prob, em::mix_seed(seed, 0x7e7a));
    let mut all_spec = spec.clone();
    all_spec.upper = 1e18; // effectively unbounded during generation
    let (_, truth, latent) = gen_censored_sample(&all_spec, &theta)?;
    let mut rows = Vec::new();
    for &q in fractions {
        let mut vals: Vec<f64> = latent.iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cut = vals[((1.0 - q) * (vals.len() as f64 - 1.0)).floor() as usize];
        let bounds = CensoringBounds::new(vec![f64::NEG_INFINITY; p], vec![cut; p])?;
        let ds = crate::model::encode_censoring(latent.view(), &bounds, &vec![None; p])?;
        let censored_cells: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..p).map(move |h| (i, h)))
            .filter(|&(i, h)| ds.status(i, h) != OBSERVED)
            .collect();
        let imp_err = |imputed: &Array2<f64>| -> f64 {
            censored_cells
                .iter()
                .map(|&(i, h)| (imputed[[i, h]] - latent[[i, h]]).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let tag = format!("{:.0}%", q * 100.0);

        // cglasso: path, approximate-BIC selection, truncated completion
        let path = path::fit_path(
            &ds,
            GRID_K,
            RhoMin::Absolute(GRID_RHO_MIN),
            Spacing::Linear,
            EStepMode::MeanField,
            cfg,
            em::mix_seed(seed, 5),
        )?;
        if let Some(f) = &path.failure {
            return Err(Error::InvalidData(f.clone()));
        }
        let sel = path::select(&path.abic).unwrap();
        let imputed = em::impute(
            &ds,
            &path.fits[sel].params,
            EStepMode::MeanField,
            cfg,
            em::mix_seed(seed, 6),
        )?;
        let thetas: Vec<Array2<f64>> =
            path.fits.iter().map(|f| f.params.theta().to_owned()).collect();
        let m = metrics(&truth, None, &thetas);
        rows.push(ReplicateRow {
            replicate: rep,
            method: format!("cglasso@{tag}"),
            min_mse_mu: None,
            min_mse_theta: Some(m.min_mse_theta),
            auc: Some(m.auc),
            max_dmu_sq: None,
            max_dtheta_fsq: None,
            imputation_error: Some(imp_err(&imputed)),
            max_kkt: None,
            max_fp_rel: None,
            tpr: m.tpr,
            fpr: m.fpr,
        });

        // detection-limit imputation
        let grid = linear_grid(
            {
                let emisc = mar_rho_grid(&ds, 2, GRID_RHO_MIN, cfg)?;
                emisc[0]
            },
            GRID_RHO_MIN,
            GRID_K,
        );
        let lod = baseline_lod_glasso(&ds, &grid, &cfg.glasso)?;
        let mut lod_imputed = latent.clone();
        for &(i, h) in &censored_cells {
            lod_imputed[[i, h]] = cut;
        }
        let thetas: Vec<Array2<f64>> = lod.iter().map(|s| s.theta.clone()).collect();
        let m = metrics(&truth, None, &thetas);
        rows.push(ReplicateRow {
            replicate: rep,
            method: format!("lod-glasso@{tag}"),
            min_mse_mu: None,
            min_mse_theta: Some(m.min_mse_theta),
            auc: Some(m.auc),
            max_dmu_sq: None,
            max_dtheta_fsq: None,
            imputation_error: Some(imp_err(&lod_imputed)),
            max_kkt: None,
            max_fp_rel: None,
            tpr: m.tpr,
            fpr: m.fpr,
        });

        // missing-at-random EM with conditional-mean imputation
        let grid = mar_rho_grid(&ds, GRID_K, GRID_RHO_MIN, cfg)?;
        let mar = baseline_mar_em(&ds, &grid, cfg, em::mix_seed(seed, 7))?;
        let abic: Vec<f64> = mar
            .iter()
            .map(|f| {
                let ch = Cholesky::new(f.params.theta()).unwrap();
                let mut tr = 0.0;
                for h in 0..p {
                    for k in 0..p {
                        tr += f.params.theta()[[h, k]] * f.suffstats.s[[h, k]];
                    }
                }
                -ch.log_det()
                    + tr
                    + (2.0 * p as f64 + f.nonzero_offdiag() as f64) * (n as f64).ln() / n as f64
            })
            .collect();
        let sel = path::select(&abic).unwrap();
        let mar_imputed = em::impute(
            &ds,
            &mar[sel].params,
            EStepMode::Mar,
            cfg,
            em::mix_seed(seed, 8),
        )?;
        let thetas: Vec<Array2<f64>> = mar.iter().map(|f| f.params.theta().to_owned()).collect();
        let m = metrics(&truth, None, &thetas);
        rows.push(ReplicateRow {
            replicate: rep,
            method: format!("mar-em@{tag}"),
            min_mse_mu: None,
            min_mse_theta: Some(m.min_mse_theta),
            auc: Some(m.auc),
            max_dmu_sq: None,
            max_dtheta_fsq: None,
            imputation_error: Some(imp_err(&mar_imputed)),
            max_kkt: None,
            max_fp_rel: None,
            tpr: m.tpr,
            fpr: m.fpr,
        });
    }
    Ok(rows)
}

/// Run one full study: per-replicate pipelines in parallel (derived
/// seeds), order-independent aggregation, failures logged and excluded.
pub fn run_study(study: &Study, replicates: usize, seed: u64, cfg: &EmConfig) -> BenchReport {
    let start = std::time::Instant::now();
    // bound the per-fit cost: path points that have not converged by then
    // are flagged and still scored, keeping replicate wall time in check
    let cfg = &EmConfig {
        max_iter: cfg.max_iter.min(150),
        ..cfg.clone()
    };
    let per_rep: Vec<(usize, Result<Vec<ReplicateRow>>)> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = em::mix_seed(seed, 0xbe5c ^ rep as u64);
            let rows = match study {
                Study::Model1 { h } => estimator_comparison_rows(
                    &SimSpec {
                        p: 50,
                        n: 100,
                        edge_prob: 3.0 / 50.0,
                        n_censored_vars: *h,
                        upper: 40.0,
                        censor_prob: 0.5,
                        uncensored: UncensoredMean::Uniform { lo: 10.0, hi: 35.0 },
                        seed: rep_seed,
                    },
                    cfg,
                    rep,
                ),
                Study::Model2 { k } => estimator_comparison_rows(
                    &SimSpec {
                        p: 50,
                        n: 100,
                        edge_prob: *k as f64 / 50.0,
                        n_censored_vars: 30,
                        upper: 40.0,
                        censor_prob: 0.5,
                        uncensored: UncensoredMean::Uniform { lo: 10.0, hi: 35.0 },
                        seed: rep_seed,
                    },
                    cfg,
                    rep,
                ),
                Study::Model3 => estimator_comparison_rows(
                    &SimSpec {
                        p: 200,
                        n: 100,
                        edge_prob: 3.0 / 200.0,
                        n_censored_vars: 100,
                        upper: 40.0,
                        censor_prob: 0.5,
                        uncensored: UncensoredMean::Uniform { lo: 10.0, hi: 35.0 },
                        seed: rep_seed,
                    },
                    cfg,
                    rep,
                ),
                Study::Smoke { p } => estimator_comparison_rows(
                    &SimSpec {
                        p: *p,
                        n: 40,
                        edge_prob: 0.3,
                        n_censored_vars: 2.min(*p),
                        upper: 40.0,
                        censor_prob: 0.4,
                        uncensored: UncensoredMean::Uniform { lo: 10.0, hi: 35.0 },
                        seed: rep_seed,
                    },
                    cfg,
                    rep,
                ),
                Study::ApproxVsExact { d_values } => {
                    let mut all = Vec::new();
                    let mut err = None;
                    for &d in d_values {
                        match approx_vs_exact_rows(d, em::mix_seed(rep_seed, d as u64), cfg, rep) {
                            Ok(mut r) => all.append(&mut r),
                            Err(e) => {
                                err = Some(e);
                                break;
                            }
                        }
                    }
                    match err {
                        Some(e) => Err(e),
                        None => Ok(all),
                    }
                }
                Study::CensorRobustness { fractions } => {
                    censor_robustness_rows(fractions, rep_seed, cfg, rep)
                }
            };
            (rep, rows)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (rep, r) in per_rep {
        match r {
            Ok(mut rs) => rows.append(&mut rs),
            Err(e) => failures.push(format!("replicate {rep}: {e}")),
        }
    }
    let aggregates = aggregate_rows(&rows);
    BenchReport {
        study: study.name(),
        replicates,
        seed,
        rows,
        aggregates,
        failures,
        timings: vec![("total".into(), start.elapsed().as_secs_f64())],
    }
}

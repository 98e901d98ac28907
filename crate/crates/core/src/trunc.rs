//! Moments of univariate and multivariate Gaussian distributions truncated
//! to censoring regions.
//!
//! Univariate moments are closed-form Mills-ratio expressions. Multivariate
//! moments over the coordinate-aligned one-sided regions D_c come from a
//! Gibbs sampler over the one-sided truncated full conditionals; a plain
//! rejection sampler is also provided as an independent oracle for small
//! dimensions.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::model::{CensoringBounds, ModelParams, PatternPartition};

/// Region probabilities below this floor are reported as numerically
/// degenerate instead of being silently regularized.
pub const PROB_FLOOR: f64 = 1e-300;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Standard normal upper tail probability.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Hazard (inverse Mills) ratio phi(z)/Q(z). Direct evaluation below 8;
/// the asymptotic series of the Mills ratio beyond that, where the naive
/// quotient loses accuracy.
pub fn norm_hazard(z: f64) -> f64 {
    if z < 8.0 {
        norm_pdf(z) / norm_sf(z)
    } else {
        // Q(z) ~ phi(z)/z * sum_k (-1)^k (2k-1)!!/z^(2k)
        let z2 = z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 0u32;
        loop {
            let next = -term * (2.0 * f64::from(k) + 1.0) / z2;
            if next.abs() >= term.abs() || next.abs() < 1e-18 {
                break;
            }
            sum += next;
            term = next;
            k += 1;
        }
        z / sum
    }
}

/// A (possibly half-infinite) truncation interval for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || !(lower < upper) {
            return Err(Error::InvalidBounds(format!(
                "empty truncation interval ({lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn left_tail(bound: f64) -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: bound,
        }
    }

    pub fn right_tail(bound: f64) -> Self {
        Self {
            lower: bound,
            upper: f64::INFINITY,
        }
    }
}

/// First moment, second (non-central) moment and mass of a Gaussian
/// truncated to `region`.
pub fn univ_trunc_moments(mean: f64, variance: f64, region: Interval) -> Result<(f64, f64, f64)> {
    if !(variance > 0.0) {
        return Err(Error::InvalidData(format!(
            "truncated moments need positive variance, got {variance}"
        )));
    }
    let sd = variance.sqrt();
    let alpha = (region.lower - mean) / sd;
    let beta = (region.upper - mean) / sd;
    // r1 = (phi(a) - phi(b))/Z, r2 = (a phi(a) - b phi(b))/Z
    let (prob, r1, r2) = match (alpha.is_finite(), beta.is_finite()) {
        (false, false) => (1.0, 0.0, 0.0),
        (true, false) => {
            // right tail (a, +inf)
            let prob = norm_sf(alpha);
            let h = norm_hazard(alpha);
            (prob, h, alpha * h)
        }
        (false, true) => {
            // left tail (-inf, b)
            let prob = norm_sf(-beta);
            let h = norm_hazard(-beta);
            (prob, -h, -beta * h)
        }
        (true, true) => {
            let prob = if alpha >= 0.0 {
                norm_sf(alpha) - norm_sf(beta)
            } else if beta <= 0.0 {
                norm_cdf(beta) - norm_cdf(alpha)
            } else {
                1.0 - norm_cdf(alpha) - norm_sf(beta)
            };
            let pa = norm_pdf(alpha);
            let pb = norm_pdf(beta);
            (prob, (pa - pb) / prob, (alpha * pa - beta * pb) / prob)
        }
    };
    if !(prob > PROB_FLOOR) {
        return Err(Error::RegionUnderflow { floor: PROB_FLOOR });
    }
    let m1 = mean + sd * r1;
    let m2 = mean * mean + 2.0 * mean * sd * r1 + variance * (1.0 + r2);
    Ok((m1, m2, prob.min(1.0)))
}

/// Side tag of one censored coordinate: the latent value lies in the
/// open tail beyond the recorded detection limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    /// below the lower limit
    Left(f64),
    /// above the upper limit
    Right(f64),
}

impl Tail {
    pub fn interval(self) -> Interval {
        match self {
            Tail::Left(b) => Interval::left_tail(b),
            Tail::Right(b) => Interval::right_tail(b),
        }
    }

    pub fn contains(self, x: f64) -> bool {
        match self {
            Tail::Left(b) => x < b,
            Tail::Right(b) => x > b,
        }
    }
}

/// The censoring region D_c: a product of one-sided tails, one per
/// censored coordinate, ordered consistently with the censored index set.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncRegion {
    pub tails: Vec<Tail>,
}

impl TruncRegion {
    /// Region of one observation's censored coordinates, ordered like
    /// `part.censored()`.
    pub fn from_partition(part: &PatternPartition, bounds: &CensoringBounds) -> Result<Self> {
        let mut tails = Vec::with_capacity(part.left.len() + part.right.len());
        for &h in &part.censored() {
            let tail = if part.left.contains(&h) {
                let b = bounds.lower[h];
                if !b.is_finite() {
                    return Err(Error::InvalidBounds(format!(
                        "left-censored column {h} with infinite lower bound"
                    )));
                }
                Tail::Left(b)
            } else {
                let b = bounds.upper[h];
                if !b.is_finite() {
                    return Err(Error::InvalidBounds(format!(
                        "right-censored column {h} with infinite upper bound"
                    )));
                }
                Tail::Right(b)
            };
            tails.push(tail);
        }
        Ok(Self { tails })
    }

    pub fn dim(&self) -> usize {
        self.tails.len()
    }

    pub fn contains(&self, x: ArrayView1<f64>) -> bool {
        self.tails.iter().zip(x.iter()).all(|(t, &v)| t.contains(v))
    }
}

/// Conditional law of the censored coordinates given the observed ones.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    pub mean: Array1<f64>,
    pub precision: Array2<f64>,
    pub covariance: Array2<f64>,
}

/// Conditional distribution of X_c given X_o = x_o under `params`:
/// concentration Theta_cc, mean mu_c - Theta_cc^{-1} Theta_co (x_o - mu_o).
/// With o empty this is the marginal law of the full vector.
pub fn conditional_gaussian(
    params: &ModelParams,
    part: &PatternPartition,
    x_o: ArrayView1<f64>,
) -> Result<ConditionalGaussian> {
    let c = part.censored();
    if c.is_empty() {
        return Err(Error::InvalidData(
            "conditional law requested with no censored coordinates".into(),
        ));
    }
    if x_o.len() != part.observed.len() {
        return Err(Error::DimensionMismatch(format!(
            "observed subvector has length {}, partition expects {}",
            x_o.len(),
            part.observed.len()
        )));
    }
    let theta = params.theta();
    let q = c.len();
    let mut theta_cc = Array2::<f64>::zeros((q, q));
    for (a, &h) in c.iter().enumerate() {
        for (b, &k) in c.iter().enumerate() {
            theta_cc[[a, b]] = theta[[h, k]];
        }
    }
    let ch = Cholesky::new(theta_cc.view())
        .map_err(|_| Error::IllConditioned("Theta_cc numerically singular".into()))?;
    let covariance = ch.inverse();
    let mut mean = Array1::from_iter(c.iter().map(|&h| params.mu()[h]));
    if !part.observed.is_empty() {
        // Theta_co (x_o - mu_o)
        let mut rhs = Array1::<f64>::zeros(q);
        for (a, &h) in c.iter().enumerate() {
            let mut s = 0.0;
            for (j, &k) in part.observed.iter().enumerate() {
                s += theta[[h, k]] * (x_o[j] - params.mu()[k]);
            }
            rhs[a] = s;
        }
        let shift = ch.solve_vec(rhs.view());
        mean -= &shift;
    }
    Ok(ConditionalGaussian {
        mean,
        precision: theta_cc,
        covariance,
    })
}

/// Output of a truncated-moment computation.
#[derive(Debug, Clone)]
pub struct TruncMoments {
    /// first moments
    pub m1: Array1<f64>,
    /// non-central second moments
    pub m2: Array2<f64>,
    /// mass of the region under the untruncated law (estimated in the
    /// multivariate case; mean-field reports the product of marginals)
    pub prob: f64,
}

/// Configuration of the stochastic exact-moment engine.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TruncConfig {
    pub gibbs_sweeps: usize,
    pub burn_in: usize,
    /// plain Monte Carlo draws used for the region-probability estimate
    pub prob_draws: usize,
}

impl Default for TruncConfig {
    fn default() -> Self {
        Self {
            gibbs_sweeps: 100_000,
            burn_in: 1_000,
            prob_draws: 100_000,
        }
    }
}

/// Mean-field approximation: each coordinate is completed from its
/// univariate full conditional given the other coordinates held at their
/// current completed means, swept Gauss-Seidel style to a self-consistent
/// fixed point; cross second moments are products of first moments.
pub fn meanfield_trunc_moments(
    cond: &ConditionalGaussian,
    region: &TruncRegion,
) -> Result<TruncMoments> {
    let q = region.dim();
    if cond.mean.len() != q {
        return Err(Error::DimensionMismatch(format!(
            "conditional law dim {} vs region dim {q}",
            cond.mean.len()
        )));
    }
    let mut m1 = cond.mean.clone();
    let mut m2_diag = vec![0.0f64; q];
    let mut probs = vec![1.0f64; q];
    for _sweep in 0..200 {
        let mut change = 0.0f64;
        for h in 0..q {
            let omega_hh = cond.precision[[h, h]];
            let v = 1.0 / omega_hh;
            let mut c = cond.mean[h];
            for k in 0..q {
                if k != h {
                    c -= cond.precision[[h, k]] * (m1[k] - cond.mean[k]) * v;
                }
            }
            let (a, b, p) = univ_trunc_moments(c, v, region.tails[h].interval())?;
            change = change.max((a - m1[h]).abs());
            m1[h] = a;
            m2_diag[h] = b;
            probs[h] = p;
        }
        if change < 1e-12 {
            break;
        }
    }
    let mut m2 = Array2::<f64>::zeros((q, q));
    let mut prob = 1.0;
    for h in 0..q {
        m2[[h, h]] = m2_diag[h];
        prob *= probs[h];
        for k in 0..q {
            if h != k {
                m2[[h, k]] = m1[h] * m1[k];
            }
        }
    }
    Ok(TruncMoments { m1, m2, prob })
}

/// Draw from a standard normal conditioned on Z > a (Robert's method for
/// far tails, plain rejection otherwise).
pub fn sample_std_lower_truncated<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    if a < 0.45 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z > a {
                return z;
            }
        }
    } else {
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let u: f64 = rng.gen::<f64>();
            let z = a - (1.0 - rng.gen::<f64>()).ln() / lambda;
            let d = z - lambda;
            if u <= (-0.5 * d * d).exp() {
                return z;
            }
        }
    }
}

/// Draw from N(mean, variance) restricted to a one-sided tail.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    variance: f64,
    tail: Tail,
) -> f64 {
    let sd = variance.sqrt();
    match tail {
        Tail::Right(b) => mean + sd * sample_std_lower_truncated(rng, (b - mean) / sd),
        Tail::Left(b) => mean - sd * sample_std_lower_truncated(rng, (mean - b) / sd),
    }
}

/// Plain Monte Carlo estimate of the region mass under `cond`, with its
/// binomial standard error.
pub fn region_prob_mc<R: Rng + ?Sized>(
    cond: &ConditionalGaussian,
    region: &TruncRegion,
    draws: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    use rand_distr::{Distribution, StandardNormal};
    let ch = Cholesky::new(cond.covariance.view())
        .map_err(|_| Error::IllConditioned("conditional covariance not PD".into()))?;
    let q = region.dim();
    let mut hits = 0usize;
    let mut z = Array1::<f64>::zeros(q);
    for _ in 0..draws {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let x = ch.correlate(z.view()) + &cond.mean;
        if region.contains(x.view()) {
            hits += 1;
        }
    }
    let p = hits as f64 / draws as f64;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    Ok((p, se))
}

/// Exact (stochastic) truncated moments: one-dimensional regions delegate
/// to the closed form, larger regions run a Gibbs sampler over the
/// one-sided truncated full conditionals.
pub fn exact_trunc_mvn_moments<R: Rng + ?Sized>(
    cond: &ConditionalGaussian,
    region: &TruncRegion,
    cfg: &TruncConfig,
    rng: &mut R,
) -> Result<TruncMoments> {
    let q = region.dim();
    if q == 0 {
        return Err(Error::InvalidData("empty truncation region".into()));
    }
    if q == 1 {
        let (m1, m2, prob) =
            univ_trunc_moments(cond.mean[0], cond.covariance[[0, 0]], region.tails[0].interval())?;
        return Ok(TruncMoments {
            m1: Array1::from_elem(1, m1),
            m2: Array2::from_elem((1, 1), m2),
            prob,
        });
    }
    // marginal underflow check: a region whose every one-dimensional
    // marginal has vanishing mass is degenerate before any sampling
    let mut marginal_prob = 1.0;
    for h in 0..q {
        let (_, _, p) = univ_trunc_moments(
            cond.mean[h],
            cond.covariance[[h, h]],
            region.tails[h].interval(),
        )?;
        marginal_prob *= p;
    }

    // start strictly inside the region, half a conditional SD past each limit
    let mut x = Array1::<f64>::zeros(q);
    for h in 0..q {
        let sd = (1.0 / cond.precision[[h, h]]).sqrt();
        x[h] = match region.tails[h] {
            Tail::Left(b) => b - 0.5 * sd,
            Tail::Right(b) => b + 0.5 * sd,
        };
    }
    let mut sum1 = Array1::<f64>::zeros(q);
    let mut sum2 = Array2::<f64>::zeros((q, q));
    let total = cfg.burn_in + cfg.gibbs_sweeps;
    for sweep in 0..total {
        for h in 0..q {
            // full conditional of coordinate h given the others
            let mut shift = 0.0;
            for k in 0..q {
                if k != h {
                    shift += cond.precision[[h, k]] * (x[k] - cond.mean[k]);
                }
            }
            let var_h = 1.0 / cond.precision[[h, h]];
            let mean_h = cond.mean[h] - var_h * shift;
            x[h] = sample_truncated_normal(rng, mean_h, var_h, region.tails[h]);
        }
        if sweep >= cfg.burn_in {
            for h in 0..q {
                sum1[h] += x[h];
                for k in h..q {
                    sum2[[h, k]] += x[h] * x[k];
                }
            }
        }
    }
    let ns = cfg.gibbs_sweeps as f64;
    let m1 = sum1 / ns;
    let mut m2 = sum2 / ns;
    for h in 0..q {
        for k in (h + 1)..q {
            m2[[k, h]] = m2[[h, k]];
        }
    }
    let (prob_est, _se) = region_prob_mc(cond, region, cfg.prob_draws, rng)?;
    let prob = if prob_est > 0.0 { prob_est } else { marginal_prob };
    Ok(TruncMoments { m1, m2, prob })
}

/// Independent rejection-sampling oracle: draw from the untruncated
/// conditional law until `accepted` draws fall in the region. Returns the
/// moments together with Monte Carlo standard errors of m1 and m2.
pub fn rejection_trunc_moments<R: Rng + ?Sized>(
    cond: &ConditionalGaussian,
    region: &TruncRegion,
    accepted: usize,
    rng: &mut R,
) -> Result<(TruncMoments, Array1<f64>, Array2<f64>)> {
    use rand_distr::{Distribution, StandardNormal};
    let q = region.dim();
    let ch = Cholesky::new(cond.covariance.view())
        .map_err(|_| Error::IllConditioned("conditional covariance not PD".into()))?;
    let mut kept = 0usize;
    let mut tried = 0usize;
    let mut sum1 = Array1::<f64>::zeros(q);
    let mut sum2 = Array2::<f64>::zeros((q, q));
    let mut sumsq1 = Array1::<f64>::zeros(q);
    let mut sumsq2 = Array2::<f64>::zeros((q, q));
    let mut z = Array1::<f64>::zeros(q);
    while kept < accepted {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let x = ch.correlate(z.view()) + &cond.mean;
        tried += 1;
        if tried > accepted.saturating_mul(100_000) {
            return Err(Error::IllConditioned(
                "rejection oracle acceptance rate below 1e-5".into(),
            ));
        }
        if region.contains(x.view()) {
            kept += 1;
            for h in 0..q {
                sum1[h] += x[h];
                sumsq1[h] += x[h] * x[h];
                for k in 0..q {
                    let v = x[h] * x[k];
                    sum2[[h, k]] += v;
                    sumsq2[[h, k]] += v * v;
                }
            }
        }
    }
    let n = accepted as f64;
    let m1 = &sum1 / n;
    let m2 = &sum2 / n;
    let mut se1 = Array1::<f64>::zeros(q);
    for h in 0..q {
        let var = (sumsq1[h] / n - m1[h] * m1[h]).max(0.0);
        se1[h] = (var / n).sqrt();
    }
    let mut se2 = Array2::<f64>::zeros((q, q));
    for h in 0..q {
        for k in 0..q {
            let var = (sumsq2[[h, k]] / n - m2[[h, k]] * m2[[h, k]]).max(0.0);
            se2[[h, k]] = (var / n).sqrt();
        }
    }
    let prob = accepted as f64 / tried as f64;
    Ok((TruncMoments { m1, m2, prob }, se1, se2))
}

//! Data model for interval-censored multivariate observations: the
//! censoring indicator encoding, validation, and per-row pattern
//! partitioning.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs_diff, min_eigenvalue_sym, Cholesky};

/// Per-entry censoring status.
pub const LEFT_CENSORED: i8 = -1;
pub const OBSERVED: i8 = 0;
pub const RIGHT_CENSORED: i8 = 1;

/// Which side an unobserved (`NA`) entry of a column is censored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CensorSide {
    Left,
    Right,
}

/// Lower and upper detection limits, one pair per variable. Infinite
/// entries mean "no limit on that side".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensoringBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CensoringBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "lower bounds have length {}, upper bounds {}",
                lower.len(),
                upper.len()
            )));
        }
        for (h, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() {
                return Err(Error::InvalidBounds(format!("NaN bound at column {h}")));
            }
            if !(l < u) {
                return Err(Error::InvalidBounds(format!(
                    "column {h}: lower bound {l} not strictly below upper bound {u}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Bounds with no censoring on either side.
    pub fn unbounded(p: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; p],
            upper: vec![f64::INFINITY; p],
        }
    }

    pub fn p(&self) -> usize {
        self.lower.len()
    }
}

/// An n x p sample with per-entry censoring indicators in {-1, 0, +1}.
/// Entries with a nonzero indicator are latent; their stored value slot
/// is NaN and must never be read.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensoredDataset {
    values: Array2<f64>,
    indicator: Array2<i8>,
    bounds: CensoringBounds,
}

impl CensoredDataset {
    /// Build a dataset from already-encoded values and indicators.
    pub fn from_parts(
        values: Array2<f64>,
        indicator: Array2<i8>,
        bounds: CensoringBounds,
    ) -> Result<Self> {
        let (n, p) = values.dim();
        if indicator.dim() != (n, p) {
            return Err(Error::DimensionMismatch(format!(
                "values {:?} vs indicator {:?}",
                values.dim(),
                indicator.dim()
            )));
        }
        if bounds.p() != p {
            return Err(Error::DimensionMismatch(format!(
                "bounds for {} variables, data has {p}",
                bounds.p()
            )));
        }
        let mut values = values;
        for i in 0..n {
            for h in 0..p {
                match indicator[[i, h]] {
                    OBSERVED => {
                        let v = values[[i, h]];
                        if !v.is_finite() {
                            return Err(Error::InvalidData(format!(
                                "non-finite observed value at ({i},{h})"
                            )));
                        }
                        if v < bounds.lower[h] || v > bounds.upper[h] {
                            return Err(Error::InvalidData(format!(
                                "observed value {v} at ({i},{h}) outside [{}, {}]",
                                bounds.lower[h], bounds.upper[h]
                            )));
                        }
                    }
                    LEFT_CENSORED => {
                        if !bounds.lower[h].is_finite() {
                            return Err(Error::InvalidData(format!(
                                "left-censored entry at ({i},{h}) but lower bound is -inf"
                            )));
                        }
                        values[[i, h]] = f64::NAN;
                    }
                    RIGHT_CENSORED => {
                        if !bounds.upper[h].is_finite() {
                            return Err(Error::InvalidData(format!(
                                "right-censored entry at ({i},{h}) but upper bound is +inf"
                            )));
                        }
                        values[[i, h]] = f64::NAN;
                    }
                    r => {
                        return Err(Error::InvalidData(format!(
                            "indicator {r} at ({i},{h}) not in {{-1,0,+1}}"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            values,
            indicator,
            bounds,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn bounds(&self) -> &CensoringBounds {
        &self.bounds
    }

    pub fn indicator(&self) -> ArrayView2<'_, i8> {
        self.indicator.view()
    }

    /// Observed value at (i, h). Panics if the entry is censored.
    pub fn value(&self, i: usize, h: usize) -> f64 {
        debug_assert_eq!(self.indicator[[i, h]], OBSERVED);
        self.values[[i, h]]
    }

    pub fn status(&self, i: usize, h: usize) -> i8 {
        self.indicator[[i, h]]
    }

    /// Raw value matrix; censored entries hold NaN.
    pub fn values_raw(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn n_censored(&self) -> usize {
        self.indicator.iter().filter(|&&r| r != OBSERVED).count()
    }

    /// Per-row index-set partition of {0, ..., p-1}.
    pub fn partition_row(&self, i: usize) -> Result<PatternPartition> {
        if i >= self.n() {
            return Err(Error::RowOutOfRange(i, self.n()));
        }
        let mut part = PatternPartition::default();
        for h in 0..self.p() {
            match self.indicator[[i, h]] {
                OBSERVED => part.observed.push(h),
                LEFT_CENSORED => part.left.push(h),
                _ => part.right.push(h),
            }
        }
        Ok(part)
    }

    /// Columns of a single row restricted to the observed set.
    pub fn observed_subvector(&self, i: usize, observed: &[usize]) -> Array1<f64> {
        Array1::from_iter(observed.iter().map(|&h| self.values[[i, h]]))
    }
}

/// Disjoint index sets of one censoring pattern.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternPartition {
    pub observed: Vec<usize>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

impl PatternPartition {
    /// Censored indices, left first then right, ascending within each.
    pub fn censored(&self) -> Vec<usize> {
        let mut c = self.left.clone();
        c.extend_from_slice(&self.right);
        c.sort_unstable();
        c
    }
}

/// Encode a raw matrix against detection limits. Values strictly beyond
/// a finite bound become censored; values inside (or exactly on) the
/// bounds stay observed. NaN entries stand for an unobserved measurement
/// and are resolved by the per-column `na_side` declaration.
pub fn encode_censoring(
    raw: ArrayView2<f64>,
    bounds: &CensoringBounds,
    na_side: &[Option<CensorSide>],
) -> Result<CensoredDataset> {
    let (n, p) = raw.dim();
    if bounds.p() != p {
        return Err(Error::DimensionMismatch(format!(
            "raw has {p} columns, bounds describe {}",
            bounds.p()
        )));
    }
    if na_side.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "na_side has length {}, expected {p}",
            na_side.len()
        )));
    }
    let mut values = Array2::<f64>::zeros((n, p));
    let mut indicator = Array2::<i8>::zeros((n, p));
    for i in 0..n {
        for h in 0..p {
            let v = raw[[i, h]];
            let (l, u) = (bounds.lower[h], bounds.upper[h]);
            let (r, stored) = if v.is_nan() {
                match na_side[h] {
                    Some(CensorSide::Left) if l.is_finite() => (LEFT_CENSORED, f64::NAN),
                    Some(CensorSide::Right) if u.is_finite() => (RIGHT_CENSORED, f64::NAN),
                    Some(side) => {
                        return Err(Error::InvalidData(format!(
                            "column {h}: NA declared {side:?}-censored but that bound is infinite"
                        )))
                    }
                    None => {
                        return Err(Error::InvalidData(format!(
                            "column {h}: NA at row {i} with no declared censoring side"
                        )))
                    }
                }
            } else if v > u {
                (RIGHT_CENSORED, f64::NAN)
            } else if v < l {
                (LEFT_CENSORED, f64::NAN)
            } else {
                (OBSERVED, v)
            };
            indicator[[i, h]] = r;
            values[[i, h]] = stored;
        }
    }
    CensoredDataset::from_parts(values, indicator, bounds.clone())
}

/// Mean vector and precision matrix with the covariance cached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    mu: Vec<f64>,
    #[serde(with = "crate::io::serde_array2")]
    theta: Array2<f64>,
    #[serde(with = "crate::io::serde_array2")]
    sigma: Array2<f64>,
}

impl ModelParams {
    /// Build from a mean and a symmetric positive definite precision
    /// matrix; the covariance is computed by Cholesky inversion.
    pub fn new(mu: Vec<f64>, theta: Array2<f64>) -> Result<Self> {
        let p = mu.len();
        if theta.dim() != (p, p) {
            return Err(Error::DimensionMismatch(format!(
                "mu has length {p}, theta is {:?}",
                theta.dim()
            )));
        }
        let asym = max_abs_diff(theta.view(), theta.t());
        if asym > 1e-10 {
            return Err(Error::InvalidData(format!(
                "theta asymmetric by {asym:e}"
            )));
        }
        let mut theta = theta;
        crate::linalg::symmetrize(&mut theta);
        let ch = Cholesky::new(theta.view())
            .map_err(|_| Error::NotPositiveDefinite(Some("precision matrix".into())))?;
        let sigma = ch.inverse();
        Ok(Self { mu, theta, sigma })
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn theta(&self) -> ArrayView2<'_, f64> {
        self.theta.view()
    }

    pub fn sigma(&self) -> ArrayView2<'_, f64> {
        self.sigma.view()
    }

    /// Smallest eigenvalue of the precision matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue_sym(self.theta.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn no_side(p: usize) -> Vec<Option<CensorSide>> {
        vec![None; p]
    }

    #[test]
    fn encode_right_censors_above_upper() {
        let raw = array![[39.0, 41.0]];
        let bounds = CensoringBounds::new(
            vec![f64::NEG_INFINITY; 2],
            vec![40.0, 40.0],
        )
        .unwrap();
        let ds = encode_censoring(raw.view(), &bounds, &no_side(2)).unwrap();
        assert_eq!(ds.status(0, 0), OBSERVED);
        assert_eq!(ds.status(0, 1), RIGHT_CENSORED);
        assert_eq!(ds.value(0, 0), 39.0);
    }

    #[test]
    fn encode_inside_bounds_is_identity() {
        let raw = array![[1.0, 2.0], [3.0, 4.0]];
        let bounds = CensoringBounds::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let ds = encode_censoring(raw.view(), &bounds, &no_side(2)).unwrap();
        assert!(ds.indicator().iter().all(|&r| r == OBSERVED));
        for i in 0..2 {
            for h in 0..2 {
                assert_eq!(ds.value(i, h), raw[[i, h]]);
            }
        }
    }

    #[test]
    fn encode_flow_cytometer_range() {
        // instrument range [0, 1023]
        let raw = array![[-2.0, 5.0, 1200.0]];
        let bounds =
            CensoringBounds::new(vec![0.0; 3], vec![1023.0; 3]).unwrap();
        let ds = encode_censoring(raw.view(), &bounds, &no_side(3)).unwrap();
        assert_eq!(ds.status(0, 0), LEFT_CENSORED);
        assert_eq!(ds.status(0, 1), OBSERVED);
        assert_eq!(ds.status(0, 2), RIGHT_CENSORED);
    }

    #[test]
    fn values_on_the_bound_stay_observed() {
        let raw = array![[0.0, 1023.0]];
        let bounds = CensoringBounds::new(vec![0.0; 2], vec![1023.0; 2]).unwrap();
        let ds = encode_censoring(raw.view(), &bounds, &no_side(2)).unwrap();
        assert_eq!(ds.status(0, 0), OBSERVED);
        assert_eq!(ds.status(0, 1), OBSERVED);
    }

    #[test]
    fn na_requires_declared_side_and_finite_bound() {
        let raw = array![[f64::NAN]];
        let bounds =
            CensoringBounds::new(vec![f64::NEG_INFINITY], vec![40.0]).unwrap();
        assert!(encode_censoring(raw.view(), &bounds, &[None]).is_err());
        assert!(
            encode_censoring(raw.view(), &bounds, &[Some(CensorSide::Left)]).is_err()
        );
        let ds =
            encode_censoring(raw.view(), &bounds, &[Some(CensorSide::Right)]).unwrap();
        assert_eq!(ds.status(0, 0), RIGHT_CENSORED);
    }

    #[test]
    fn partition_row_splits_indices() {
        let raw = array![[-5.0, 1.0, 50.0]];
        let bounds = CensoringBounds::new(vec![0.0; 3], vec![40.0; 3]).unwrap();
        let ds = encode_censoring(raw.view(), &bounds, &no_side(3)).unwrap();
        let part = ds.partition_row(0).unwrap();
        assert_eq!(part.observed, vec![1]);
        assert_eq!(part.left, vec![0]);
        assert_eq!(part.right, vec![2]);
        assert_eq!(part.censored(), vec![0, 2]);
    }

    #[test]
    fn partition_all_observed_and_all_right() {
        let bounds = CensoringBounds::new(vec![f64::NEG_INFINITY; 2], vec![40.0; 2]).unwrap();
        let ds = encode_censoring(array![[1.0, 2.0], [41.0, 42.0]].view(), &bounds, &no_side(2))
            .unwrap();
        let p0 = ds.partition_row(0).unwrap();
        assert_eq!(p0.observed, vec![0, 1]);
        assert!(p0.left.is_empty() && p0.right.is_empty());
        let p1 = ds.partition_row(1).unwrap();
        assert!(p1.observed.is_empty());
        assert_eq!(p1.right, vec![0, 1]);
        assert!(ds.partition_row(2).is_err());
    }

    #[test]
    fn encode_is_idempotent_on_consistent_data() {
        let raw = array![[39.0, 41.0], [10.0, 20.0]];
        let bounds =
            CensoringBounds::new(vec![f64::NEG_INFINITY; 2], vec![40.0; 2]).unwrap();
        let side = vec![Some(CensorSide::Right); 2];
        let ds1 = encode_censoring(raw.view(), &bounds, &side).unwrap();
        // re-encode the stored matrix (censored slots are NaN)
        let ds2 = encode_censoring(ds1.values_raw(), &bounds, &side).unwrap();
        assert_eq!(ds1.indicator(), ds2.indicator());
    }

    #[test]
    fn model_params_invariants() {
        let theta = array![[4.0 / 3.0, -2.0 / 3.0], [-2.0 / 3.0, 4.0 / 3.0]];
        let params = ModelParams::new(vec![0.0, 0.0], theta.clone()).unwrap();
        let prod = params.theta().dot(&params.sigma());
        let eye = Array2::<f64>::eye(2);
        assert!(max_abs_diff(prod.view(), eye.view()) < 1e-8);
        assert!((params.sigma()[[0, 1]] - 0.5).abs() < 1e-12);
        assert!(params.min_eigenvalue() > 0.0);
    }

    #[test]
    fn model_params_rejects_indefinite() {
        let theta = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(ModelParams::new(vec![0.0, 0.0], theta).is_err());
    }
}

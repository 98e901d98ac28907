//! Sparse Gaussian graphical models for interval-censored data.
//!
//! The estimator maximizes the observed-data log-likelihood of a
//! multivariate Gaussian under per-variable detection limits, with an
//! l1 penalty on the off-diagonal precision entries. Fitting alternates
//! truncated-moment completion (E-step) with a graphical lasso solve
//! (M-step); paths over a penalty grid are warm-started and tuned by BIC.

pub mod em;
pub mod error;
pub mod glasso;
pub mod io;
pub mod linalg;
pub mod model;
pub mod path;
pub mod sim;
pub mod trunc;

pub use em::{e_step, fit_em, m_step, observed_loglik, EStepMode, EmConfig, FitResult, SuffStats};
pub use error::{Error, Result};
pub use glasso::{glasso_fit, kkt_residual, GlassoConfig, GlassoSolution};
pub use model::{
    encode_censoring, CensorSide, CensoredDataset, CensoringBounds, ModelParams, PatternPartition,
};
pub use path::{bic_approx, bic_exact, fit_path, rho_max, select, PathResult, RhoMin, Spacing};
pub use trunc::{
    conditional_gaussian, exact_trunc_mvn_moments, meanfield_trunc_moments, univ_trunc_moments,
    ConditionalGaussian, Interval, Tail, TruncConfig, TruncMoments, TruncRegion,
};

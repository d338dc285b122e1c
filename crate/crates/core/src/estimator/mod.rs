//! Two-level linear mixed models fitted by REML or ML.
//!
//! Level 1: `y_ij = x_ij' gamma + z_ij' u_j + r_ij` with `r_ij ~ N(0, sigma2)`.
//! Level 2: `u_j ~ N(0, T)`, where `z_ij` holds the intercept and any
//! level-1 predictors flagged with a random slope. Level-2 predictors enter
//! the intercept equation only.
//!
//! Fixed effects are profiled out by generalized least squares; the
//! variance components maximize the profiled (restricted) likelihood.

mod design;
mod gls;
mod homogeneity;
mod optimize;
mod profile;
mod spec;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::data::Dataset;
use crate::stats::t_two_sided_p;
use design::{ColumnRole, Design};
pub use gls::gls_fixed_effects;
pub use homogeneity::{tau_chi_square_test, VarianceTest};
pub(crate) use profile::psd_sqrt;
pub use profile::ProfiledLikelihood;
pub use spec::{Centering, DfConvention, Level1Term, Method, ModelSpec, SpecError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("column absent: '{0}'")]
    MissingColumn(String),
    #[error("column '{column}' has {count} missing cells; apply listwise deletion first")]
    MissingValues { column: String, count: usize },
    #[error("column '{0}' is not numeric")]
    NotNumeric(String),
    #[error("{0}")]
    Data(String),
    #[error("J ≥ 2 required (found {0} group)")]
    TooFewGroups(usize),
    #[error("N = {n} is too small for {p} fixed effects (need N > p + 2)")]
    TooFewObservations { n: usize, p: usize },
    #[error("level-2 predictor '{predictor}' varies within group '{group}'")]
    Level2Varies { predictor: String, group: String },
    #[error("singular fixed-effects design")]
    SingularDesign,
    #[error("marginal covariance of group {0} is not invertible")]
    SingularCovariance(usize),
    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),
    #[error(
        "no convergence after {iterations} iterations (relative change {relative_change:.3e}, gradient norm {gradient_norm:.3e})"
    )]
    NotConverged {
        iterations: usize,
        relative_change: f64,
        gradient_norm: f64,
    },
    #[error("df ≤ 0 for the variance test of '{effect}' (df = {df})")]
    DfNonPositive { effect: String, df: i64 },
    #[error("reliability undefined: both variance components are zero")]
    ReliabilityUndefined,
    #[error("invalid variance components: {0}")]
    InvalidVarianceComponents(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedEffect {
    pub name: String,
    pub gamma_hat: f64,
    pub se: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Random-effect covariance `tau` (intercept first) and level-1 residual
/// variance `sigma2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceComponents {
    pub names: Vec<String>,
    pub tau: Vec<Vec<f64>>,
    pub sigma2: f64,
}

impl VarianceComponents {
    pub fn intercept_only(tau00: f64, sigma2: f64) -> Self {
        Self {
            names: vec!["intercept".to_string()],
            tau: vec![vec![tau00]],
            sigma2,
        }
    }

    pub fn from_matrix(names: Vec<String>, tau: &DMatrix<f64>, sigma2: f64) -> Self {
        Self {
            names,
            tau: tau.row_iter().map(|r| r.iter().copied().collect()).collect(),
            sigma2,
        }
    }

    pub fn tau00(&self) -> f64 {
        self.tau[0][0]
    }

    pub fn q(&self) -> usize {
        self.tau.len()
    }

    pub fn tau_matrix(&self) -> DMatrix<f64> {
        let q = self.q();
        DMatrix::from_fn(q, q, |i, j| self.tau[i][j])
    }

    /// Checks shape, symmetry, positive semi-definiteness and
    /// `sigma2 >= 0`.
    pub fn validate(&self) -> Result<(), FitError> {
        let q = self.q();
        if q == 0 || self.tau.iter().any(|r| r.len() != q) {
            return Err(FitError::InvalidVarianceComponents("tau must be square".into()));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(FitError::InvalidVarianceComponents("sigma2 must be ≥ 0".into()));
        }
        let t = self.tau_matrix();
        let scale = t.amax().max(f64::MIN_POSITIVE);
        if (&t - t.transpose()).amax() > 1e-10 * scale {
            return Err(FitError::InvalidVarianceComponents("tau is not symmetric".into()));
        }
        if t.symmetric_eigenvalues().min() < -1e-10 * scale {
            return Err(FitError::InvalidVarianceComponents(
                "tau is not positive semi-definite".into(),
            ));
        }
        Ok(())
    }
}

/// How the optimizer finished.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub em_iterations: usize,
    pub newton_iterations: usize,
    /// Relative log-likelihood change over the final step.
    pub relative_change: f64,
    /// Infinity norm of the projected log-likelihood gradient on the
    /// unconstrained parameterization.
    pub gradient_norm: f64,
    /// A variance reached zero (tau on the PSD boundary).
    pub boundary: bool,
    /// Deviance at the start of every EM iteration, then at the EM exit.
    pub em_deviance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenteringRecord {
    pub name: String,
    pub grand_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub outcome: String,
    pub method: Method,
    pub fixed: Vec<FixedEffect>,
    pub fixed_covariance: Vec<Vec<f64>>,
    pub vc: VarianceComponents,
    /// Chi-square homogeneity tests per random effect, when computable.
    pub vc_tests: Option<Vec<VarianceTest>>,
    pub loglik: f64,
    pub deviance: f64,
    pub reliability_mean: f64,
    pub reliability_per_group: Vec<f64>,
    pub convergence: Convergence,
    pub n_obs: usize,
    pub n_groups: usize,
    pub group_sizes: Vec<usize>,
    pub centering: Vec<CenteringRecord>,
    /// Optimum on the unconstrained parameterization.
    pub theta: Vec<f64>,
}

impl FitResult {
    pub fn fixed_effect(&self, name: &str) -> Option<&FixedEffect> {
        self.fixed.iter().find(|f| f.name == name)
    }

    pub fn test_for(&self, effect: &str) -> Option<&VarianceTest> {
        self.vc_tests.as_ref()?.iter().find(|t| t.effect == effect)
    }
}

/// Per-group intercept reliabilities `tau00 / (tau00 + sigma2 / n_j)` and
/// their arithmetic mean.
pub fn reliability(vc: &VarianceComponents, sizes: &[usize]) -> Result<(Vec<f64>, f64), FitError> {
    let tau00 = vc.tau00();
    reliability_real(tau00, vc.sigma2, &sizes.iter().map(|&n| n as f64).collect::<Vec<_>>())
}

/// As [`reliability`], with real-valued group sizes.
pub fn reliability_real(tau00: f64, sigma2: f64, sizes: &[f64]) -> Result<(Vec<f64>, f64), FitError> {
    if tau00 < 0.0 || sigma2 < 0.0 {
        return Err(FitError::InvalidVarianceComponents("negative variance".into()));
    }
    if tau00 == 0.0 && sigma2 == 0.0 {
        return Err(FitError::ReliabilityUndefined);
    }
    let per: Vec<f64> = sizes.iter().map(|&n| tau00 / (tau00 + sigma2 / n)).collect();
    let mean = if per.is_empty() {
        f64::NAN
    } else {
        per.iter().sum::<f64>() / per.len() as f64
    };
    Ok((per, mean))
}

/// Fits the model described by `spec`. `ds` must have no missing cells in
/// the model variables (see [`crate::data::listwise_delete`]).
pub fn fit(spec: &ModelSpec, ds: &Dataset) -> Result<FitResult, FitError> {
    let design = Design::build(spec, ds)?;
    fit_design(spec, &design)
}

/// Fits a model with random slopes on the flagged level-1 terms. The
/// result's `tau` is the full `q x q` covariance; per-slope variance tests
/// are in `vc_tests`, and a variance on the PSD boundary sets
/// `convergence.boundary`.
pub fn fit_random_slopes(spec: &ModelSpec, ds: &Dataset) -> Result<FitResult, FitError> {
    fit(spec, ds)
}

fn fit_design(spec: &ModelSpec, design: &Design) -> Result<FitResult, FitError> {
    let lik = ProfiledLikelihood::from_design(design, spec.method);
    let q = design.q();

    // OLS start
    let ols = lik.evaluate(&DMatrix::zeros(q, q), None)?;
    let sigma2_0 = ols.sigma2_hat;
    let n = design.n as f64;
    let tau0 = DMatrix::from_fn(q, q, |i, j| {
        if i != j {
            return 0.0;
        }
        let mean_sq: f64 = design.stats.iter().map(|s| s.ztz[(i, i)]).sum::<f64>() / n;
        0.1 * sigma2_0 / mean_sq.max(f64::MIN_POSITIVE)
    });

    let opt = optimize::maximize(&lik, tau0, sigma2_0, spec.tol, spec.max_iter)?;

    let f = lik.factor(&opt.theta);
    let eval = lik.evaluate(&f, None)?;
    let sigma2 = eval.sigma2_hat;
    let mut tau = (&f * f.transpose()) * sigma2;
    tau.iter_mut().for_each(|v| {
        if v.abs() <= 1e-10 * sigma2 {
            *v = 0.0;
        }
    });
    let boundary = lik
        .diagonal_indices()
        .iter()
        .any(|&k| opt.theta[k] <= profile::LOG_DIAG_FLOOR + 1e-9);
    let vc = VarianceComponents::from_matrix(design.random_names.clone(), &tau, sigma2);

    let cov = &eval.a_inv * sigma2;
    let fixed = fixed_effects(spec, design, &eval.beta, &cov);

    let sizes = design.sizes();
    let (reliability_per_group, reliability_mean) = if tau[(0, 0)] == 0.0 && sigma2 == 0.0 {
        (vec![f64::NAN; sizes.len()], f64::NAN)
    } else {
        reliability(&vc, &sizes)?
    };

    let mut result = FitResult {
        outcome: spec.outcome.clone(),
        method: spec.method,
        fixed,
        fixed_covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        vc,
        vc_tests: None,
        loglik: -0.5 * eval.deviance,
        deviance: eval.deviance,
        reliability_mean,
        reliability_per_group,
        convergence: Convergence {
            converged: true,
            iterations: opt.em_iterations + opt.newton_iterations,
            em_iterations: opt.em_iterations,
            newton_iterations: opt.newton_iterations,
            relative_change: opt.relative_change,
            gradient_norm: opt.gradient_norm,
            boundary,
            em_deviance: opt.em_trace,
        },
        n_obs: design.n,
        n_groups: design.n_groups(),
        group_sizes: sizes,
        centering: design
            .grand_means
            .iter()
            .map(|(name, m)| CenteringRecord {
                name: name.clone(),
                grand_mean: *m,
            })
            .collect(),
        theta: opt.theta,
    };
    result.vc_tests = homogeneity::tests_for_design(design, &result).ok();
    Ok(result)
}

fn fixed_effects(
    spec: &ModelSpec,
    design: &Design,
    beta: &nalgebra::DVector<f64>,
    cov: &DMatrix<f64>,
) -> Vec<FixedEffect> {
    let n = design.n as f64;
    let j = design.n_groups() as f64;
    let p = design.p() as f64;
    let k = design.n_level1() as f64;
    let s = design.n_level2() as f64;

    design
        .fixed_names
        .iter()
        .zip(&design.roles)
        .enumerate()
        .map(|(i, (name, role))| {
            let gamma_hat = beta[i];
            let se = cov[(i, i)].max(0.0).sqrt();
            let t = if se > 0.0 { gamma_hat / se } else { f64::NAN };
            let df = match spec.df {
                DfConvention::Residual => n - p,
                DfConvention::Hlm => match role {
                    ColumnRole::Intercept | ColumnRole::Level2 => j - s - 1.0,
                    ColumnRole::Level1 { random: false } => n - j - k,
                    ColumnRole::Level1 { random: true } => j - 1.0,
                },
            };
            FixedEffect {
                name: name.clone(),
                gamma_hat,
                se,
                t,
                df,
                p: t_two_sided_p(t, df),
            }
        })
        .collect()
}

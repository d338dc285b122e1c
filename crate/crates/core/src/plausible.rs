//! One fit per plausible-value outcome, pooled with Rubin's rules.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{accurate_mean, listwise_delete, Column, DataError, Dataset, DeletionReport};
use crate::estimator::{fit, FitError, FitResult, ModelSpec, VarianceComponents};
use crate::stats::t_two_sided_p;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("M ≥ 2 required (found {0})")]
    TooFewValues(usize),
    #[error("plausible-value column '{0}' listed twice")]
    DuplicateColumn(String),
    #[error("estimates and variances differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("variance {0} is negative or not finite")]
    InvalidVariance(f64),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("fit for plausible value {index} ('{column}') failed: {source}")]
    Fit {
        index: usize,
        column: String,
        source: FitError,
    },
}

/// Ordered outcome columns, one per plausible value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlausibleValueSet {
    columns: Vec<String>,
}

impl PlausibleValueSet {
    pub fn new(columns: Vec<String>) -> Result<Self, PoolError> {
        if columns.len() < 2 {
            return Err(PoolError::TooFewValues(columns.len()));
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].contains(c) {
                return Err(PoolError::DuplicateColumn(c.clone()));
            }
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn m(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RubinPooled {
    pub estimate: f64,
    /// Mean within-imputation variance `Ū`.
    pub within: f64,
    /// Between-imputation variance `B`.
    pub between: f64,
    /// `Ū + (1 + 1/M) B`.
    pub total: f64,
    pub se: f64,
    /// `(M - 1)(1 + Ū / ((1 + 1/M) B))²`, infinite when `B = 0`.
    pub df: f64,
    /// Two-sided p-value of `estimate / se` on `df`.
    pub p: f64,
}

/// Mean as first value plus mean deviation, so identical inputs give
/// exactly that value back.
fn shifted_mean(v: &[f64]) -> f64 {
    v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / v.len() as f64
}

/// Combines `M` estimates and their squared standard errors.
pub fn rubin_pool(estimates: &[f64], variances: &[f64]) -> Result<RubinPooled, PoolError> {
    let m = estimates.len();
    if variances.len() != m {
        return Err(PoolError::LengthMismatch(m, variances.len()));
    }
    if m < 2 {
        return Err(PoolError::TooFewValues(m));
    }
    if let Some(&v) = variances.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(PoolError::InvalidVariance(v));
    }
    let mf = m as f64;
    let estimate = shifted_mean(estimates);
    let within = shifted_mean(variances);
    let between = estimates.iter().map(|e| (e - estimate).powi(2)).sum::<f64>() / (mf - 1.0);
    let inflated = (1.0 + 1.0 / mf) * between;
    let total = within + inflated;
    let df = if between == 0.0 {
        f64::INFINITY
    } else {
        (mf - 1.0) * (1.0 + within / inflated).powi(2)
    };
    let se = total.sqrt();
    let p = if se > 0.0 {
        t_two_sided_p(estimate / se, df)
    } else {
        f64::NAN
    };
    Ok(RubinPooled {
        estimate,
        within,
        between,
        total,
        se,
        df,
        p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledEffect {
    pub name: String,
    pub rubin: RubinPooled,
    /// Complete-data df of the coefficient (identical across fits).
    pub complete_df: f64,
    /// `min(rubin.df, complete_df)`, used for `p`.
    pub df: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledResult {
    pub plausible_values: Vec<String>,
    pub fixed: Vec<PooledEffect>,
    /// Variance components averaged over the fits, for description only.
    pub vc_mean: VarianceComponents,
    pub deletion: DeletionReport,
    pub fits: Vec<FitResult>,
}

/// Listwise deletion on the predictors and every plausible-value column.
fn delete_rows(spec: &ModelSpec, ds: &Dataset, pvs: &PlausibleValueSet) -> Result<(Dataset, DeletionReport), PoolError> {
    let mut vars: Vec<String> = spec.predictors().map(str::to_string).collect();
    vars.extend(pvs.columns.iter().cloned());
    Ok(listwise_delete(ds, &vars)?)
}

/// Fits `spec` once per plausible value, with that value as the outcome,
/// and pools the fixed effects. The fits run concurrently.
pub fn fit_pooled(spec: &ModelSpec, ds: &Dataset, pvs: &PlausibleValueSet) -> Result<PooledResult, PoolError> {
    let (data, deletion) = delete_rows(spec, ds, pvs)?;
    let fits: Vec<FitResult> = pvs
        .columns
        .par_iter()
        .enumerate()
        .map(|(index, column)| {
            let mut s = spec.clone();
            s.outcome = column.clone();
            fit(&s, &data).map_err(|source| PoolError::Fit {
                index,
                column: column.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;

    let first = &fits[0];
    let fixed = (0..first.fixed.len())
        .map(|k| {
            let est: Vec<f64> = fits.iter().map(|f| f.fixed[k].gamma_hat).collect();
            let var: Vec<f64> = fits.iter().map(|f| f.fixed[k].se.powi(2)).collect();
            let rubin = rubin_pool(&est, &var)?;
            let complete_df = first.fixed[k].df;
            let df = rubin.df.min(complete_df);
            let t = if rubin.se > 0.0 { rubin.estimate / rubin.se } else { f64::NAN };
            Ok(PooledEffect {
                name: first.fixed[k].name.clone(),
                rubin,
                complete_df,
                df,
                t,
                p: t_two_sided_p(t, df),
            })
        })
        .collect::<Result<_, PoolError>>()?;

    let q = first.vc.q();
    let tau = (0..q)
        .map(|i| (0..q).map(|j| shifted_mean(&fits.iter().map(|f| f.vc.tau[i][j]).collect::<Vec<_>>())).collect())
        .collect();
    let vc_mean = VarianceComponents {
        names: first.vc.names.clone(),
        tau,
        sigma2: shifted_mean(&fits.iter().map(|f| f.vc.sigma2).collect::<Vec<_>>()),
    };

    Ok(PooledResult {
        plausible_values: pvs.columns.clone(),
        fixed,
        vc_mean,
        deletion,
        fits,
    })
}

/// Name of the averaged outcome column added by [`fit_average_pv`].
pub const PV_MEAN_COLUMN: &str = "pv_mean";

/// Non-canonical sensitivity mode: one fit on the row-wise mean of the
/// plausible values.
pub fn fit_average_pv(
    spec: &ModelSpec,
    ds: &Dataset,
    pvs: &PlausibleValueSet,
) -> Result<(FitResult, DeletionReport), PoolError> {
    let (data, deletion) = delete_rows(spec, ds, pvs)?;
    let cols: Vec<Vec<f64>> = pvs.columns.iter().map(|c| data.complete(c)).collect::<Result<_, _>>()?;
    let mean: Vec<Option<f64>> = (0..data.n_rows())
        .map(|r| Some(accurate_mean(&cols.iter().map(|c| c[r]).collect::<Vec<_>>())))
        .collect();
    let data = data.with_column(PV_MEAN_COLUMN, Column::Numeric(mean))?;
    let mut s = spec.clone();
    s.outcome = PV_MEAN_COLUMN.to_string();
    let result = fit(&s, &data).map_err(|source| PoolError::Fit {
        index: 0,
        column: PV_MEAN_COLUMN.to_string(),
        source,
    })?;
    Ok((result, deletion))
}

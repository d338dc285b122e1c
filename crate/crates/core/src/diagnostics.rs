//! Scalar multilevel diagnostics and descriptive tables.

use serde::Serialize;
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::estimator::FitResult;
use crate::stats::t_two_sided_p;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("both variance components are zero")]
    ZeroVariance,
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("null-model variance components are zero")]
    NullComponentsZero,
    #[error("fits disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Intraclass correlation `tau00 / (tau00 + sigma2)`.
pub fn icc(tau00: f64, sigma2: f64) -> Result<f64, DiagnosticsError> {
    if !(tau00 >= 0.0) {
        return Err(DiagnosticsError::OutOfRange { what: "tau00", value: tau00 });
    }
    if !(sigma2 >= 0.0) {
        return Err(DiagnosticsError::OutOfRange { what: "sigma2", value: sigma2 });
    }
    if tau00 + sigma2 == 0.0 {
        return Err(DiagnosticsError::ZeroVariance);
    }
    Ok(tau00 / (tau00 + sigma2))
}

/// `1 + (n_bar - 1) icc`.
pub fn design_effect(n_bar: f64, icc: f64) -> Result<f64, DiagnosticsError> {
    if !(n_bar >= 1.0) {
        return Err(DiagnosticsError::OutOfRange { what: "mean cluster size", value: n_bar });
    }
    if !(0.0..=1.0).contains(&icc) {
        return Err(DiagnosticsError::OutOfRange { what: "icc", value: icc });
    }
    Ok(1.0 + (n_bar - 1.0) * icc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveSampleSize {
    pub value: f64,
    pub rounded: u64,
}

/// `N / deff`, unrounded and rounded to the nearest integer.
pub fn effective_sample_size(n: f64, deff: f64) -> Result<EffectiveSampleSize, DiagnosticsError> {
    if !(n >= 1.0) {
        return Err(DiagnosticsError::OutOfRange { what: "N", value: n });
    }
    if !(deff >= 1.0) || !deff.is_finite() {
        return Err(DiagnosticsError::OutOfRange { what: "design effect", value: deff });
    }
    let value = n / deff;
    Ok(EffectiveSampleSize {
        value,
        rounded: value.round() as u64,
    })
}

/// Proportional reductions in variance of a model relative to the
/// unconditional model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceExplained {
    pub r2_level1: f64,
    pub r2_level2: f64,
    pub r2_total: f64,
    /// Some component grew under the model, giving a negative value.
    pub negative: bool,
}

/// Variance explained from raw components: `(tau_null, sigma2_null)` and
/// `(tau_model, sigma2_model)`.
pub fn variance_explained_components(
    tau_null: f64,
    sigma2_null: f64,
    tau_model: f64,
    sigma2_model: f64,
) -> Result<VarianceExplained, DiagnosticsError> {
    if tau_null <= 0.0 || sigma2_null <= 0.0 {
        return Err(DiagnosticsError::NullComponentsZero);
    }
    let r2_level1 = (sigma2_null - sigma2_model) / sigma2_null;
    let r2_level2 = (tau_null - tau_model) / tau_null;
    let total_null = tau_null + sigma2_null;
    let r2_total = (total_null - (tau_model + sigma2_model)) / total_null;
    Ok(VarianceExplained {
        r2_level1,
        r2_level2,
        r2_total,
        negative: r2_level1 < 0.0 || r2_level2 < 0.0 || r2_total < 0.0,
    })
}

/// Variance explained by `model` against the unconditional `null` fit on
/// the same outcome and rows.
pub fn variance_explained(null: &FitResult, model: &FitResult) -> Result<VarianceExplained, DiagnosticsError> {
    if null.outcome != model.outcome {
        return Err(DiagnosticsError::Mismatch(format!(
            "outcomes '{}' and '{}'",
            null.outcome, model.outcome
        )));
    }
    if null.n_obs != model.n_obs || null.n_groups != model.n_groups {
        return Err(DiagnosticsError::Mismatch(format!(
            "N/J {}/{} and {}/{}",
            null.n_obs, null.n_groups, model.n_obs, model.n_groups
        )));
    }
    variance_explained_components(null.vc.tau00(), null.vc.sigma2, model.vc.tau00(), model.vc.sigma2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Descriptive {
    pub variable: String,
    pub n: usize,
    /// `None` when the column has no non-missing cells.
    pub mean: Option<f64>,
    /// `None` with fewer than two non-missing cells.
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

pub fn descriptives(ds: &Dataset, vars: &[String]) -> Result<Vec<Descriptive>, DiagnosticsError> {
    vars.iter()
        .map(|v| {
            let x: Vec<f64> = ds.numeric(v)?.iter().flatten().copied().collect();
            let (mean, var) = crate::stats::mean_var(&x);
            Ok(Descriptive {
                variable: v.clone(),
                n: x.len(),
                mean: (!x.is_empty()).then_some(mean),
                sd: (x.len() >= 2).then(|| var.sqrt()),
                min: x.iter().copied().reduce(f64::min),
                max: x.iter().copied().reduce(f64::max),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub variables: Vec<String>,
    /// `None` where a column has zero variance or fewer than two complete
    /// pairs.
    pub r: Vec<Vec<Option<f64>>>,
    pub p: Vec<Vec<Option<f64>>>,
    pub n: Vec<Vec<usize>>,
}

/// Pearson correlations over pairwise-complete rows, with two-sided
/// p-values from `t = r sqrt((n-2)/(1-r²))` on `n - 2` df.
pub fn correlations(ds: &Dataset, vars: &[String]) -> Result<CorrelationMatrix, DiagnosticsError> {
    let cols: Vec<&[Option<f64>]> = vars.iter().map(|v| ds.numeric(v)).collect::<Result<_, _>>()?;
    let k = vars.len();
    let mut r = vec![vec![None; k]; k];
    let mut p = vec![vec![None; k]; k];
    let mut n = vec![vec![0; k]; k];
    for a in 0..k {
        for b in a..k {
            let (x, y): (Vec<f64>, Vec<f64>) = cols[a]
                .iter()
                .zip(cols[b])
                .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                .unzip();
            n[a][b] = x.len();
            n[b][a] = x.len();
            let Some(rv) = pearson(&x, &y) else {
                continue;
            };
            let rv = if a == b { 1.0 } else { rv };
            let pv = if a == b || rv.abs() >= 1.0 {
                0.0
            } else {
                let df = x.len() as f64 - 2.0;
                if df > 0.0 {
                    t_two_sided_p(rv * (df / (1.0 - rv * rv)).sqrt(), df)
                } else {
                    f64::NAN
                }
            };
            r[a][b] = Some(rv);
            r[b][a] = Some(rv);
            let pv = (!pv.is_nan()).then_some(pv);
            p[a][b] = pv;
            p[b][a] = pv;
        }
    }
    Ok(CorrelationMatrix {
        variables: vars.to_vec(),
        r,
        p,
        n,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let mx = crate::data::accurate_mean(x);
    let my = crate::data::accurate_mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// ICC block computed from an unconditional fit or supplied components.
///
/// The reported chain rounds each printed quantity before it feeds the next:
/// ICC to three decimals, design effect to two, then effective N from that
/// design effect. The block can therefore be reproduced by hand from its
/// printed values. The `*_unrounded` fields carry the full-precision chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusteringSummary {
    pub tau00: f64,
    pub sigma2: f64,
    pub icc: f64,
    /// `icc` rounded to three decimals.
    pub icc_reported: f64,
    pub mean_cluster_size: f64,
    /// `1 + (n_bar - 1) icc_reported`, rounded to two decimals.
    pub design_effect: f64,
    pub n: f64,
    pub effective_sample_size: EffectiveSampleSize,
    pub design_effect_unrounded: f64,
    pub effective_sample_size_unrounded: EffectiveSampleSize,
}

pub fn clustering_summary(tau00: f64, sigma2: f64, n_bar: f64, n: f64) -> Result<ClusteringSummary, DiagnosticsError> {
    let icc = icc(tau00, sigma2)?;
    let icc_reported = (icc * 1000.0).round() / 1000.0;
    let deff = (design_effect(n_bar, icc_reported)? * 100.0).round() / 100.0;
    let deff_unrounded = design_effect(n_bar, icc)?;
    Ok(ClusteringSummary {
        tau00,
        sigma2,
        icc,
        icc_reported,
        mean_cluster_size: n_bar,
        design_effect: deff,
        n,
        effective_sample_size: effective_sample_size(n, deff)?,
        design_effect_unrounded: deff_unrounded,
        effective_sample_size_unrounded: effective_sample_size(n, deff_unrounded)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub descriptives: Vec<Descriptive>,
    pub correlations: CorrelationMatrix,
    pub clustering: Option<ClusteringSummary>,
    pub variance_explained: Option<VarianceExplained>,
}

//! Chi-square homogeneity tests of the random-effect variances.
//!
//! Each group is fitted by OLS on its own random-effect columns, after
//! removing the fixed level-1 slopes. The statistic for effect `k` sums
//! `(b_kj - predicted_kj)² / V_kj` over groups, with `V_kj` the OLS
//! sampling variance `sigma2 [(Z_j'Z_j)⁻¹]_kk`. The predicted intercept uses
//! the level-2 coefficients; the predicted slope is the fixed slope mean.

use nalgebra::DVector;
use serde::Serialize;

use super::design::{ColumnRole, Design};
use super::{FitError, FitResult, ModelSpec};
use crate::data::Dataset;
use crate::stats::chi_square_upper_p;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceTest {
    pub effect: String,
    pub statistic: f64,
    pub df: f64,
    pub p: f64,
    pub groups_used: usize,
    /// Groups with too few rows (n_j ≤ q) or a singular `Z_j'Z_j`.
    pub groups_excluded: usize,
}

/// Homogeneity tests for every random effect of `fit`, intercept first.
pub fn tau_chi_square_test(
    ds: &Dataset,
    spec: &ModelSpec,
    fit: &FitResult,
) -> Result<Vec<VarianceTest>, FitError> {
    let design = Design::build(spec, ds)?;
    tests_for_design(&design, fit)
}

pub(crate) fn tests_for_design(design: &Design, fit: &FitResult) -> Result<Vec<VarianceTest>, FitError> {
    let q = design.q();
    let gamma: Vec<f64> = fit.fixed.iter().map(|f| f.gamma_hat).collect();
    if gamma.len() != design.p() {
        return Err(FitError::Data("fit does not match the model".into()));
    }
    let sigma2 = fit.vc.sigma2;
    let s = design.n_level2() as f64;
    let fixed_cols: Vec<usize> = design
        .roles
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == ColumnRole::Level1 { random: false })
        .map(|(i, _)| i)
        .collect();
    let level2_cols: Vec<usize> = design
        .roles
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == ColumnRole::Level2)
        .map(|(i, _)| i)
        .collect();

    let mut stat = vec![0.0; q];
    let mut used = 0usize;
    for g in &design.groups {
        let n = g.y.len();
        if n <= q {
            continue;
        }
        let Some(ztz_inv) = g.z.tr_mul(&g.z).try_inverse() else {
            continue;
        };
        let mut y = g.y.clone();
        for &c in &fixed_cols {
            y -= g.x.column(c) * gamma[c];
        }
        let b: DVector<f64> = &ztz_inv * g.z.tr_mul(&y);
        for k in 0..q {
            let col = design.random_cols[k];
            let predicted = if k == 0 {
                gamma[0] + level2_cols.iter().map(|&c| gamma[c] * g.x[(0, c)]).sum::<f64>()
            } else {
                gamma[col]
            };
            let v = sigma2 * ztz_inv[(k, k)];
            stat[k] += (b[k] - predicted).powi(2) / v;
        }
        used += 1;
    }

    let excluded = design.n_groups() - used;
    (0..q)
        .map(|k| {
            let df = if k == 0 {
                used as f64 - s - 1.0
            } else {
                used as f64 - 1.0
            };
            let effect = design.random_names[k].clone();
            if df <= 0.0 {
                return Err(FitError::DfNonPositive { effect, df: df as i64 });
            }
            Ok(VarianceTest {
                effect,
                statistic: stat[k],
                df,
                p: chi_square_upper_p(stat[k], df),
                groups_used: used,
                groups_excluded: excluded,
            })
        })
        .collect()
}

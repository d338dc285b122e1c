//! Synthetic two-level data with known parameters, and the closed-form
//! balanced-design oracle.
//!
//! The generator is ChaCha8 seeded with `seed_from_u64`, and normals come
//! from `rand_distr::StandardNormal`. Draws happen in a fixed order. For each
//! group: level-2 predictors in declaration order, then the `q` standard
//! normals behind `u_j`. Then, for each member: level-1 predictors in
//! declaration order, then the residual.
//!
//! Level-1 predictors enter the outcome, and their random slopes, as
//! deviations from their generator mean. Level-2 predictors enter as drawn.

mod config;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use config::{GroupSizes, Level1Generator, Level2Distribution, Level2Generator, SimConfig, SimError};

use crate::data::{Column, Dataset};
use crate::estimator::psd_sqrt;

/// Draws one dataset from `cfg`. Identical configs give bit-identical
/// datasets.
pub fn simulate(cfg: &SimConfig) -> Result<Dataset, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let q = cfg.n_random();
    let root = psd_sqrt(&nalgebra::DMatrix::from_fn(q, q, |i, j| cfg.tau[i][j]));
    let sigma = cfg.sigma2.sqrt();
    let slope_of: Vec<Option<usize>> = {
        let mut k = 0;
        cfg.level1
            .iter()
            .map(|g| {
                g.random.then(|| {
                    k += 1;
                    k
                })
            })
            .collect()
    };

    let total: usize = (0..cfg.n_groups).map(|j| cfg.group_size(j)).sum();
    let mut cluster = Vec::with_capacity(total);
    let mut y = Vec::with_capacity(total);
    let mut x1: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(total); cfg.level1.len()];
    let mut x2: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(total); cfg.level2.len()];

    for j in 0..cfg.n_groups {
        let w: Vec<f64> = cfg
            .level2
            .iter()
            .map(|g| match g.dist {
                Level2Distribution::Gaussian { mean, sd } => mean + sd * normal(&mut rng),
                Level2Distribution::Categorical { p } => {
                    let v: f64 = rng.random();
                    if v < p[0] {
                        -1.0
                    } else if v < p[0] + p[1] {
                        0.0
                    } else {
                        1.0
                    }
                }
            })
            .collect();
        let e = nalgebra::DVector::from_iterator(q, (0..q).map(|_| normal(&mut rng)));
        let u = &root * e;
        let group_part = cfg.intercept + u[0] + cfg.level2.iter().zip(&w).map(|(g, v)| g.coef * v).sum::<f64>();

        let id = (j + 1).to_string();
        for _ in 0..cfg.group_size(j) {
            let mut value = group_part;
            for (i, g) in cfg.level1.iter().enumerate() {
                let x = g.mean + g.sd * normal(&mut rng);
                let dev = x - g.mean;
                value += g.coef * dev;
                if let Some(k) = slope_of[i] {
                    value += u[k] * dev;
                }
                x1[i].push(Some(x));
            }
            value += sigma * normal(&mut rng);
            y.push(Some(value));
            cluster.push(Some(id.clone()));
            for (col, v) in x2.iter_mut().zip(&w) {
                col.push(Some(*v));
            }
        }
    }

    let mut columns = vec![
        (cfg.cluster.clone(), Column::Text(cluster)),
        (cfg.outcome.clone(), Column::Numeric(y)),
    ];
    columns.extend(cfg.level1.iter().zip(x1).map(|(g, c)| (g.name.clone(), Column::Numeric(c))));
    columns.extend(cfg.level2.iter().zip(x2).map(|(g, c)| (g.name.clone(), Column::Numeric(c))));
    Dataset::new(columns, &cfg.cluster).map_err(|e| SimError::Invalid(e.to_string()))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("anova oracle needs balanced groups")]
    Unbalanced,
    #[error("anova oracle needs at least 2 groups of size ≥ 2")]
    TooSmall,
    #[error("{0}")]
    Data(String),
}

/// ANOVA estimates for balanced intercept-only data: the within-group mean
/// square, and `max(0, (MSB - MSW) / n)`. Returns `(sigma2_hat, tau00_hat)`.
pub fn anova_oracle(ds: &Dataset, outcome: &str) -> Result<(f64, f64), OracleError> {
    let (msw, msb, n) = mean_squares(ds, outcome)?;
    Ok((msw, ((msb - msw) / n).max(0.0)))
}

/// Between-group minus within-group mean square over `n`, before the clamp.
pub fn anova_raw_tau(ds: &Dataset, outcome: &str) -> Result<f64, OracleError> {
    let (msw, msb, n) = mean_squares(ds, outcome)?;
    Ok((msb - msw) / n)
}

fn mean_squares(ds: &Dataset, outcome: &str) -> Result<(f64, f64, f64), OracleError> {
    let y = ds.complete(outcome).map_err(|e| OracleError::Data(e.to_string()))?;
    let index = ds.group_index();
    let groups = index.groups();
    let n = groups.first().map_or(0, |g| g.rows.len());
    if groups.iter().any(|g| g.rows.len() != n) {
        return Err(OracleError::Unbalanced);
    }
    let j = groups.len();
    if j < 2 || n < 2 {
        return Err(OracleError::TooSmall);
    }
    let means: Vec<f64> = groups
        .iter()
        .map(|g| crate::data::accurate_mean(&g.rows.iter().map(|&r| y[r]).collect::<Vec<_>>()))
        .collect();
    let grand = crate::data::accurate_mean(&means);
    let within: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.rows.iter().map(|&r| (y[r] - m).powi(2)).sum::<f64>())
        .sum();
    let between: f64 = means.iter().map(|m| (m - grand).powi(2)).sum();
    let nf = n as f64;
    let msw = within / (j as f64 * (nf - 1.0));
    let msb = nf * between / (j as f64 - 1.0);
    Ok((msw, msb, nf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_groups(values: &[f64], ids: &[&str]) -> Dataset {
        Dataset::new(
            vec![
                ("g".into(), Column::Text(ids.iter().map(|s| Some(s.to_string())).collect())),
                ("y".into(), Column::Numeric(values.iter().map(|v| Some(*v)).collect())),
            ],
            "g",
        )
        .unwrap()
    }

    #[test]
    fn oracle_hand_cases() {
        let ds = two_groups(&[0.0, 0.0, 10.0, 10.0], &["a", "a", "b", "b"]);
        assert_eq!(anova_oracle(&ds, "y").unwrap(), (0.0, 50.0));
        let flat = two_groups(&[3.0; 4], &["a", "a", "b", "b"]);
        assert_eq!(anova_oracle(&flat, "y").unwrap(), (0.0, 0.0));
        // equal group means, within variance 1
        let noise = two_groups(&[-1.0, 1.0, 1.0, -1.0, 0.0, 0.0], &["a", "a", "b", "b", "c", "c"]);
        let (s2, t) = anova_oracle(&noise, "y").unwrap();
        assert!((s2 - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(t, 0.0);
        assert!(anova_raw_tau(&noise, "y").unwrap() < 0.0);
    }

    #[test]
    fn oracle_rejects_unbalanced() {
        let ds = two_groups(&[1.0, 2.0, 3.0], &["a", "a", "b"]);
        assert_eq!(anova_oracle(&ds, "y"), Err(OracleError::Unbalanced));
    }

    #[test]
    fn noiseless_data_is_the_fixed_surface() {
        let mut cfg = SimConfig::model5_preset();
        cfg.tau = vec![vec![0.0]];
        cfg.sigma2 = 0.0;
        cfg.n_groups = 5;
        let ds = simulate(&cfg).unwrap();
        let y = ds.complete("mat").unwrap();
        let cols: Vec<Vec<f64>> = ["mo", "fa", "hp", "stueco", "schlo", "schrc"]
            .iter()
            .map(|c| ds.complete(c).unwrap())
            .collect();
        for r in 0..ds.n_rows() {
            let mut expect = cfg.intercept;
            for (k, g) in cfg.level1.iter().enumerate() {
                expect += g.coef * (cols[k][r] - g.mean);
            }
            for (k, g) in cfg.level2.iter().enumerate() {
                expect += g.coef * cols[3 + k][r];
            }
            assert!((y[r] - expect).abs() <= 1e-12 * expect.abs());
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SimConfig::model5_preset().with_seed(11);
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        assert_ne!(simulate(&cfg).unwrap(), simulate(&cfg.clone().with_seed(12)).unwrap());
    }

    #[test]
    fn shape_follows_config() {
        let mut cfg = SimConfig::intercept_only(3, 1, 0.0, 1.0, 1.0, 4);
        cfg.sizes = GroupSizes::PerGroup(vec![1, 4, 2]);
        let ds = simulate(&cfg).unwrap();
        assert_eq!(ds.n_rows(), 7);
        assert_eq!(ds.group_index().sizes(), vec![1, 4, 2]);
        assert_eq!(ds.names().collect::<Vec<_>>(), vec!["school", "y"]);
    }

    #[test]
    fn categorical_levels_only() {
        let cfg = SimConfig::model5_preset().with_seed(3);
        let ds = simulate(&cfg).unwrap();
        for c in ["stueco", "schlo"] {
            assert!(ds.complete(c).unwrap().iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));
        }
    }

    #[test]
    fn empirical_icc_converges() {
        let cfg = SimConfig::intercept_only(2000, 30, 0.0, 1.0, 3.0, 99);
        let ds = simulate(&cfg).unwrap();
        let (s2, t) = anova_oracle(&ds, "y").unwrap();
        assert!((t / (t + s2) - 0.25).abs() < 0.01);
    }
}

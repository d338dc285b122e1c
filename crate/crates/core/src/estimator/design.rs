use nalgebra::{DMatrix, DVector};

use super::spec::{Centering, ModelSpec};
use super::FitError;
use crate::data::{accurate_mean, DataError, Dataset};

/// Role of each fixed-effect column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ColumnRole {
    Intercept,
    Level1 { random: bool },
    Level2,
}

/// Per-group design blocks.
#[derive(Debug, Clone)]
pub(crate) struct GroupBlock {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Cross-product sufficient statistics of one group.
#[derive(Debug, Clone)]
pub(crate) struct GroupStats {
    pub n: usize,
    pub xtx: DMatrix<f64>,
    pub xtz: DMatrix<f64>,
    pub ztz: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub zty: DVector<f64>,
    pub yty: f64,
}

impl GroupStats {
    fn from_block(b: &GroupBlock) -> Self {
        Self {
            n: b.y.len(),
            xtx: b.x.tr_mul(&b.x),
            xtz: b.x.tr_mul(&b.z),
            ztz: b.z.tr_mul(&b.z),
            xty: b.x.tr_mul(&b.y),
            zty: b.z.tr_mul(&b.y),
            yty: b.y.dot(&b.y),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub fixed_names: Vec<String>,
    pub roles: Vec<ColumnRole>,
    pub random_names: Vec<String>,
    /// Fixed-effect column feeding each random-effect column.
    pub random_cols: Vec<usize>,
    pub groups: Vec<GroupBlock>,
    pub stats: Vec<GroupStats>,
    pub grand_means: Vec<(String, f64)>,
    pub n: usize,
}

fn column_error(e: DataError) -> FitError {
    match e {
        DataError::MissingColumn(c) => FitError::MissingColumn(c),
        DataError::HasMissing { column, count, .. } => FitError::MissingValues { column, count },
        DataError::NotNumeric(c) => FitError::NotNumeric(c),
        other => FitError::Data(other.to_string()),
    }
}

impl Design {
    pub fn build(spec: &ModelSpec, ds: &Dataset) -> Result<Self, FitError> {
        spec.validate()?;

        let y = ds.complete(&spec.outcome).map_err(column_error)?;
        let mut fixed_names = vec!["intercept".to_string()];
        let mut roles = vec![ColumnRole::Intercept];
        let mut columns: Vec<Vec<f64>> = vec![vec![1.0; ds.n_rows()]];
        let mut grand_means = Vec::new();

        for term in &spec.level1 {
            let mut x = ds.complete(&term.name).map_err(column_error)?;
            if term.centering == Centering::Grand {
                let m = accurate_mean(&x);
                x.iter_mut().for_each(|v| *v -= m);
                grand_means.push((term.name.clone(), m));
            }
            fixed_names.push(term.name.clone());
            roles.push(ColumnRole::Level1 {
                random: term.random_slope,
            });
            columns.push(x);
        }

        let index = ds.group_index();
        for name in &spec.level2 {
            let w = ds.complete(name).map_err(column_error)?;
            for g in index.groups() {
                let first = w[g.rows[0]];
                let tol = 1e-9 * first.abs().max(1.0);
                if g.rows.iter().any(|&r| (w[r] - first).abs() > tol) {
                    return Err(FitError::Level2Varies {
                        predictor: name.clone(),
                        group: g.id.clone(),
                    });
                }
            }
            fixed_names.push(name.clone());
            roles.push(ColumnRole::Level2);
            columns.push(w);
        }

        if index.n_groups() < 2 {
            return Err(FitError::TooFewGroups(index.n_groups()));
        }
        let p = columns.len();
        if ds.n_rows() <= p + 2 {
            return Err(FitError::TooFewObservations {
                n: ds.n_rows(),
                p,
            });
        }

        let random_cols: Vec<usize> = roles
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r, ColumnRole::Intercept | ColumnRole::Level1 { random: true }))
            .map(|(i, _)| i)
            .collect();
        let random_names = random_cols.iter().map(|&c| fixed_names[c].clone()).collect();

        let groups: Vec<GroupBlock> = index
            .groups()
            .iter()
            .map(|g| {
                let n = g.rows.len();
                let x = DMatrix::from_fn(n, p, |i, j| columns[j][g.rows[i]]);
                let z = x.select_columns(&random_cols);
                let yv = DVector::from_iterator(n, g.rows.iter().map(|&r| y[r]));
                GroupBlock {
                    x,
                    z,
                    y: yv,
                }
            })
            .collect();
        let stats = groups.iter().map(GroupStats::from_block).collect();

        Ok(Self {
            fixed_names,
            roles,
            random_names,
            random_cols,
            groups,
            stats,
            grand_means,
            n: ds.n_rows(),
        })
    }

    pub fn p(&self) -> usize {
        self.fixed_names.len()
    }

    pub fn q(&self) -> usize {
        self.random_cols.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.y.len()).collect()
    }

    pub fn n_level1(&self) -> usize {
        self.roles
            .iter()
            .filter(|r| matches!(r, ColumnRole::Level1 { .. }))
            .count()
    }

    pub fn n_level2(&self) -> usize {
        self.roles.iter().filter(|r| **r == ColumnRole::Level2).count()
    }
}

//! Two-level hierarchical linear models for clustered survey data.
//!
//! The workflow runs from raw CSV through codebook recoding, listwise
//! deletion and centering, to REML/ML fits, multilevel diagnostics and
//! plausible-value pooling. A seeded simulator generates data with known
//! parameters for checking the estimator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diagnostics;
pub mod estimator;
pub mod plausible;
pub mod recode;
pub mod simulator;
pub mod stats;
mod textspec;

pub use data::{
    build_group_index, grand_mean_center, listwise_delete, load_csv, read_csv, CenteredVariable, Column,
    DataError, Dataset, DeletionReport, Group, GroupIndex, LoadOptions,
};
pub use estimator::{
    fit, fit_random_slopes, gls_fixed_effects, reliability, tau_chi_square_test, FitError, FitResult,
    FixedEffect, ModelSpec, VarianceComponents,
};
pub use diagnostics::{
    correlations, descriptives, design_effect, effective_sample_size, icc, variance_explained, DiagnosticsReport,
};
pub use plausible::{fit_pooled, rubin_pool, PlausibleValueSet, PooledResult};
pub use recode::{apply_codebook, Codebook};
pub use simulator::{anova_oracle, simulate, SimConfig};

pub use nalgebra;

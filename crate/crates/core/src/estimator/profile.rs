//! Profiled (restricted) log-likelihood of the two-level Gaussian model.
//!
//! The random-effect covariance is written `T = sigma2 * F F'` with `F`
//! lower triangular. For each group, Woodbury reduces
//! `V_j = sigma2 (I + Z_j F F' Z_j')` to the `q x q` matrix
//! `M_j = I + F' Z_j'Z_j F`, so every evaluation works on per-group
//! cross-products only.
//!
//! The unconstrained parameter vector `theta` lists the lower triangle of
//! `F` row by row, `(0,0), (1,0), (1,1), (2,0), ...`, with diagonal entries
//! stored as logarithms.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::design::{Design, GroupStats};
use super::spec::{Method, ModelSpec};
use super::FitError;
use crate::data::Dataset;

/// Lower bound on log-diagonal entries of `F`; variances at this bound are
/// reported as boundary solutions.
pub(crate) const LOG_DIAG_FLOOR: f64 = -14.0;

pub(crate) struct GroupWork {
    /// `F M^{-1} F'`
    k: DMatrix<f64>,
    /// `Z'Z - Z'Z K Z'Z`, equal to `sigma2 Z'V^{-1}Z`
    g: DMatrix<f64>,
    /// `Z'X - Z'Z K Z'X`, equal to `sigma2 Z'V^{-1}X`
    h: DMatrix<f64>,
}

/// Everything computed at one value of `F`.
pub(crate) struct Evaluation {
    pub deviance: f64,
    pub beta: DVector<f64>,
    pub a_inv: DMatrix<f64>,
    /// Residual variance the deviance was evaluated at.
    pub sigma2: f64,
    /// Closed-form maximizer of the criterion in `sigma2` for this `F`.
    pub sigma2_hat: f64,
    work: Vec<GroupWork>,
}

/// Objective for the variance-component optimizer.
pub struct ProfiledLikelihood {
    stats: Vec<GroupStats>,
    n: usize,
    p: usize,
    q: usize,
    method: Method,
}

impl ProfiledLikelihood {
    /// Builds the objective for `spec` on `ds` (which must already be free
    /// of missing model variables).
    pub fn new(spec: &ModelSpec, ds: &Dataset) -> Result<Self, FitError> {
        let design = Design::build(spec, ds)?;
        Ok(Self::from_design(&design, spec.method))
    }

    pub(crate) fn from_design(design: &Design, method: Method) -> Self {
        Self {
            stats: design.stats.clone(),
            n: design.n,
            p: design.p(),
            q: design.q(),
            method,
        }
    }

    pub fn n_params(&self) -> usize {
        self.q * (self.q + 1) / 2
    }

    pub fn method(&self) -> Method {
        self.method
    }

    fn resid_df(&self) -> f64 {
        match self.method {
            Method::Ml => self.n as f64,
            Method::Reml => (self.n - self.p) as f64,
        }
    }

    pub(crate) fn factor(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.q, self.q);
        let mut idx = 0;
        for i in 0..self.q {
            for j in 0..=i {
                f[(i, j)] = if i == j { theta[idx].exp() } else { theta[idx] };
                idx += 1;
            }
        }
        f
    }

    /// Inverse of [`factor`]: `theta` for a lower-triangular `F` with a
    /// positive diagonal. Diagonals are floored at `LOG_DIAG_FLOOR`.
    pub(crate) fn theta_of(&self, f: &DMatrix<f64>) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.n_params());
        for i in 0..self.q {
            for j in 0..=i {
                theta.push(if i == j {
                    f[(i, j)].abs().ln().max(LOG_DIAG_FLOOR)
                } else {
                    f[(i, j)]
                });
            }
        }
        theta
    }

    /// Indices in `theta` that hold log-diagonal entries.
    pub(crate) fn diagonal_indices(&self) -> Vec<usize> {
        (0..self.q).map(|i| i * (i + 1) / 2 + i).collect()
    }

    /// Evaluates at factor `f`, with `sigma2` fixed when given and profiled
    /// out otherwise.
    pub(crate) fn evaluate(
        &self,
        f: &DMatrix<f64>,
        sigma2: Option<f64>,
    ) -> Result<Evaluation, FitError> {
        let (p, q) = (self.p, self.q);
        let mut a = DMatrix::<f64>::zeros(p, p);
        let mut b = DVector::<f64>::zeros(p);
        let mut c = 0.0;
        let mut logdet_m = 0.0;
        let mut work = Vec::with_capacity(self.stats.len());

        for s in &self.stats {
            let mut m = f.tr_mul(&(&s.ztz * f));
            for i in 0..q {
                m[(i, i)] += 1.0;
            }
            let chol = Cholesky::new(m).ok_or(FitError::NumericalFailure(
                "random-effect system is not positive definite",
            ))?;
            logdet_m += 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let k = f * chol.solve(&f.transpose());

            let ztx = s.xtz.transpose();
            let k_ztz = &k * &s.ztz;
            let k_ztx = &k * &ztx;
            let k_zty = &k * &s.zty;

            a += &s.xtx - &s.xtz * &k_ztx;
            b += &s.xty - &s.xtz * &k_zty;
            c += s.yty - s.zty.dot(&k_zty);

            let g = &s.ztz - &s.ztz * &k_ztz;
            let h = &ztx - &s.ztz * &k_ztx;
            work.push(GroupWork { k, g, h });
        }

        let a_chol = Cholesky::new(a.clone()).ok_or(FitError::SingularDesign)?;
        let logdet_a = 2.0 * a_chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !logdet_a.is_finite() {
            return Err(FitError::SingularDesign);
        }
        let beta = a_chol.solve(&b);
        let a_inv = a_chol.inverse();
        let rss = c - b.dot(&beta);
        if !(rss > 0.0) {
            return Err(FitError::NumericalFailure("non-positive residual sum of squares"));
        }

        let df = self.resid_df();
        let sigma2_hat = rss / df;
        let s2 = sigma2.unwrap_or(sigma2_hat);
        let mut deviance = logdet_m + df * (2.0 * std::f64::consts::PI * s2).ln() + rss / s2;
        if self.method == Method::Reml {
            deviance += logdet_a;
        }

        Ok(Evaluation {
            deviance,
            beta,
            a_inv,
            sigma2: s2,
            sigma2_hat,
            work,
        })
    }

    /// `2 sigma2 dl/dT`, the symmetric matrix whose product with `F` is
    /// `dl/dF`.
    fn score_matrix(&self, eval: &Evaluation) -> DMatrix<f64> {
        let q = self.q;
        let mut st = DMatrix::<f64>::zeros(q, q);
        for (s, w) in self.stats.iter().zip(&eval.work) {
            let resid = &s.zty - &s.ztz * (&w.k * &s.zty) - &w.h * &eval.beta;
            st += &resid * resid.transpose() / eval.sigma2 - &w.g;
            if self.method == Method::Reml {
                st += &w.h * &eval.a_inv * w.h.transpose();
            }
        }
        st
    }

    /// Profiled log-likelihood at `theta`.
    pub fn loglik(&self, theta: &[f64]) -> Result<f64, FitError> {
        Ok(-0.5 * self.evaluate(&self.factor(theta), None)?.deviance)
    }

    /// Gradient of the profiled log-likelihood with respect to `theta`.
    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>, FitError> {
        let f = self.factor(theta);
        let eval = self.evaluate(&f, None)?;
        Ok(self.gradient_at(&f, &eval))
    }

    pub(crate) fn gradient_at(&self, f: &DMatrix<f64>, eval: &Evaluation) -> Vec<f64> {
        let dl_df = self.score_matrix(eval) * f;
        let mut grad = Vec::with_capacity(self.n_params());
        for i in 0..self.q {
            for j in 0..=i {
                grad.push(if i == j {
                    dl_df[(i, j)] * f[(i, j)]
                } else {
                    dl_df[(i, j)]
                });
            }
        }
        grad
    }

    /// One EM update of `(T, sigma2)`, returning the new values and the
    /// deviance at the old ones.
    pub(crate) fn em_step(
        &self,
        tau: &DMatrix<f64>,
        sigma2: f64,
    ) -> Result<(DMatrix<f64>, f64, f64), FitError> {
        let q = self.q;
        let f = psd_sqrt(&(tau / sigma2));
        let eval = self.evaluate(&f, Some(sigma2))?;
        let ff = &f * f.transpose();
        let reml = self.method == Method::Reml;

        let mut tau_new = DMatrix::<f64>::zeros(q, q);
        let mut resid_ss = 0.0;
        let mut trace_vinv = 0.0;
        let mut d_sum = DMatrix::<f64>::zeros(self.p, self.p);

        for (s, w) in self.stats.iter().zip(&eval.work) {
            let ztx = s.xtz.transpose();
            let ze = &s.zty - &ztx * &eval.beta;
            let proj = &ze - &s.ztz * (&w.k * &ze);
            let u = &ff * &proj;

            let mut inner = w.g.clone();
            if reml {
                inner -= &w.h * &eval.a_inv * w.h.transpose();
            }
            let cov = (&ff - &ff * inner * &ff) * sigma2;
            tau_new += &u * u.transpose() + cov;

            let ee = s.yty - 2.0 * eval.beta.dot(&s.xty) + eval.beta.dot(&(&s.xtx * &eval.beta));
            resid_ss += ee - 2.0 * u.dot(&ze) + u.dot(&(&s.ztz * &u));
            trace_vinv += s.n as f64 - (&w.k * &s.ztz).trace();
            if reml {
                let k_ztx = &w.k * &ztx;
                d_sum += &s.xtx - 2.0 * (&s.xtz * &k_ztx)
                    + k_ztx.tr_mul(&(&s.ztz * &k_ztx));
            }
        }

        let j = self.stats.len() as f64;
        tau_new /= j;
        tau_new = (&tau_new + tau_new.transpose()) * 0.5;

        // sigma2^2 tr(P), expressed per unit of sigma2
        let mut sigma4_trace_p = sigma2 * trace_vinv;
        if reml {
            sigma4_trace_p -= sigma2 * (&eval.a_inv * d_sum).trace();
        }
        let n = self.n as f64;
        let sigma2_new = (resid_ss + n * sigma2 - sigma4_trace_p) / n;

        Ok((tau_new, sigma2_new, eval.deviance))
    }

    /// Deviance at absolute `(T, sigma2)` without profiling `sigma2`.
    pub(crate) fn deviance_at(&self, tau: &DMatrix<f64>, sigma2: f64) -> Result<f64, FitError> {
        Ok(self.evaluate(&psd_sqrt(&(tau / sigma2)), Some(sigma2))?.deviance)
    }
}

/// Symmetric square root factor `R` with `R R' = A` for PSD `A`; negative
/// eigenvalues from rounding are set to zero.
pub(crate) fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d)
}

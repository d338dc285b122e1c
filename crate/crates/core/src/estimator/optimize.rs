//! Variance-component maximization: EM iterations from a moment start,
//! then projected Newton steps on the unconstrained `theta` with a
//! finite-difference Hessian of the analytic gradient.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::profile::{ProfiledLikelihood, LOG_DIAG_FLOOR};
use super::FitError;

/// Gradient infinity-norm (log-likelihood scale) required at the optimum.
pub(crate) const GRADIENT_TOL: f64 = 1e-6;
const EM_MAX: usize = 50;
const EM_REL_TOL: f64 = 1e-6;
const STEP_TOL: f64 = 1e-6;
/// Gradient norm below which no polishing step is attempted.
const POLISH_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub(crate) struct Optimum {
    pub theta: Vec<f64>,
    pub em_trace: Vec<f64>,
    pub em_iterations: usize,
    pub newton_iterations: usize,
    pub relative_change: f64,
    pub gradient_norm: f64,
}

pub(crate) fn maximize(
    lik: &ProfiledLikelihood,
    tau0: DMatrix<f64>,
    sigma2_0: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Optimum, FitError> {
    let (tau, sigma2, em_trace) = run_em(lik, tau0, sigma2_0, max_iter.saturating_sub(1).min(EM_MAX))?;
    let em_iterations = em_trace.len();

    let q = tau.nrows();
    let mut rel = &tau / sigma2;
    let jitter = 1e-12 * rel.trace().max(1.0);
    for i in 0..q {
        rel[(i, i)] += jitter;
    }
    let f = Cholesky::new(rel)
        .map(|c| c.l())
        .unwrap_or_else(|| DMatrix::identity(q, q) * LOG_DIAG_FLOOR.exp());
    let theta = lik.theta_of(&f);

    let budget = max_iter.saturating_sub(em_iterations).max(1);
    let mut newton = Newton::new(lik, theta)?;
    let outcome = newton.run(tol, budget)?;

    Ok(Optimum {
        theta: newton.theta,
        em_trace,
        em_iterations,
        newton_iterations: newton.iterations,
        relative_change: outcome.relative_change,
        gradient_norm: outcome.gradient_norm,
    })
}

fn run_em(
    lik: &ProfiledLikelihood,
    mut tau: DMatrix<f64>,
    mut sigma2: f64,
    iterations: usize,
) -> Result<(DMatrix<f64>, f64, Vec<f64>), FitError> {
    let mut trace = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let (tau_new, sigma2_new, dev) = lik.em_step(&tau, sigma2)?;
        trace.push(dev);
        if !(sigma2_new > 0.0 && sigma2_new.is_finite()) || tau_new.iter().any(|v| !v.is_finite()) {
            break;
        }
        tau = tau_new;
        sigma2 = sigma2_new;
        if trace.len() >= 2 {
            let prev = trace[trace.len() - 2];
            if ((prev - dev) / dev.abs().max(1.0)).abs() <= EM_REL_TOL {
                break;
            }
        }
    }
    if !trace.is_empty() {
        trace.push(lik.deviance_at(&tau, sigma2)?);
    }
    Ok((tau, sigma2, trace))
}

struct Outcome {
    relative_change: f64,
    gradient_norm: f64,
}

struct Newton<'a> {
    lik: &'a ProfiledLikelihood,
    theta: Vec<f64>,
    value: f64,
    diag: Vec<usize>,
    iterations: usize,
}

impl<'a> Newton<'a> {
    fn new(lik: &'a ProfiledLikelihood, theta: Vec<f64>) -> Result<Self, FitError> {
        let value = lik.loglik(&theta)?;
        Ok(Self {
            lik,
            theta,
            value,
            diag: lik.diagonal_indices(),
            iterations: 0,
        })
    }

    fn at_floor(&self, theta: &[f64], k: usize) -> bool {
        self.diag.contains(&k) && theta[k] <= LOG_DIAG_FLOOR + 1e-12
    }

    fn project(&self, theta: &mut [f64]) {
        for &k in &self.diag {
            theta[k] = theta[k].max(LOG_DIAG_FLOOR);
        }
    }

    /// Indices free to move: those at the floor whose ascent direction
    /// points further down are held fixed.
    fn free_set(&self, theta: &[f64], grad: &[f64]) -> Vec<usize> {
        (0..theta.len())
            .filter(|&k| !(self.at_floor(theta, k) && grad[k] < 0.0))
            .collect()
    }

    fn projected_norm(&self, theta: &[f64], grad: &[f64]) -> f64 {
        self.free_set(theta, grad)
            .iter()
            .map(|&k| grad[k].abs())
            .fold(0.0, f64::max)
    }

    fn run(&mut self, tol: f64, budget: usize) -> Result<Outcome, FitError> {
        let mut last_change = f64::INFINITY;
        let mut last_step = f64::INFINITY;
        loop {
            let grad = self.lik.gradient(&self.theta)?;
            let gnorm = self.projected_norm(&self.theta, &grad);

            if gnorm <= GRADIENT_TOL && last_change <= tol && last_step <= STEP_TOL {
                // one more step while it still shrinks the gradient markedly
                let before = self.theta.clone();
                if self.iterations < budget && gnorm > POLISH_TOL && self.newton_step(&grad, gnorm)? {
                    let g = self.lik.gradient(&self.theta)?;
                    if self.projected_norm(&self.theta, &g) < 0.5 * gnorm {
                        self.iterations += 1;
                        last_step = max_abs_diff(&before, &self.theta);
                        continue;
                    }
                    self.theta = before;
                    self.value = self.lik.loglik(&self.theta)?;
                }
                return Ok(Outcome {
                    relative_change: last_change,
                    gradient_norm: gnorm,
                });
            }
            if self.iterations >= budget {
                return Err(FitError::NotConverged {
                    iterations: self.iterations,
                    relative_change: last_change,
                    gradient_norm: gnorm,
                });
            }
            self.iterations += 1;

            let before = self.value;
            let old = self.theta.clone();
            let moved = self.probe_boundary(&grad)? || self.newton_step(&grad, gnorm)?;
            if !moved {
                // no ascent possible from here
                if gnorm <= GRADIENT_TOL {
                    return Ok(Outcome {
                        relative_change: 0.0,
                        gradient_norm: gnorm,
                    });
                }
                return Err(FitError::NotConverged {
                    iterations: self.iterations,
                    relative_change: last_change,
                    gradient_norm: gnorm,
                });
            }
            last_step = max_abs_diff(&old, &self.theta);
            last_change = ((self.value - before) / before.abs().max(f64::MIN_POSITIVE)).abs();
        }
    }

    /// Jumps shrinking variances straight to the floor when that does not
    /// lower the likelihood.
    fn probe_boundary(&mut self, grad: &[f64]) -> Result<bool, FitError> {
        let mut moved = false;
        for &k in &self.diag.clone() {
            if grad[k] >= 0.0 || self.at_floor(&self.theta, k) {
                continue;
            }
            let mut trial = self.theta.clone();
            trial[k] = LOG_DIAG_FLOOR;
            let v = self.lik.loglik(&trial)?;
            if v >= self.value {
                self.theta = trial;
                self.value = v;
                moved = true;
            }
        }
        Ok(moved)
    }

    fn newton_step(&mut self, grad: &[f64], gnorm: f64) -> Result<bool, FitError> {
        let free = self.free_set(&self.theta, grad);
        if free.is_empty() {
            return Ok(false);
        }
        let m = free.len();
        let g = DVector::from_iterator(m, free.iter().map(|&k| grad[k]));

        // Hessian of the log-likelihood by central differences of the gradient
        let mut hess = DMatrix::<f64>::zeros(m, m);
        for (col, &k) in free.iter().enumerate() {
            let h = 1e-5 * self.theta[k].abs().max(1.0);
            let mut plus = self.theta.clone();
            let mut minus = self.theta.clone();
            plus[k] += h;
            minus[k] -= h;
            let gp = self.lik.gradient(&plus)?;
            let gm = self.lik.gradient(&minus)?;
            for (row, &r) in free.iter().enumerate() {
                hess[(row, col)] = (gp[r] - gm[r]) / (2.0 * h);
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;

        // ascent direction from the negated Hessian, eigenvalues made positive
        let eig = (-hess).symmetric_eigen();
        let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
        let floor = 1e-8 * scale;
        let inv = eig.eigenvalues.map(|v| 1.0 / v.abs().max(floor));
        let newton_dir = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose() * &g;

        if self.line_search(&free, &newton_dir, grad, gnorm)? {
            return Ok(true);
        }
        let steepest = &g / g.amax().max(1e-300);
        self.line_search(&free, &steepest, grad, gnorm)
    }

    /// Projected backtracking. Steps are accepted on the Armijo condition,
    /// or, when the predicted gain is below the resolution of the
    /// log-likelihood, on a halved projected gradient without a loss
    /// beyond rounding.
    fn line_search(&mut self, free: &[usize], dir: &DVector<f64>, grad: &[f64], gnorm: f64) -> Result<bool, FitError> {
        let resolution = 1e-10 * self.value.abs().max(1.0);
        let mut alpha = 1.0;
        for _ in 0..50 {
            let mut trial = self.theta.clone();
            for (i, &k) in free.iter().enumerate() {
                trial[k] += alpha * dir[i];
            }
            self.project(&mut trial);
            let predicted: f64 = (0..trial.len())
                .map(|k| grad[k] * (trial[k] - self.theta[k]))
                .sum();
            if predicted <= 0.0 {
                alpha *= 0.5;
                continue;
            }
            if let Ok(v) = self.lik.loglik(&trial) {
                if v.is_finite() && v >= self.value + 1e-4 * predicted {
                    self.theta = trial;
                    self.value = v;
                    return Ok(true);
                }
                if v.is_finite() && predicted <= resolution && v >= self.value - 0.1 * resolution {
                    let g = self.lik.gradient(&trial)?;
                    if self.projected_norm(&trial, &g) <= 0.5 * gnorm {
                        self.theta = trial;
                        self.value = v;
                        return Ok(true);
                    }
                }
            }
            alpha *= 0.5;
        }
        Ok(false)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

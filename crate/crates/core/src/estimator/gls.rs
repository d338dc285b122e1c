use nalgebra::{Cholesky, DMatrix, DVector};

use super::{FitError, VarianceComponents};

/// Generalized least squares for known variance components, using the
/// dense marginal covariance `V_j = Z_j T Z_j' + sigma2 I` of each group.
///
/// Returns `(Σ X'V⁻¹X)⁻¹ Σ X'V⁻¹y` and `(Σ X'V⁻¹X)⁻¹`.
pub fn gls_fixed_effects(
    vc: &VarianceComponents,
    x_blocks: &[DMatrix<f64>],
    z_blocks: &[DMatrix<f64>],
    y_blocks: &[DVector<f64>],
) -> Result<(DVector<f64>, DMatrix<f64>), FitError> {
    vc.validate()?;
    if x_blocks.len() != z_blocks.len() || x_blocks.len() != y_blocks.len() || x_blocks.is_empty() {
        return Err(FitError::Data("design blocks disagree in number of groups".into()));
    }
    let p = x_blocks[0].ncols();
    let tau = vc.tau_matrix();
    let mut info = DMatrix::<f64>::zeros(p, p);
    let mut score = DVector::<f64>::zeros(p);

    for (j, ((x, z), y)) in x_blocks.iter().zip(z_blocks).zip(y_blocks).enumerate() {
        let n = y.len();
        if x.nrows() != n || z.nrows() != n || x.ncols() != p || z.ncols() != tau.nrows() {
            return Err(FitError::Data(format!("block {j} has inconsistent dimensions")));
        }
        let mut v = z * &tau * z.transpose();
        for i in 0..n {
            v[(i, i)] += vc.sigma2;
        }
        let chol = Cholesky::new(v).ok_or(FitError::SingularCovariance(j))?;
        let vinv_x = chol.solve(x);
        info += x.transpose() * &vinv_x;
        score += vinv_x.transpose() * y;
    }

    let info = (&info + info.transpose()) * 0.5;
    let chol = Cholesky::new(info).ok_or(FitError::SingularDesign)?;
    let cov = chol.inverse();
    Ok((chol.solve(&score), cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    type Blocks = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DVector<f64>>);

    fn blocks() -> Blocks {
        let x = vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 0.0]),
        ];
        let z = x.iter().map(|b| b.columns(0, 1).into_owned()).collect();
        let y = vec![DVector::from_vec(vec![3.0, 1.0]), DVector::from_vec(vec![6.0, 2.5])];
        (x, z, y)
    }

    fn ols(x: &[DMatrix<f64>], y: &[DVector<f64>]) -> DVector<f64> {
        let rows: usize = y.iter().map(|b| b.len()).sum();
        let mut xs = DMatrix::zeros(rows, 2);
        let mut ys = DVector::zeros(rows);
        let mut r = 0;
        for (xb, yb) in x.iter().zip(y) {
            for i in 0..yb.len() {
                xs.set_row(r, &xb.row(i));
                ys[r] = yb[i];
                r += 1;
            }
        }
        (xs.transpose() * &xs).try_inverse().unwrap() * xs.transpose() * ys
    }

    #[test]
    fn zero_tau_is_ols() {
        let (x, z, y) = blocks();
        let vc = VarianceComponents::intercept_only(0.0, 1.0);
        let (b, cov) = gls_fixed_effects(&vc, &x, &z, &y).unwrap();
        let o = ols(&x, &y);
        assert!((b - o).amax() < 1e-12);
        assert!(cov.amax() > 0.0);
    }

    #[test]
    fn matches_dense_whole_system() {
        let (x, z, y) = blocks();
        let vc = VarianceComponents::intercept_only(2.5, 0.7);
        let (b, cov) = gls_fixed_effects(&vc, &x, &z, &y).unwrap();

        // block-diagonal V over all four rows
        let mut v = DMatrix::<f64>::zeros(4, 4);
        for g in 0..2 {
            for i in 0..2 {
                for k in 0..2 {
                    v[(2 * g + i, 2 * g + k)] = 2.5 + if i == k { 0.7 } else { 0.0 };
                }
            }
        }
        let xs = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 1.0, -1.0, 1.0, 2.0, 1.0, 0.0]);
        let ys = DVector::from_vec(vec![3.0, 1.0, 6.0, 2.5]);
        let vi = v.try_inverse().unwrap();
        let info_inv = (xs.transpose() * &vi * &xs).try_inverse().unwrap();
        let dense = &info_inv * xs.transpose() * &vi * ys;
        assert!((b - dense).amax() < 1e-10);
        assert!((cov - info_inv).amax() < 1e-10);
    }

    #[test]
    fn scaling_outcome_scales_estimates() {
        let (x, z, y) = blocks();
        let vc = VarianceComponents::intercept_only(1.3, 0.4);
        let (b, cov) = gls_fixed_effects(&vc, &x, &z, &y).unwrap();
        let c = 3.5;
        let ys: Vec<_> = y.iter().map(|b| b * c).collect();
        let vcs = VarianceComponents::intercept_only(1.3 * c * c, 0.4 * c * c);
        let (bs, covs) = gls_fixed_effects(&vcs, &x, &z, &ys).unwrap();
        assert!((bs - b * c).amax() < 1e-10);
        assert!((covs - cov * (c * c)).amax() < 1e-10);
    }

    #[test]
    fn singular_information_is_an_error() {
        let x = vec![DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])];
        let z = vec![DMatrix::from_element(2, 1, 1.0)];
        let y = vec![DVector::from_vec(vec![1.0, 2.0])];
        let vc = VarianceComponents::intercept_only(1.0, 1.0);
        assert_eq!(gls_fixed_effects(&vc, &x, &z, &y), Err(FitError::SingularDesign));
    }
}

//! Distribution tails and small statistical utilities.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

/// Two-sided p-value of a t statistic. Infinite `df` uses the normal.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    let tail = if df.is_infinite() {
        Normal::standard().sf(t.abs())
    } else {
        match StudentsT::new(0.0, 1.0, df) {
            Ok(d) => d.sf(t.abs()),
            Err(_) => return f64::NAN,
        }
    };
    (2.0 * tail).clamp(0.0, 1.0)
}

/// Upper-tail probability of a chi-square statistic.
pub fn chi_square_upper_p(statistic: f64, df: f64) -> f64 {
    if statistic.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if statistic <= 0.0 {
        return 1.0;
    }
    match ChiSquared::new(df) {
        Ok(d) => d.sf(statistic).clamp(0.0, 1.0),
        Err(_) => f64::NAN,
    }
}

/// Sample mean and unbiased variance. Variance is NaN for fewer than two
/// values.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = crate::data::accurate_mean(values);
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, ss / (n - 1) as f64)
}

/// One-sample Kolmogorov–Smirnov test against Uniform(0, 1).
///
/// Returns the statistic `D` and an asymptotic p-value from the Kolmogorov
/// distribution with Stephens' finite-sample correction.
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            let above = (i + 1) as f64 / nf - x;
            let below = x - i as f64 / nf;
            above.max(below)
        })
        .fold(0.0, f64::max);
    let sqrt_n = nf.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_sf(lambda))
}

/// P(K > lambda) for the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_tail_reference_values() {
        // t = 2.228, df = 10 is the classic 5% two-sided critical value
        assert!((t_two_sided_p(2.228_138_85, 10.0) - 0.05).abs() < 1e-6);
        assert!((t_two_sided_p(1.959_963_985, f64::INFINITY) - 0.05).abs() < 1e-9);
        assert_eq!(t_two_sided_p(0.0, 5.0), 1.0);
        assert!(t_two_sided_p(1.0, 0.0).is_nan());
        assert!(t_two_sided_p(40.0, 100.0) < 1e-60);
    }

    #[test]
    fn chi_square_reference_values() {
        assert!((chi_square_upper_p(3.841_458_82, 1.0) - 0.05).abs() < 1e-8);
        assert!((chi_square_upper_p(18.307_038, 10.0) - 0.05).abs() < 1e-7);
        assert_eq!(chi_square_upper_p(0.0, 3.0), 1.0);
        assert!(chi_square_upper_p(1.0, 0.0).is_nan());
    }

    #[test]
    fn mean_var_small() {
        assert_eq!(mean_var(&[1.0, 2.0, 3.0]), (2.0, 1.0));
        assert!(mean_var(&[4.0]).1.is_nan());
    }

    #[test]
    fn ks_critical_values() {
        // asymptotic 1% point of the Kolmogorov distribution
        assert!((kolmogorov_sf(1.627_624) - 0.01).abs() < 1e-5);
        assert!((kolmogorov_sf(1.358_099) - 0.05).abs() < 1e-5);

        let grid: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let (d, p) = ks_uniform(&grid);
        assert!(d <= 0.0005 + 1e-12);
        assert!(p > 0.99);

        let squeezed: Vec<f64> = grid.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&squeezed).1 < 1e-10);
    }
}

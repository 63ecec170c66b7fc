use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::tensor::{Graph, Var};

/// `x * Phi(x)` with the normal CDF written through `erfc` so the negative
/// tail keeps full relative precision (`1 + erf(x)` cancels to zero there).
///
/// `libm::erfc` is the FreeBSD msun rational approximation, accurate to
/// under one ulp, well inside 1e-12 absolute.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_derivative(x: f64) -> f64 {
    normal_cdf(x) + x * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn gelu(graph: &mut Graph, x: Var) -> Var {
    graph.gelu(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series of erf, summed until terms vanish.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-20 {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        2.0 / PI.sqrt() * sum
    }

    /// Continued fraction for erfc, valid for large positive x.
    fn erfc_cf(x: f64) -> f64 {
        let mut f = 0.0;
        for k in (1..200).rev() {
            f = (k as f64 / 2.0) / (x + f);
        }
        (-x * x).exp() / PI.sqrt() / (x + f)
    }

    #[test]
    fn gelu_at_zero() {
        assert_eq!(gelu_scalar(0.0), 0.0);
    }

    #[test]
    fn gelu_at_one_matches_series_oracle() {
        let oracle = 0.5 * (1.0 + erf_series(FRAC_1_SQRT_2));
        assert!((gelu_scalar(1.0) - oracle).abs() < 1e-12);
        assert!((gelu_scalar(1.0) - 0.841344746).abs() < 1e-9);
    }

    #[test]
    fn gelu_far_tail_matches_cf_oracle() {
        let x = -10.0;
        let oracle = x * 0.5 * erfc_cf(10.0 * FRAC_1_SQRT_2);
        let got = gelu_scalar(x);
        assert!(((got - oracle) / oracle).abs() < 1e-10, "{got} vs {oracle}");
        assert!((got - -7.62e-23).abs() < 0.01e-23);
    }

    #[test]
    fn erf_accuracy_over_grid() {
        for i in -250..=250 {
            let x = i as f64 / 100.0;
            let got = 1.0 - libm::erfc(x);
            assert!((got - erf_series(x)).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn gelu_two_exceeds_one() {
        // x * Phi(x) is unbounded above; gelu(2) ~ 1.9545.
        assert!((gelu_scalar(2.0) - 1.954_499_736_1).abs() < 1e-9);
    }
}

//! Expected improvement for minimization.

use statrs::function::erf::erfc;

use super::gp::GpState;

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `E[max(incumbent − Y, 0)]` for `Y ~ N(mean, std_dev²)`.
pub fn expected_improvement_from(mean: f64, std_dev: f64, incumbent: f64) -> f64 {
    let gain = incumbent - mean;
    if !(std_dev > 0.0) {
        return gain.max(0.0);
    }
    let z = gain / std_dev;
    (gain * normal_cdf(z) + std_dev * normal_pdf(z)).max(0.0)
}

/// Expected improvement of the posterior at a raw `(R, θ)` candidate.
pub fn expected_improvement(gp: &GpState, candidate: [f64; 2], incumbent: f64) -> f64 {
    let p = gp.predict(candidate);
    expected_improvement_from(p.mean, p.std_dev, incumbent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayesopt::gp::{gp_fit, Bounds};
    use proptest::prelude::*;

    #[test]
    fn closed_form_examples() {
        assert_eq!(expected_improvement_from(3.0, 0.0, 3.0), 0.0);
        assert_eq!(expected_improvement_from(2.0, 0.0, 3.0), 1.0);
        assert!((expected_improvement_from(3.0, 1.0, 3.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
    }

    #[test]
    fn matches_numerical_integration() {
        let (m, s, u) = (1.3, 0.7, 1.0);
        let n = 200_000;
        let (lo, hi) = (m - 12.0 * s, m + 12.0 * s);
        let h = (hi - lo) / n as f64;
        let integral: f64 = (0..n)
            .map(|i| {
                let y = lo + (i as f64 + 0.5) * h;
                (u - y).max(0.0) * normal_pdf((y - m) / s) / s * h
            })
            .sum();
        assert!((expected_improvement_from(m, s, u) - integral).abs() < 1e-8);
    }

    #[test]
    fn zero_at_observed_incumbent() {
        let b = Bounds::new([0.0, 0.0], [1.0, 1.0]).unwrap();
        let gp = gp_fit(&[([0.2, 0.2], 1.0), ([0.9, 0.7], 2.0)], &b).unwrap();
        assert!(expected_improvement(&gp, [0.2, 0.2], 1.0) < 1e-3);
        assert!(expected_improvement(&gp, [0.5, 0.9], 1.0) > 0.0);
    }

    proptest! {
        #[test]
        fn nonnegative(m in -1e3..1e3f64, s in 0.0..1e3f64, u in -1e3..1e3f64) {
            prop_assert!(expected_improvement_from(m, s, u) >= 0.0);
        }
    }
}

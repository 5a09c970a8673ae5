//! Textbook one-dimensional Gaussian algebra.

use std::f64::consts::TAU;

pub fn pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-d * d / (2.0 * var)).exp() / (TAU * var).sqrt()
}

pub fn log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (TAU * var).ln() - d * d / (2.0 * var)
}

/// Conjugate-Gaussian posterior for the model
///   x ~ N(prior_mean, prior_var),  y | x ~ N(coeff * x, obs_var).
///
/// Returns the posterior mean and variance of x given the observation.
pub fn posterior(
    prior_mean: f64,
    prior_var: f64,
    coeff: f64,
    obs_var: f64,
    obs: f64,
) -> (f64, f64) {
    assert!(prior_var > 0.0 && obs_var > 0.0);
    let precision = 1.0 / prior_var + coeff * coeff / obs_var;
    let var = 1.0 / precision;
    let mean = var * (prior_mean / prior_var + coeff * obs / obs_var);
    (mean, var)
}

/// KL(N(m1, v1) || N(m2, v2)) by Simpson quadrature of the defining
/// integral, over m1 +- 15 sigma1 (tails beyond contribute < 1e-40).
pub fn kl_quadrature(m1: f64, v1: f64, m2: f64, v2: f64, intervals: usize) -> f64 {
    assert!(intervals >= 2 && intervals % 2 == 0);
    let s1 = v1.sqrt();
    let (a, b) = (m1 - 15.0 * s1, m1 + 15.0 * s1);
    let h = (b - a) / intervals as f64;
    let integrand = |x: f64| {
        let p = pdf(x, m1, v1);
        if p <= 0.0 {
            0.0
        } else {
            p * (log_pdf(x, m1, v1) - log_pdf(x, m2, v2))
        }
    };
    let mut acc = integrand(a) + integrand(b);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Closed-form KL between diagonal Gaussians, dimension by dimension.
pub fn kl_closed_form(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    0.5 * (v1 / v2 + (m1 - m2) * (m1 - m2) / v2 - 1.0 + (v2 / v1).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_prior_limit_recovers_observation() {
        let (m, _v) = posterior(0.0, 1e12, 2.0, 0.5, 6.0);
        assert!((m - 3.0).abs() < 1e-9, "m = {m}");
    }

    #[test]
    fn posterior_variance_never_exceeds_either_source() {
        let (_, v) = posterior(1.0, 0.4, 0.9, 0.3, 0.7);
        assert!(v <= 0.4 * (1.0 + 1e-12));
        assert!(v <= 0.3 / (0.9 * 0.9) * (1.0 + 1e-12));
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let cases = [
            (0.0, 1.0, 0.0, 1.0),
            (0.5, 0.2, -0.3, 0.7),
            (2.0, 1.5, 1.0, 0.1),
        ];
        for (m1, v1, m2, v2) in cases {
            let q = kl_quadrature(m1, v1, m2, v2, 20_000);
            let c = kl_closed_form(m1, v1, m2, v2);
            assert!((q - c).abs() < 1e-9, "{q} vs {c}");
        }
    }

    #[test]
    fn identical_gaussians_have_zero_kl() {
        assert!(kl_quadrature(0.3, 0.8, 0.3, 0.8, 2_000).abs() < 1e-12);
    }
}

//! Monte-Carlo moment estimation with standard-error bands.

/// Sample moments of a scalar stream.
#[derive(Debug, Clone, Copy)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
}

impl Moments {
    /// Standard error of the sample mean.
    pub fn se_mean(&self) -> f64 {
        (self.var / self.n as f64).sqrt()
    }

    /// Approximate standard error of the sample variance (normal
    /// theory: var * sqrt(2 / (n - 1))).
    pub fn se_var(&self) -> f64 {
        self.var * (2.0 / (self.n as f64 - 1.0)).sqrt()
    }

    /// Whether the sample mean lies within `k` standard errors of the
    /// target.
    pub fn mean_within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se_mean().max(1e-300)
    }

    pub fn var_within(&self, target: f64, k: f64) -> bool {
        (self.var - target).abs() <= k * self.se_var().max(1e-300)
    }
}

/// Draws `n` samples from `sampler` and reports moments. The variance
/// is the population variance of the sample, computed in two passes so
/// a constant stream yields exactly zero.
pub fn moments(n: usize, mut sampler: impl FnMut() -> f64) -> Moments {
    assert!(n >= 2);
    let samples: Vec<f64> = (0..n).map(|_| sampler()).collect();
    if samples.iter().all(|&x| x == samples[0]) {
        return Moments {
            n,
            mean: samples[0],
            var: 0.0,
        };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    Moments { n, mean, var }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::OracleRng;

    #[test]
    fn standard_normal_within_clt_band() {
        let mut rng = OracleRng::new(17);
        let m = moments(100_000, || rng.normal());
        assert!(m.mean_within(0.0, 3.0), "mean {} se {}", m.mean, m.se_mean());
        assert!(m.var_within(1.0, 3.0), "var {}", m.var);
    }

    #[test]
    fn constant_sampler_has_zero_variance() {
        let m = moments(10_000, || 4.2);
        assert_eq!(m.var, 0.0);
        assert_eq!(m.mean, 4.2);
    }
}

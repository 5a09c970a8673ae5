//! Numeric Jacobians and log-determinants for invertible-map checks.

/// Jacobian of `f: R^d -> R^d` at `x` by central differences.
pub fn numeric(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut jac = vec![vec![0.0; d]; d];
    let mut work = x.to_vec();
    for j in 0..d {
        let orig = work[j];
        work[j] = orig + h;
        let up = f(&work);
        work[j] = orig - h;
        let down = f(&work);
        work[j] = orig;
        for i in 0..d {
            jac[i][j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

/// ln |det M| by LU decomposition with partial pivoting.
pub fn log_abs_det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut log_det = 0.0;
    for k in 0..n {
        let mut pivot = k;
        for i in (k + 1)..n {
            if m[i][k].abs() > m[pivot][k].abs() {
                pivot = i;
            }
        }
        if m[pivot][k] == 0.0 {
            return f64::NEG_INFINITY;
        }
        m.swap(k, pivot);
        log_det += m[k][k].abs().ln();
        for i in (k + 1)..n {
            let factor = m[i][k] / m[k][k];
            for j in k..n {
                m[i][j] -= factor * m[k][j];
            }
        }
    }
    log_det
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_jacobian() {
        // f(x) = [2x0 + x1, 3x1]
        let f = |x: &[f64]| vec![2.0 * x[0] + x[1], 3.0 * x[1]];
        let j = numeric(f, &[0.3, -0.6], 1e-6);
        assert!((j[0][0] - 2.0).abs() < 1e-8);
        assert!((j[0][1] - 1.0).abs() < 1e-8);
        assert!((j[1][0]).abs() < 1e-8);
        assert!((j[1][1] - 3.0).abs() < 1e-8);
        // det = 6
        assert!((log_abs_det(j) - 6f64.ln()).abs() < 1e-7);
    }
}

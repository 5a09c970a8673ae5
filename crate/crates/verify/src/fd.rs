//! Central finite differences over a flat parameter vector.

/// Gradient of `f` at `x` by central differences with step `h`.
pub fn gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + h;
        let up = f(&work);
        work[i] = orig - h;
        let down = f(&work);
        work[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let g = gradient(f, &[1.0, -2.0, 3.0], 1e-5);
        for (got, want) in g.iter().zip([2.0, -4.0, 6.0]) {
            assert!((got - want).abs() < 1e-8);
        }
    }
}

//! Scalar Jensen-Shannon divergence between explicit histograms.

/// JSD between two normalized histograms in nats, with the
/// 0 * ln 0 = 0 convention.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&pa, &pb)| {
                if pa <= 0.0 {
                    0.0
                } else {
                    let m = 0.5 * (pa + pb);
                    pa * (pa / m).ln()
                }
            })
            .sum()
    };
    0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero() {
        assert_eq!(jsd(&[0.25, 0.75], &[0.25, 0.75]), 0.0);
    }

    #[test]
    fn disjoint_support_is_ln2() {
        let v = jsd(&[1.0, 0.0], &[0.0, 1.0]);
        assert!((v - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_bin_hand_value() {
        // p = (0.5, 0.5), q = (1, 0); m = (0.75, 0.25)
        // JSD = 0.5*(0.5 ln(2/3) + 0.5 ln 2) + 0.5*(1 ln(4/3))
        let expect = 0.5 * (0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln())
            + 0.5 * (1.0 * (1.0f64 / 0.75).ln());
        assert!((jsd(&[0.5, 0.5], &[1.0, 0.0]) - expect).abs() < 1e-15);
    }
}

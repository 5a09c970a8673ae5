//! Exhaustive minimum-cost bijection between equal-size point sets.

fn euclid(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Minimum over all |X|! bijections of the mean Euclidean matching
/// cost, with the minimizing permutation (index i of X maps to
/// `perm[i]` of Y). Capped at 8 points.
pub fn brute_force_assignment(xs: &[[f64; 3]], ys: &[[f64; 3]]) -> (f64, Vec<usize>) {
    assert_eq!(xs.len(), ys.len(), "assignment needs equal sizes");
    assert!(xs.len() <= 8, "factorial enumeration capped at 8 points");
    assert!(!xs.is_empty());

    let n = xs.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best_perm = perm.clone();
    let mut best = mean_cost(xs, ys, &perm);

    // Heap's algorithm over all permutations.
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let cost = mean_cost(xs, ys, &perm);
            if cost < best {
                best = cost;
                best_perm = perm.clone();
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    (best, best_perm)
}

fn mean_cost(xs: &[[f64; 3]], ys: &[[f64; 3]], perm: &[usize]) -> f64 {
    let total: f64 = xs
        .iter()
        .zip(perm)
        .map(|(x, &j)| euclid(x, &ys[j]))
        .sum();
    total / xs.len() as f64
}

/// Mean cost of one explicit bijection, for optimality bounds.
pub fn matching_cost(xs: &[[f64; 3]], ys: &[[f64; 3]], perm: &[usize]) -> f64 {
    mean_cost(xs, ys, perm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair() {
        let (cost, perm) = brute_force_assignment(&[[0.0; 3]], &[[3.0, 4.0, 0.0]]);
        assert_eq!(cost, 5.0);
        assert_eq!(perm, vec![0]);
    }

    #[test]
    fn identity_beats_swap() {
        let xs = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let ys = [[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        let (cost, perm) = brute_force_assignment(&xs, &ys);
        assert!((cost - 1.0).abs() < 1e-15);
        assert_eq!(perm, vec![0, 1]);
        // the swapped matching costs sqrt(2)
        assert!((matching_cost(&xs, &ys, &[1, 0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}

//! Plain double-loop set-distance metrics, written directly from the
//! definitions.

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Symmetric Chamfer distance: mean of squared nearest-neighbor
/// distances in both directions.
pub fn chamfer_direct(xs: &[[f64; 3]], ys: &[[f64; 3]]) -> f64 {
    let one_way = |from: &[[f64; 3]], to: &[[f64; 3]]| -> f64 {
        let total: f64 = from
            .iter()
            .map(|p| {
                to.iter()
                    .map(|q| sq_dist(p, q))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / from.len() as f64
    };
    one_way(xs, ys) + one_way(ys, xs)
}

/// Mean over the reference set of the minimum distance to any
/// generated element, for an arbitrary distance `d`.
pub fn mmd_direct<T>(gen: &[T], reference: &[T], d: impl Fn(&T, &T) -> f64) -> f64 {
    let total: f64 = reference
        .iter()
        .map(|y| {
            gen.iter()
                .map(|x| d(x, y))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / reference.len() as f64
}

/// Fraction of the reference set hit by some generated element's
/// nearest-reference argmin (first index on ties).
pub fn coverage_direct<T>(gen: &[T], reference: &[T], d: impl Fn(&T, &T) -> f64) -> f64 {
    let mut hit = vec![false; reference.len()];
    for x in gen {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, y) in reference.iter().enumerate() {
            let dist = d(x, y);
            if dist < best_d {
                best_d = dist;
                best = j;
            }
        }
        hit[best] = true;
    }
    hit.iter().filter(|&&h| h).count() as f64 / reference.len() as f64
}

/// Leave-one-out 1-NN two-sample classification accuracy over the
/// pooled set (generated first, then reference); ties to first index.
pub fn one_nna_direct<T>(gen: &[T], reference: &[T], d: impl Fn(&T, &T) -> f64) -> f64 {
    let pooled: Vec<&T> = gen.iter().chain(reference.iter()).collect();
    let n_gen = gen.len();
    let mut same_label = 0usize;
    for (i, a) in pooled.iter().enumerate() {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (j, b) in pooled.iter().enumerate() {
            if i == j {
                continue;
            }
            let dist = d(a, b);
            if dist < best_d {
                best_d = dist;
                best = j;
            }
        }
        if (i < n_gen) == (best < n_gen) {
            same_label += 1;
        }
    }
    same_label as f64 / pooled.len() as f64
}

//! Evaluation metrics for reconstruction (CD, EMD) and generation
//! (MMD, COV, 1-NNA, JSD), plus the bounding-box normalization applied
//! before set-level evaluation.
//!
//! All metrics are pure; pairwise distance matrices are computed in
//! parallel across (X, Y) pairs and results do not depend on
//! evaluation order.

use rayon::prelude::*;

use crate::cloud::{distance, squared_distance, PointCloud};
use crate::error::{Error, Result};

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance
/// in both directions, each direction averaged over its own set.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(one_way_sq(x, y) + one_way_sq(y, x))
}

fn one_way_sq(from: &PointCloud, to: &PointCloud) -> f64 {
    let total: f64 = from
        .points()
        .iter()
        .map(|p| {
            to.points()
                .iter()
                .map(|q| squared_distance(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

/// Earth mover's distance: the exact minimum over bijections of the
/// mean Euclidean matching cost, solved by the Hungarian algorithm in
/// O(n^3). Requires equal point counts; there is no approximation
/// fallback.
pub fn emd(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if x.len() != y.len() {
        return Err(Error::SizeMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    let mut cost = vec![0.0; n * n];
    for (i, p) in x.points().iter().enumerate() {
        for (j, q) in y.points().iter().enumerate() {
            cost[i * n + j] = distance(p, q);
        }
    }
    let assignment = hungarian(&cost, n);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok(total / n as f64)
}

/// Exact minimum-cost assignment via shortest augmenting paths with
/// potentials. Returns the column matched to each row.
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-indexed arrays with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // row assigned to column j
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[matched_row[j] - 1] = j - 1;
    }
    row_to_col
}

/// Which base distance a set-level metric uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetDistance {
    Chamfer,
    Emd,
}

impl SetDistance {
    fn apply(self, x: &PointCloud, y: &PointCloud) -> Result<f64> {
        match self {
            SetDistance::Chamfer => chamfer(x, y),
            SetDistance::Emd => emd(x, y),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SetDistance::Chamfer => "cd",
            SetDistance::Emd => "emd",
        }
    }
}

/// Full pairwise distance matrix, `gen` rows by `reference` columns,
/// computed in parallel over pairs.
fn pairwise(gen: &[PointCloud], reference: &[PointCloud], d: SetDistance) -> Result<Vec<f64>> {
    let cols = reference.len();
    (0..gen.len() * cols)
        .into_par_iter()
        .map(|k| d.apply(&gen[k / cols], &reference[k % cols]))
        .collect()
}

/// Minimum matching distance: the mean over the reference set of the
/// distance to its closest generated cloud.
pub fn mmd(gen: &[PointCloud], reference: &[PointCloud], d: SetDistance) -> Result<f64> {
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let m = pairwise(gen, reference, d)?;
    let cols = reference.len();
    let total: f64 = (0..cols)
        .map(|j| {
            (0..gen.len())
                .map(|i| m[i * cols + j])
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / cols as f64)
}

/// Coverage: the fraction of the reference set that is the nearest
/// reference of at least one generated cloud (ties to first index).
pub fn coverage(gen: &[PointCloud], reference: &[PointCloud], d: SetDistance) -> Result<f64> {
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let m = pairwise(gen, reference, d)?;
    let cols = reference.len();
    let mut hit = vec![false; cols];
    for i in 0..gen.len() {
        let row = &m[i * cols..(i + 1) * cols];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v < row[best] {
                best = j;
            }
        }
        hit[best] = true;
    }
    Ok(hit.iter().filter(|&&h| h).count() as f64 / cols as f64)
}

/// Leave-one-out 1-NN two-sample classification accuracy over the
/// pooled set; 0.5 means the sets are indistinguishable. Ties break to
/// the first index.
pub fn one_nna(gen: &[PointCloud], reference: &[PointCloud], d: SetDistance) -> Result<f64> {
    let pooled: Vec<&PointCloud> = gen.iter().chain(reference.iter()).collect();
    let n = pooled.len();
    if n < 2 {
        return Err(Error::DegenerateCloud {
            message: "1-NNA needs at least two pooled samples".into(),
        });
    }
    // symmetric matrix: compute the upper triangle in parallel
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| d.apply(pooled[i], pooled[j]))
        .collect::<Result<_>>()?;
    let mut m = vec![f64::INFINITY; n * n];
    for (&(i, j), &v) in pairs.iter().zip(&vals) {
        m[i * n + j] = v;
        m[j * n + i] = v;
    }
    let n_gen = gen.len();
    let mut same = 0usize;
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if j != i && v < best_d {
                best_d = v;
                best = j;
            }
        }
        if (i < n_gen) == (best < n_gen) {
            same += 1;
        }
    }
    Ok(same as f64 / n as f64)
}

/// Jensen-Shannon divergence between the voxelized marginal point
/// distributions of the two sets, over a grid^3 histogram spanning
/// [-1, 1]^3. Inputs must already satisfy the evaluation-normalization
/// contract; out-of-box points are an error.
pub fn jsd(gen: &[PointCloud], reference: &[PointCloud], grid: usize) -> Result<f64> {
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if grid == 0 {
        return Err(Error::InvalidParam {
            name: "grid",
            message: "must be positive".into(),
        });
    }
    let p = voxel_histogram(gen, grid)?;
    let q = voxel_histogram(reference, grid)?;
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&pa, &pb)| {
                if pa <= 0.0 {
                    0.0
                } else {
                    pa * (pa / (0.5 * (pa + pb))).ln()
                }
            })
            .sum()
    };
    Ok(0.5 * kl_to_mid(&p, &q) + 0.5 * kl_to_mid(&q, &p))
}

fn voxel_histogram(set: &[PointCloud], grid: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0.0f64; grid * grid * grid];
    let mut total = 0.0;
    for cloud in set {
        for p in cloud.points() {
            let mut idx = [0usize; 3];
            for a in 0..3 {
                if !(-1.0..=1.0).contains(&p[a]) {
                    return Err(Error::DegenerateCloud {
                        message: format!(
                            "point coordinate {} outside [-1, 1]; normalize for evaluation first",
                            p[a]
                        ),
                    });
                }
                let bin = ((p[a] + 1.0) / 2.0 * grid as f64).floor() as usize;
                idx[a] = bin.min(grid - 1); // coordinate exactly 1.0
            }
            counts[(idx[0] * grid + idx[1]) * grid + idx[2]] += 1.0;
            total += 1.0;
        }
    }
    for c in &mut counts {
        *c /= total;
    }
    Ok(counts)
}

/// Scales and centers each cloud independently so its axis-aligned
/// bounding box fits [-1, 1]^3 exactly (uniform scale, widest axis
/// spans the full interval).
pub fn normalize_eval(set: &[PointCloud]) -> Result<Vec<PointCloud>> {
    set.iter().map(normalize_eval_cloud).collect()
}

pub fn normalize_eval_cloud(cloud: &PointCloud) -> Result<PointCloud> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in cloud.points() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let max_extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if max_extent <= 0.0 {
        return Err(Error::DegenerateCloud {
            message: "zero extent on every axis".into(),
        });
    }
    let scale = 2.0 / max_extent;
    let center = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    let pts = cloud
        .points()
        .iter()
        .map(|p| {
            [
                (p[0] - center[0]) * scale,
                (p[1] - center[1]) * scale,
                (p[2] - center[2]) * scale,
            ]
        })
        .collect();
    PointCloud::new(pts)
}

/// Metric values for one (generated, reference) pair of sets. `None`
/// means the metric was not requested.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub n_gen: usize,
    pub n_ref: usize,
    pub cd_paired: Option<f64>,
    pub emd_paired: Option<f64>,
    pub mmd_cd: Option<f64>,
    pub mmd_emd: Option<f64>,
    pub cov_cd: Option<f64>,
    pub cov_emd: Option<f64>,
    pub nna_cd: Option<f64>,
    pub nna_emd: Option<f64>,
    pub jsd: Option<f64>,
}

impl MetricsReport {
    pub const TSV_HEADER: &'static str =
        "n_gen\tn_ref\tcd\temd\tmmd_cd\tmmd_emd\tcov_cd\tcov_emd\t1nna_cd\t1nna_emd\tjsd";

    fn cell(v: Option<f64>) -> String {
        match v {
            Some(x) => format!("{x}"),
            None => "NA".into(),
        }
    }

    /// Single machine-readable line; columns follow `TSV_HEADER`.
    pub fn to_tsv_line(&self) -> String {
        [
            self.n_gen.to_string(),
            self.n_ref.to_string(),
            Self::cell(self.cd_paired),
            Self::cell(self.emd_paired),
            Self::cell(self.mmd_cd),
            Self::cell(self.mmd_emd),
            Self::cell(self.cov_cd),
            Self::cell(self.cov_emd),
            Self::cell(self.nna_cd),
            Self::cell(self.nna_emd),
            Self::cell(self.jsd),
        ]
        .join("\t")
    }

    /// Human-readable key=value block, one metric per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n_gen={}\n", self.n_gen));
        out.push_str(&format!("n_ref={}\n", self.n_ref));
        let rows = [
            ("cd", self.cd_paired),
            ("emd", self.emd_paired),
            ("mmd_cd", self.mmd_cd),
            ("mmd_emd", self.mmd_emd),
            ("cov_cd", self.cov_cd),
            ("cov_emd", self.cov_emd),
            ("1nna_cd", self.nna_cd),
            ("1nna_emd", self.nna_emd),
            ("jsd", self.jsd),
        ];
        for (k, v) in rows {
            if let Some(x) = v {
                out.push_str(&format!("{k}={x}\n"));
            }
        }
        out
    }
}

/// Mean distance over index-aligned pairs (reconstruction-style
/// evaluation; requires equal set sizes).
pub fn paired_mean(
    gen: &[PointCloud],
    reference: &[PointCloud],
    d: SetDistance,
) -> Result<f64> {
    if gen.len() != reference.len() {
        return Err(Error::SizeMismatch {
            left: gen.len(),
            right: reference.len(),
        });
    }
    if gen.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let vals: Vec<f64> = gen
        .par_iter()
        .zip(reference.par_iter())
        .map(|(x, y)| d.apply(x, y))
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn chamfer_identical_is_zero() {
        let x = cloud(&[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]);
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_single_points() {
        let x = cloud(&[[0.0, 0.0, 0.0]]);
        let y = cloud(&[[3.0, 4.0, 0.0]]);
        assert_eq!(chamfer(&x, &y).unwrap(), 50.0);
    }

    #[test]
    fn chamfer_symmetric() {
        let x = cloud(&[[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.2, -0.4, 0.8]]);
        let y = cloud(&[[0.5, 0.5, 0.5], [-1.0, 0.0, 0.25]]);
        assert_eq!(chamfer(&x, &y).unwrap(), chamfer(&y, &x).unwrap());
    }

    #[test]
    fn emd_identity_beats_swap() {
        let x = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let y = cloud(&[[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
        assert!((emd(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn emd_rejects_size_mismatch() {
        let x = cloud(&[[0.0; 3]]);
        let y = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(matches!(
            emd(&x, &y),
            Err(Error::SizeMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn mmd_single_candidate_average() {
        let a = cloud(&[[0.0; 3]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        let c = cloud(&[[0.0, 2.0, 0.0]]);
        let got = mmd(&[a.clone()], &[b.clone(), c.clone()], SetDistance::Chamfer).unwrap();
        let expect = (chamfer(&a, &b).unwrap() + chamfer(&a, &c).unwrap()) / 2.0;
        assert_eq!(got, expect);
    }

    #[test]
    fn coverage_identity_and_collapse() {
        let set: Vec<PointCloud> = (0..4)
            .map(|i| cloud(&[[i as f64, 0.0, 0.0]]))
            .collect();
        assert_eq!(coverage(&set, &set, SetDistance::Chamfer).unwrap(), 1.0);

        // all generated nearest to the same reference
        let gen: Vec<PointCloud> = (0..4).map(|_| cloud(&[[0.0, 0.1, 0.0]])).collect();
        assert_eq!(
            coverage(&gen, &set, SetDistance::Chamfer).unwrap(),
            1.0 / 4.0
        );
    }

    #[test]
    fn one_nna_separated_and_duplicate() {
        let gen: Vec<PointCloud> = (0..3).map(|i| cloud(&[[i as f64 * 0.1, 0.0, 0.0]])).collect();
        let reference: Vec<PointCloud> =
            (0..3).map(|i| cloud(&[[100.0 + i as f64 * 0.1, 0.0, 0.0]])).collect();
        assert_eq!(one_nna(&gen, &reference, SetDistance::Chamfer).unwrap(), 1.0);

        // duplicate sets: everyone's nearest is its copy in the other set
        assert_eq!(one_nna(&gen, &gen, SetDistance::Chamfer).unwrap(), 0.0);
    }

    #[test]
    fn jsd_trivial_cases() {
        let a = vec![cloud(&[[0.5, 0.5, 0.5], [-0.5, -0.5, -0.5]])];
        assert_eq!(jsd(&a, &a, 4).unwrap(), 0.0);

        let b = vec![cloud(&[[0.9, 0.9, 0.9]])];
        let c = vec![cloud(&[[-0.9, -0.9, -0.9]])];
        let v = jsd(&b, &c, 2).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn jsd_rejects_out_of_box_points() {
        let a = vec![cloud(&[[1.5, 0.0, 0.0]])];
        assert!(jsd(&a, &a, 4).is_err());
    }

    #[test]
    fn normalize_eval_fits_box() {
        let c = cloud(&[[0.0, 0.0, 0.0], [4.0, 1.0, 1.0]]);
        let n = normalize_eval_cloud(&c).unwrap();
        // widest axis (x, extent 4) scaled by 0.5, spans exactly [-1, 1]
        assert_eq!(n.points()[0][0], -1.0);
        assert_eq!(n.points()[1][0], 1.0);
        let max_abs = n
            .points()
            .iter()
            .flatten()
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        assert_eq!(max_abs, 1.0);

        // idempotent
        let n2 = normalize_eval_cloud(&n).unwrap();
        for (p, q) in n.points().iter().zip(n2.points()) {
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalize_eval_rejects_degenerate() {
        let c = cloud(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        assert!(matches!(
            normalize_eval_cloud(&c),
            Err(Error::DegenerateCloud { .. })
        ));
    }

    #[test]
    fn report_tsv_column_count_matches_header() {
        let r = MetricsReport {
            n_gen: 2,
            n_ref: 3,
            mmd_cd: Some(0.5),
            ..Default::default()
        };
        let line = r.to_tsv_line();
        assert_eq!(
            line.split('\t').count(),
            MetricsReport::TSV_HEADER.split('\t').count()
        );
        assert!(line.contains("NA"));
    }
}

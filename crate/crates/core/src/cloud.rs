//! Point clouds: ordered lists of 3-D points.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered list of N points in R^3.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "point cloud coordinates".into(),
            });
        }
        Ok(PointCloud { points })
    }

    /// Builds from an `[N x 3]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 || t.shape()[1] != 3 {
            return Err(Error::ShapeMismatch {
                op: "PointCloud::from_tensor",
                lhs: t.shape().to_vec(),
                rhs: vec![0, 3],
            });
        }
        let points = t
            .data()
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        PointCloud::new(points)
    }

    /// The `[N x 3]` tensor of coordinates.
    pub fn to_tensor(&self) -> Tensor {
        let data: Vec<f64> = self.points.iter().flatten().copied().collect();
        Tensor::from_vec(vec![self.points.len(), 3], data).expect("consistent by construction")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        let n = self.points.len() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Population variance pooled over all 3N coordinates, measured
    /// about the centroid.
    pub fn pooled_variance(&self) -> f64 {
        let c = self.centroid();
        let mut acc = 0.0;
        for p in &self.points {
            for a in 0..3 {
                let d = p[a] - c[a];
                acc += d * d;
            }
        }
        acc / (3.0 * self.points.len() as f64)
    }
}

pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    squared_distance(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(matches!(PointCloud::new(vec![]), Err(Error::EmptyCloud)));
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let c = PointCloud::new(vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let t = c.to_tensor();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(PointCloud::from_tensor(&t).unwrap(), c);
    }

    #[test]
    fn centroid_and_variance() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(c.centroid(), [0.0, 0.0, 0.0]);
        assert!((c.pooled_variance() - 2.0 / 6.0).abs() < 1e-15);
    }
}

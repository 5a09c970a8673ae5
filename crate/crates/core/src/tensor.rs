//! Dense row-major f64 tensors and the arithmetic kernels shared by
//! the autodiff tape and inference-time forward passes.
//!
//! Storage is a flat `Vec<f64>` with an explicit shape; there are no
//! views or strides. Binary elementwise operations broadcast only
//! scalar-against-tensor and equal shapes.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                op: "Tensor::from_vec",
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// A `[1 x d]` row vector.
    pub fn row(values: &[f64]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    pub fn randn(shape: Vec<usize>, rng: &mut Rng) -> Self {
        let mut t = Tensor::zeros(shape);
        rng.fill_normal(&mut t.data);
        t
    }

    /// Uniform in [-limit, limit].
    pub fn rand_uniform(shape: Vec<usize>, limit: f64, rng: &mut Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| (rng.next_f64() * 2.0 - 1.0) * limit)
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Rows and columns of a rank-2 tensor; rank-1 counts as one row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("dims2 on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        let (_, cols) = self.dims2();
        self.data[i * cols + j]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn shapes_equal(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// Binary elementwise op with scalar-or-equal-shape broadcasting.
    pub fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shapes_equal(other) {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            Ok(Tensor {
                shape: self.shape.clone(),
                data,
            })
        } else if other.is_scalar() {
            let b = other.data[0];
            Ok(Tensor {
                shape: self.shape.clone(),
                data: self.data.iter().map(|&a| f(a, b)).collect(),
            })
        } else if self.is_scalar() {
            let a = self.data[0];
            Ok(Tensor {
                shape: other.shape.clone(),
                data: other.data.iter().map(|&b| f(a, b)).collect(),
            })
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            })
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn sum_value(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean_value(&self) -> f64 {
        self.sum_value() / self.data.len() as f64
    }

    /// Matrix product of rank-2 tensors, `[m x k] . [k x n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = other.shape[1];
        let mut out = vec![0.0; m * n];
        // i-k-j order: the inner loop is a contiguous axpy over a row
        // of `other`, which vectorizes.
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (kk, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[kk * n..(kk + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self . other^T` without materializing the transpose:
    /// `[m x n] . [k x n]^T -> [m x k]`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[1] {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let k = other.shape[0];
        let mut out = vec![0.0; m * k];
        for i in 0..m {
            let a_row = &self.data[i * n..(i + 1) * n];
            let o_row = &mut out[i * k..(i + 1) * k];
            for (kk, o) in o_row.iter_mut().enumerate() {
                let b_row = &other.data[kk * n..(kk + 1) * n];
                *o = dot(a_row, b_row);
            }
        }
        Ok(Tensor {
            shape: vec![m, k],
            data: out,
        })
    }

    /// `self^T . other` without materializing the transpose:
    /// `[m x k]^T . [m x n] -> [k x n]`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[0] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul_tn",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = other.shape[1];
        let mut out = vec![0.0; k * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let b_row = &other.data[i * n..(i + 1) * n];
            for (kk, &a) in a_row.iter().enumerate() {
                let o_row = &mut out[kk * n..(kk + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![k, n],
            data: out,
        })
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.rank(),
            });
        }
        Ok(())
    }

    /// (rows, cols, row-major row stride) view of a rank-1/2 tensor for
    /// axis reductions: axis 0 reduces over rows, axis 1 over columns.
    fn reduce_dims(&self, axis: usize) -> Result<(usize, usize)> {
        self.check_axis(axis)?;
        if self.rank() > 2 {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.rank(),
            });
        }
        Ok(self.dims2())
    }

    /// Sum over `axis`; the reduced axis is dropped.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (rows, cols) = self.reduce_dims(axis)?;
        if axis == 0 || self.rank() == 1 {
            let mut out = vec![0.0; cols];
            for i in 0..rows {
                for j in 0..cols {
                    out[j] += self.data[i * cols + j];
                }
            }
            // reducing a 1-D tensor over axis 0 yields a scalar
            if self.rank() == 1 {
                return Ok(Tensor::scalar(out.iter().sum()));
            }
            Ok(Tensor {
                shape: vec![cols],
                data: out,
            })
        } else {
            let mut out = vec![0.0; rows];
            for i in 0..rows {
                out[i] = self.data[i * cols..(i + 1) * cols].iter().sum();
            }
            Ok(Tensor {
                shape: vec![rows],
                data: out,
            })
        }
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let (rows, cols) = self.reduce_dims(axis)?;
        let n = if axis == 0 || self.rank() == 1 { rows.max(1) } else { cols };
        let n = if self.rank() == 1 { self.len() } else { n };
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    /// Max over `axis` plus the flat argmax indices used for gradient
    /// routing. Ties go to the first index.
    pub fn max_axis(&self, axis: usize) -> Result<(Tensor, Vec<usize>)> {
        let (rows, cols) = self.reduce_dims(axis)?;
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyCloud);
        }
        if axis == 0 || self.rank() == 1 {
            if self.rank() == 1 {
                let mut best = 0;
                for i in 1..self.data.len() {
                    if self.data[i] > self.data[best] {
                        best = i;
                    }
                }
                return Ok((Tensor::scalar(self.data[best]), vec![best]));
            }
            let mut out = self.data[..cols].to_vec();
            let mut arg: Vec<usize> = (0..cols).collect();
            for i in 1..rows {
                for j in 0..cols {
                    let v = self.data[i * cols + j];
                    if v > out[j] {
                        out[j] = v;
                        arg[j] = i * cols + j;
                    }
                }
            }
            Ok((
                Tensor {
                    shape: vec![cols],
                    data: out,
                },
                arg,
            ))
        } else {
            let mut out = vec![0.0; rows];
            let mut arg = vec![0usize; rows];
            for i in 0..rows {
                let row = &self.data[i * cols..(i + 1) * cols];
                let mut best = 0;
                for j in 1..cols {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                out[i] = row[best];
                arg[i] = i * cols + best;
            }
            Ok((
                Tensor {
                    shape: vec![rows],
                    data: out,
                },
                arg,
            ))
        }
    }

    /// Column-wise concatenation of rank-2 tensors with equal row count.
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[0] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let rows = self.shape[0];
        let (ca, cb) = (self.shape[1], other.shape[1]);
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for i in 0..rows {
            data.extend_from_slice(&self.data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&other.data[i * cb..(i + 1) * cb]);
        }
        Ok(Tensor {
            shape: vec![rows, ca + cb],
            data,
        })
    }

    /// Tiles a `[1 x d]` row to `[n x d]`.
    pub fn repeat_rows(&self, n: usize) -> Result<Tensor> {
        if self.rank() != 2 || self.shape[0] != 1 {
            return Err(Error::ShapeMismatch {
                op: "repeat_rows",
                lhs: self.shape.clone(),
                rhs: vec![1, self.len()],
            });
        }
        let d = self.shape[1];
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        Ok(Tensor {
            shape: vec![n, d],
            data,
        })
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // eight independent accumulators so the reduction vectorizes
    let mut acc = [0.0f64; 8];
    let split = a.len() - a.len() % 8;
    let (a8, a_tail) = a.split_at(split);
    let (b8, b_tail) = b.split_at(split);
    for (ca, cb) in a8.chunks_exact(8).zip(b8.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut s: f64 = acc.iter().sum();
    for (x, y) in a_tail.iter().zip(b_tail) {
        s += x * y;
    }
    s
}

pub fn softplus(x: f64) -> f64 {
    // max(x, 0) + ln(1 + e^-|x|), stable for large |x|
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(i2.matmul(&a).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_selection_row() {
        let a = Tensor::from_vec(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(vec![2, 1], vec![2.0, 5.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[2.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn transposed_kernels_match_explicit_transpose() {
        let mut rng = Rng::new(1);
        let a = Tensor::randn(vec![3, 4], &mut rng);
        let b = Tensor::randn(vec![5, 4], &mut rng);
        let nt = a.matmul_nt(&b).unwrap();
        // explicit transpose of b
        let mut bt = Tensor::zeros(vec![4, 5]);
        for i in 0..5 {
            for j in 0..4 {
                bt.data_mut()[j * 5 + i] = b.at2(i, j);
            }
        }
        let expect = a.matmul(&bt).unwrap();
        for (x, y) in nt.data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }

        let c = Tensor::randn(vec![3, 6], &mut rng);
        let tn = a.matmul_tn(&c).unwrap();
        let mut at = Tensor::zeros(vec![4, 3]);
        for i in 0..3 {
            for j in 0..4 {
                at.data_mut()[j * 3 + i] = a.at2(i, j);
            }
        }
        let expect = at.matmul(&c).unwrap();
        for (x, y) in tn.data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn reductions() {
        let v = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v.sum_axis(0).unwrap().scalar_value(), 6.0);

        let m = Tensor::from_vec(vec![2, 2], vec![1.0, 5.0, 4.0, 2.0]).unwrap();
        let (mx, arg) = m.max_axis(0).unwrap();
        assert_eq!(mx.data(), &[4.0, 5.0]);
        assert_eq!(arg, vec![2, 1]);

        let rows = m.sum_axis(1).unwrap();
        assert_eq!(rows.data(), &[6.0, 6.0]);
    }

    #[test]
    fn max_ties_take_first_index() {
        let m = Tensor::from_vec(vec![2, 1], vec![7.0, 7.0]).unwrap();
        let (_, arg) = m.max_axis(0).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn invalid_axis_rejected() {
        let v = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            v.sum_axis(2),
            Err(Error::InvalidAxis { axis: 2, rank: 1 })
        ));
    }

    #[test]
    fn scalar_broadcast() {
        let v = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let s = Tensor::scalar(3.0);
        assert_eq!(v.add(&s).unwrap().data(), &[4.0, 5.0]);
        assert_eq!(s.sub(&v).unwrap().data(), &[2.0, 1.0]);
    }

    #[test]
    fn concat_and_repeat() {
        let a = Tensor::from_vec(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = a.concat_cols(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);

        let r = Tensor::row(&[1.0, 2.0]).repeat_rows(3).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn softplus_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}

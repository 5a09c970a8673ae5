//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records one computation graph per training step. Leaves
//! are created with [`Tape::var`] (or [`Tape::constant`] for values
//! that never need gradients); every operation pushes a node whose
//! parents precede it, so the node order is already topological and
//! [`Tape::backward`] is a single reverse sweep. Gradients accumulate
//! across fan-out; running backward twice on one graph is an error so
//! no gradient can silently leak between steps.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus, Tensor};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Softplus(usize),
    Square(usize),
    MatMul(usize, usize),
    SumAxis { src: usize, axis: usize },
    MeanAxis { src: usize, axis: usize },
    MaxAxis { src: usize, argmax: Vec<usize> },
    SumAll(usize),
    MeanAll(usize),
    ConcatCols(usize, usize),
    RepeatRows { src: usize },
    Reshape { src: usize },
    Clamp { src: usize, lo: f64, hi: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

struct TapeInner {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

/// Records one computation graph and its gradients.
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// A handle to a node on a [`Tape`]. Cheap to copy.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                grads: Vec::new(),
                backward_done: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { value, op });
        Var {
            tape: self,
            idx: inner.nodes.len() - 1,
        }
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// A leaf that participates in the graph but whose gradient is
    /// never read (inputs, noise draws, embeddings).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Backpropagates from a scalar loss. Fails on a non-scalar loss
    /// or if this graph already ran backward.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        assert!(std::ptr::eq(loss.tape, self), "loss from a different tape");
        let mut inner = self.inner.borrow_mut();
        if inner.backward_done {
            return Err(Error::BackwardTwice);
        }
        if !inner.nodes[loss.idx].value.is_scalar() {
            return Err(Error::NotScalarLoss {
                shape: inner.nodes[loss.idx].value.shape().to_vec(),
            });
        }
        inner.backward_done = true;

        let TapeInner { nodes, grads, .. } = &mut *inner;
        grads.clear();
        grads.resize(nodes.len(), None);
        grads[loss.idx] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            propagate(nodes, grads, idx, &g)?;
            grads[idx] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the loss with respect to `v`. Zero-filled if `v`
    /// does not influence the loss.
    pub fn grad(&self, v: Var<'_>) -> Result<Tensor> {
        let inner = self.inner.borrow();
        if !inner.backward_done {
            return Err(Error::NoGradient);
        }
        Ok(match &inner.grads[v.idx] {
            Some(g) => g.clone(),
            None => Tensor::zeros(inner.nodes[v.idx].value.shape().to_vec()),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, delta: Tensor) -> Result<()> {
    match &mut grads[idx] {
        Some(g) => {
            *g = g.add(&delta)?;
        }
        slot @ None => *slot = Some(delta),
    }
    Ok(())
}

/// Reduces a gradient to the shape of a broadcast operand: when the
/// operand was a scalar the gradient sums to a scalar.
fn reduce_for(grads_shape_len: usize, operand: &Tensor, g: &Tensor) -> Tensor {
    let _ = grads_shape_len;
    if operand.is_scalar() && !g.is_scalar() {
        Tensor::scalar(g.sum_value())
    } else {
        g.clone()
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Tensor>], idx: usize, g: &Tensor) -> Result<()> {
    match &nodes[idx].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, *a, reduce_for(0, &nodes[*a].value, g))?;
            accumulate(grads, *b, reduce_for(0, &nodes[*b].value, g))?;
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, reduce_for(0, &nodes[*a].value, g))?;
            accumulate(grads, *b, reduce_for(0, &nodes[*b].value, g).scale(-1.0))?;
        }
        Op::Mul(a, b) => {
            let ga = g.mul(&nodes[*b].value)?;
            let gb = g.mul(&nodes[*a].value)?;
            accumulate(grads, *a, reduce_for(0, &nodes[*a].value, &ga))?;
            accumulate(grads, *b, reduce_for(0, &nodes[*b].value, &gb))?;
        }
        Op::Neg(a) => accumulate(grads, *a, g.scale(-1.0))?,
        Op::Exp(a) => accumulate(grads, *a, g.mul(&nodes[idx].value)?)?,
        Op::Log(a) => {
            let inv = nodes[*a].value.map(|v| 1.0 / v);
            accumulate(grads, *a, g.mul(&inv)?)?;
        }
        Op::Tanh(a) => {
            let d = nodes[idx].value.map(|y| 1.0 - y * y);
            accumulate(grads, *a, g.mul(&d)?)?;
        }
        Op::Softplus(a) => {
            let d = nodes[*a].value.map(sigmoid);
            accumulate(grads, *a, g.mul(&d)?)?;
        }
        Op::Square(a) => {
            let d = nodes[*a].value.map(|v| 2.0 * v);
            accumulate(grads, *a, g.mul(&d)?)?;
        }
        Op::MatMul(a, b) => {
            accumulate(grads, *a, g.matmul_nt(&nodes[*b].value)?)?;
            accumulate(grads, *b, nodes[*a].value.matmul_tn(g)?)?;
        }
        Op::SumAxis { src, axis } => {
            accumulate(grads, *src, spread_axis(&nodes[*src].value, g, *axis, 1.0))?;
        }
        Op::MeanAxis { src, axis } => {
            let src_val = &nodes[*src].value;
            let count = axis_len(src_val, *axis);
            accumulate(grads, *src, spread_axis(src_val, g, *axis, 1.0 / count as f64))?;
        }
        Op::MaxAxis { src, argmax } => {
            let mut delta = Tensor::zeros(nodes[*src].value.shape().to_vec());
            for (k, &flat) in argmax.iter().enumerate() {
                delta.data_mut()[flat] += g.data()[k];
            }
            accumulate(grads, *src, delta)?;
        }
        Op::SumAll(a) => {
            let shape = nodes[*a].value.shape().to_vec();
            accumulate(grads, *a, Tensor::filled(shape, g.scalar_value()))?;
        }
        Op::MeanAll(a) => {
            let src_val = &nodes[*a].value;
            let v = g.scalar_value() / src_val.len() as f64;
            accumulate(grads, *a, Tensor::filled(src_val.shape().to_vec(), v))?;
        }
        Op::ConcatCols(a, b) => {
            let (rows, ca) = nodes[*a].value.dims2();
            let cb = nodes[*b].value.dims2().1;
            let mut ga = Tensor::zeros(vec![rows, ca]);
            let mut gb = Tensor::zeros(vec![rows, cb]);
            for i in 0..rows {
                let grow = &g.data()[i * (ca + cb)..(i + 1) * (ca + cb)];
                ga.data_mut()[i * ca..(i + 1) * ca].copy_from_slice(&grow[..ca]);
                gb.data_mut()[i * cb..(i + 1) * cb].copy_from_slice(&grow[ca..]);
            }
            accumulate(grads, *a, ga)?;
            accumulate(grads, *b, gb)?;
        }
        Op::RepeatRows { src } => {
            let d = nodes[*src].value.dims2().1;
            let n = g.dims2().0;
            let mut delta = Tensor::zeros(vec![1, d]);
            for i in 0..n {
                for j in 0..d {
                    delta.data_mut()[j] += g.data()[i * d + j];
                }
            }
            accumulate(grads, *src, delta)?;
        }
        Op::Reshape { src } => {
            let shape = nodes[*src].value.shape().to_vec();
            accumulate(grads, *src, g.reshape(shape)?)?;
        }
        Op::Clamp { src, lo, hi } => {
            let src_val = &nodes[*src].value;
            let mut delta = g.clone();
            for (d, &x) in delta.data_mut().iter_mut().zip(src_val.data()) {
                if x < *lo || x > *hi {
                    *d = 0.0;
                }
            }
            accumulate(grads, *src, delta)?;
        }
    }
    Ok(())
}

fn axis_len(t: &Tensor, axis: usize) -> usize {
    if t.rank() == 1 {
        t.len()
    } else if axis == 0 {
        t.dims2().0
    } else {
        t.dims2().1
    }
}

/// Broadcasts an axis-reduced gradient back over the source shape.
fn spread_axis(src: &Tensor, g: &Tensor, axis: usize, scale: f64) -> Tensor {
    let mut out = Tensor::zeros(src.shape().to_vec());
    if src.rank() == 1 {
        let gv = g.scalar_value() * scale;
        for v in out.data_mut() {
            *v = gv;
        }
        return out;
    }
    let (rows, cols) = src.dims2();
    if axis == 0 {
        for i in 0..rows {
            for j in 0..cols {
                out.data_mut()[i * cols + j] = g.data()[j] * scale;
            }
        }
    } else {
        for i in 0..rows {
            let gv = g.data()[i] * scale;
            for j in 0..cols {
                out.data_mut()[i * cols + j] = gv;
            }
        }
    }
    out
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.idx].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.idx].value.shape().to_vec()
    }

    pub fn scalar_value(&self) -> f64 {
        self.tape.inner.borrow().nodes[self.idx].value.scalar_value()
    }

    fn same_tape(&self, other: Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands from different tapes"
        );
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let v = self.value().add(&other.value())?;
        Ok(self.tape.push(v, Op::Add(self.idx, other.idx)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let v = self.value().sub(&other.value())?;
        Ok(self.tape.push(v, Op::Sub(self.idx, other.idx)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let v = self.value().mul(&other.value())?;
        Ok(self.tape.push(v, Op::Mul(self.idx, other.idx)))
    }

    pub fn neg(self) -> Var<'t> {
        let v = self.value().scale(-1.0);
        self.tape.push(v, Op::Neg(self.idx))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.tape.push(v, Op::Exp(self.idx))
    }

    pub fn log(self) -> Var<'t> {
        let v = self.value().map(f64::ln);
        self.tape.push(v, Op::Log(self.idx))
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.tape.push(v, Op::Tanh(self.idx))
    }

    pub fn softplus(self) -> Var<'t> {
        let v = self.value().map(softplus);
        self.tape.push(v, Op::Softplus(self.idx))
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value().map(|x| x * x);
        self.tape.push(v, Op::Square(self.idx))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let v = self.value().matmul(&other.value())?;
        Ok(self.tape.push(v, Op::MatMul(self.idx, other.idx)))
    }

    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let v = self.value().sum_axis(axis)?;
        Ok(self.tape.push(v, Op::SumAxis { src: self.idx, axis }))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let v = self.value().mean_axis(axis)?;
        Ok(self.tape.push(v, Op::MeanAxis { src: self.idx, axis }))
    }

    /// Max over `axis`; gradient routes to the argmax, first index on
    /// ties.
    pub fn max_axis(self, axis: usize) -> Result<Var<'t>> {
        let (v, argmax) = self.value().max_axis(axis)?;
        Ok(self.tape.push(v, Op::MaxAxis { src: self.idx, argmax }))
    }

    pub fn sum_all(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum_value());
        self.tape.push(v, Op::SumAll(self.idx))
    }

    pub fn mean_all(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().mean_value());
        self.tape.push(v, Op::MeanAll(self.idx))
    }

    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let v = self.value().concat_cols(&other.value())?;
        Ok(self.tape.push(v, Op::ConcatCols(self.idx, other.idx)))
    }

    pub fn repeat_rows(self, n: usize) -> Result<Var<'t>> {
        let v = self.value().repeat_rows(n)?;
        Ok(self.tape.push(v, Op::RepeatRows { src: self.idx }))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.tape.push(v, Op::Reshape { src: self.idx }))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let v = self.value().clamp(lo, hi);
        self.tape.push(v, Op::Clamp { src: self.idx, lo, hi })
    }

    /// Multiplies by a constant scalar.
    pub fn scale(self, c: f64) -> Var<'t> {
        let s = self.tape.scalar(c);
        self.mul(s).expect("scalar broadcast cannot fail")
    }

    /// Adds a constant scalar.
    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let s = self.tape.scalar(c);
        self.add(s).expect("scalar broadcast cannot fail")
    }
}

/// Compares reverse-mode gradients of a scalar-valued function against
/// central finite differences (h = 1e-5) and returns the maximum over
/// all parameter elements of `|g_ad - g_fd| / max(1, |g_fd|)`.
///
/// `f` must be deterministic: it is re-evaluated twice per parameter
/// element, so any stochastic input has to be frozen by the caller.
pub fn check_gradients<F>(f: F, params: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    const H: f64 = 1e-5;

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.var(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        let v = loss.value();
        if !v.is_scalar() {
            return Err(Error::NotScalarLoss {
                shape: v.shape().to_vec(),
            });
        }
        if !v.all_finite() {
            return Err(Error::NonFinite {
                context: "check_gradients objective".into(),
            });
        }
        Ok(v.scalar_value())
    };

    // analytic gradients
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.var(p.clone())).collect();
    let loss = f(&tape, &vars)?;
    if !loss.value().all_finite() {
        return Err(Error::NonFinite {
            context: "check_gradients objective".into(),
        });
    }
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| tape.grad(*v))
        .collect::<Result<_>>()?;

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel: f64 = 0.0;
    for pi in 0..work.len() {
        for e in 0..work[pi].len() {
            let orig = work[pi].data()[e];
            work[pi].data_mut()[e] = orig + H;
            let up = eval(&work)?;
            work[pi].data_mut()[e] = orig - H;
            let down = eval(&work)?;
            work[pi].data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * H);
            let ad = analytic[pi].data()[e];
            let rel = (ad - fd).abs() / fd.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_values() {
        let tape = Tape::new();
        let a = tape.var(Tensor::row(&[1.0, 2.0]));
        let b = tape.var(Tensor::row(&[3.0, 4.0]));
        let c = a.add(b).unwrap();
        assert_eq!(c.value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn log_exp_inverse_pair() {
        let tape = Tape::new();
        let x = tape.var(Tensor::row(&[0.5, -1.2]));
        let y = x.exp().log();
        for (a, b) in y.value().data().iter().zip(x.value().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mul_gradient_is_product_rule() {
        let tape = Tape::new();
        let a = tape.var(Tensor::scalar(2.0));
        let b = tape.var(Tensor::scalar(3.0));
        let c = a.mul(b).unwrap();
        tape.backward(c).unwrap();
        assert_eq!(tape.grad(a).unwrap().scalar_value(), 3.0);
        assert_eq!(tape.grad(b).unwrap().scalar_value(), 2.0);
    }

    #[test]
    fn loss_grad_wrt_itself_is_one() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(5.0));
        let y = x.square();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(y).unwrap().scalar_value(), 1.0);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(1.0));
        let y = x.square();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::BackwardTwice)));
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let x = tape.var(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(Error::NotScalarLoss { .. })
        ));
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        // y = x*x + x => dy/dx = 2x + 1 = 7
        let y = x.mul(x).unwrap().add(x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().scalar_value(), 7.0);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let tape = Tape::new();
        let x = tape.var(Tensor::row(&[1.0, 2.0, 5.0]));
        let y = x.mean_all();
        tape.backward(y).unwrap();
        let g = tape.grad(x).unwrap();
        for v in g.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn max_axis_routes_to_argmax() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_vec(vec![2, 2], vec![1.0, 5.0, 4.0, 2.0]).unwrap());
        let y = x.max_axis(0).unwrap().sum_all();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn quadratic_gradient_check() {
        let x = Tensor::row(&[1.0, -2.0, 3.0]);
        let err = check_gradients(
            |_tape, vars| Ok(vars[0].square().sum_all()),
            std::slice::from_ref(&x),
        )
        .unwrap();
        assert!(err < 1e-6, "max relative error {err}");

        // analytic values
        let tape = Tape::new();
        let v = tape.var(x);
        let y = v.square().sum_all();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(v).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::row(&[0.3, 0.7]);
        let err = check_gradients(
            |tape, _vars| Ok(tape.scalar(42.0)),
            std::slice::from_ref(&x),
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn unused_leaf_grad_is_zeros() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(1.0));
        let unused = tape.var(Tensor::row(&[1.0, 2.0]));
        let y = x.square();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn grad_before_backward_is_error() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(1.0));
        assert!(matches!(tape.grad(x), Err(Error::NoGradient)));
    }
}

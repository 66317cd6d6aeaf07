//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Forward values are computed eagerly as operations are recorded; a backward
//! sweep over the tape then yields exact gradients of a scalar loss with
//! respect to every referenced parameter. Parameter leaves are looked up by
//! name in a borrowed [`ParameterStore`] and deduplicated, so gradients for a
//! parameter used in several places accumulate naturally.
//!
//! Shape mismatches between recorded operands are programmer errors and panic;
//! the network builders in [`crate::diffcore::net`] validate configured
//! dimensions before recording.

use std::collections::HashMap;

use crate::diffcore::store::{GradientStore, ParameterStore};
use crate::diffcore::DiffError;
use crate::scalar::Real;

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Const,
    Param(String),
    /// y = W x with W row-major `[rows, cols]`.
    MatVec { w: usize, x: usize, rows: usize, cols: usize },
    /// y = W^T x with W row-major `[rows, cols]`.
    MatVecT { w: usize, x: usize, rows: usize, cols: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    /// y = s * v with scalar node `s`.
    ScalarMul { s: usize, v: usize },
    Scale { x: usize, c: T },
    Neg { x: usize },
    Relu { x: usize },
    Tanh { x: usize },
    Sigmoid { x: usize },
    Exp { x: usize },
    Concat { parts: Vec<usize> },
    Sum { x: usize },
    Dot { a: usize, b: usize },
    Softmax { x: usize },
    LogSoftmax { x: usize },
    /// y = x[index] as a scalar node.
    Gather { x: usize, index: usize },
    /// Element-wise minimum; ties route the gradient to `a`.
    MinElem { a: usize, b: usize },
}

/// Node payload: op outputs own their buffers, parameter leaves borrow the
/// store's arrays directly.
#[derive(Debug)]
enum Value<'a, T> {
    Owned(Vec<T>),
    Borrowed(&'a [T]),
}

impl<'a, T> Value<'a, T> {
    #[inline]
    fn as_slice(&self) -> &[T] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(s) => s,
        }
    }
}

#[derive(Debug)]
struct Node<'a, T> {
    op: Op<T>,
    value: Value<'a, T>,
    needs_grad: bool,
}

/// Numerically stable softmax (max-subtraction); shared by the tape op and
/// non-differentiating callers. Exponentials that underflow are floored at
/// the smallest positive normal so every output stays strictly positive;
/// the floor is 300 orders of magnitude below the 1e-9 sum tolerance.
pub fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    assert!(!v.is_empty(), "softmax of empty vector");
    let max = v.iter().cloned().fold(T::neg_infinity(), T::max);
    let floor = T::min_positive_value();
    let exps: Vec<T> = v.iter().map(|&x| (x - max).exp().max(floor)).collect();
    let total: T = exps.iter().cloned().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Numerically stable log-softmax.
pub fn log_softmax<T: Real>(v: &[T]) -> Vec<T> {
    assert!(!v.is_empty(), "log_softmax of empty vector");
    let max = v.iter().cloned().fold(T::neg_infinity(), T::max);
    let total: T = v.iter().map(|&x| (x - max).exp()).sum();
    let log_total = total.ln() + max;
    v.iter().map(|&x| x - log_total).collect()
}

/// Dot product with four independent accumulators; breaks the add-latency
/// dependency chain of a naive reduction.
#[inline]
fn dot_slices<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = T::zero();
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

pub struct Tape<'a, T> {
    params: &'a ParameterStore<T>,
    nodes: Vec<Node<'a, T>>,
    param_nodes: HashMap<String, usize>,
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new(params: &'a ParameterStore<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParameterStore<T> {
        self.params
    }

    fn push(&mut self, op: Op<T>, value: Vec<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    #[inline]
    fn val(&self, idx: usize) -> &[T] {
        self.nodes[idx].value.as_slice()
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.as_slice()
    }

    pub fn scalar_value(&self, id: NodeId) -> T {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "node is not a scalar");
        v[0]
    }

    pub fn len(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.as_slice().len()
    }

    pub fn constant(&mut self, values: Vec<T>) -> NodeId {
        self.push(Op::Const, values, false)
    }

    pub fn constant_scalar(&mut self, value: T) -> NodeId {
        self.constant(vec![value])
    }

    /// Leaf bound to a named parameter; repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Result<NodeId, DiffError> {
        if let Some(&idx) = self.param_nodes.get(name) {
            return Ok(NodeId(idx));
        }
        let values = self.params.values(name)?;
        self.nodes.push(Node {
            op: Op::Param(name.to_string()),
            value: Value::Borrowed(values),
            needs_grad: true,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(name.to_string(), id.0);
        Ok(id)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let cols = self.len(x);
        let wlen = self.len(w);
        assert!(
            cols > 0 && wlen % cols == 0,
            "matvec: weight length {wlen} not divisible by input length {cols}"
        );
        let rows = wlen / cols;
        let mut out = vec![T::zero(); rows];
        {
            let wv = self.val(w.0);
            let xv = self.val(x.0);
            for (r, o) in out.iter_mut().enumerate() {
                *o = dot_slices(&wv[r * cols..(r + 1) * cols], xv);
            }
        }
        let needs = self.needs(w) || self.needs(x);
        self.push(
            Op::MatVec {
                w: w.0,
                x: x.0,
                rows,
                cols,
            },
            out,
            needs,
        )
    }

    /// y = W^T x: treats the rows of `w` as input coordinates.
    pub fn matvec_t(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let rows = self.len(x);
        let wlen = self.len(w);
        assert!(
            rows > 0 && wlen % rows == 0,
            "matvec_t: weight length {wlen} not divisible by input length {rows}"
        );
        let cols = wlen / rows;
        let mut out = vec![T::zero(); cols];
        {
            let wv = self.val(w.0);
            let xv = self.val(x.0);
            for r in 0..rows {
                let row = &wv[r * cols..(r + 1) * cols];
                let xr = xv[r];
                for (o, &wi) in out.iter_mut().zip(row) {
                    *o += wi * xr;
                }
            }
        }
        let needs = self.needs(w) || self.needs(x);
        self.push(
            Op::MatVecT {
                w: w.0,
                x: x.0,
                rows,
                cols,
            },
            out,
            needs,
        )
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> NodeId {
        assert_eq!(
            self.len(a),
            self.len(b),
            "element-wise op on mismatched lengths"
        );
        let value: Vec<T> = self
            .val(a.0)
            .iter()
            .zip(self.val(b.0))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(op, value, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn min_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, |x, y| x.min(y), Op::MinElem { a: a.0, b: b.0 })
    }

    pub fn scalar_mul(&mut self, s: NodeId, v: NodeId) -> NodeId {
        assert_eq!(self.len(s), 1, "scalar_mul: scalar operand must have len 1");
        let sv = self.val(s.0)[0];
        let value: Vec<T> = self.val(v.0).iter().map(|&x| x * sv).collect();
        let needs = self.needs(s) || self.needs(v);
        self.push(Op::ScalarMul { s: s.0, v: v.0 }, value, needs)
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let value: Vec<T> = self.val(x.0).iter().map(|&v| v * c).collect();
        let needs = self.needs(x);
        self.push(Op::Scale { x: x.0, c }, value, needs)
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let value: Vec<T> = self.val(x.0).iter().map(|&v| f(v)).collect();
        let needs = self.needs(x);
        self.push(op, value, needs)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| -v, Op::Neg { x: x.0 })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.max(T::zero()), Op::Relu { x: x.0 })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.tanh(), Op::Tanh { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(
            x,
            |v| T::one() / (T::one() + (-v).exp()),
            Op::Sigmoid { x: x.0 },
        )
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.exp(), Op::Exp { x: x.0 })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero parts");
        let mut value = Vec::with_capacity(parts.iter().map(|p| self.len(*p)).sum());
        for p in parts {
            value.extend_from_slice(self.val(p.0));
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
            },
            value,
            needs,
        )
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: T = self.val(x.0).iter().cloned().sum();
        let needs = self.needs(x);
        self.push(Op::Sum { x: x.0 }, vec![total], needs)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.len(a), self.len(b), "dot on mismatched lengths");
        let acc = dot_slices(self.val(a.0), self.val(b.0));
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Dot { a: a.0, b: b.0 }, vec![acc], needs)
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let value = softmax(self.val(x.0));
        let needs = self.needs(x);
        self.push(Op::Softmax { x: x.0 }, value, needs)
    }

    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let value = log_softmax(self.val(x.0));
        let needs = self.needs(x);
        self.push(Op::LogSoftmax { x: x.0 }, value, needs)
    }

    pub fn gather(&mut self, x: NodeId, index: usize) -> NodeId {
        assert!(index < self.len(x), "gather index out of range");
        let value = vec![self.val(x.0)[index]];
        let needs = self.needs(x);
        self.push(Op::Gather { x: x.0, index }, value, needs)
    }

    /// Reverse sweep from a scalar `loss`, accumulating parameter gradients
    /// into `out` (in place, so batch gradients share one buffer per
    /// parameter). Finiteness is the caller's check: [`Tape::backward`] and
    /// the optimizer both run it before the gradients are used.
    pub fn backward_into(
        &self,
        loss: NodeId,
        out: &mut GradientStore<T>,
    ) -> Result<(), DiffError> {
        if self.len(loss) != 1 {
            return Err(DiffError::NonScalarLoss { len: self.len(loss) });
        }
        // A bare parameter as the loss: the gradient is the seed itself.
        if let Op::Param(name) = &self.nodes[loss.0].op {
            out.accumulate(name, &[T::one()]);
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(dout) = grads[i].take() else {
                continue;
            };
            // Split borrows: interior gradients live in `grads` (indices
            // always below `i`), parameter gradients go straight to `out`.
            macro_rules! acc {
                ($idx:expr, $len:expr, $write:expr) => {{
                    let idx: usize = $idx;
                    if self.nodes[idx].needs_grad {
                        if let Op::Param(name) = &self.nodes[idx].op {
                            #[allow(clippy::redundant_closure_call)]
                            ($write)(out.entry_buffer(name, $len));
                        } else {
                            let g = grads[idx].get_or_insert_with(|| vec![T::zero(); $len]);
                            #[allow(clippy::redundant_closure_call)]
                            ($write)(g.as_mut_slice());
                        }
                    }
                }};
            }
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(_) => {}
                Op::MatVec { w, x, rows, cols } => {
                    let xv = self.val(*x);
                    let wv = self.val(*w);
                    acc!(*w, rows * cols, |g: &mut [T]| {
                        for r in 0..*rows {
                            let d = dout[r];
                            let grow = &mut g[r * cols..(r + 1) * cols];
                            for (gi, &xi) in grow.iter_mut().zip(xv) {
                                *gi += xi * d;
                            }
                        }
                    });
                    acc!(*x, *cols, |g: &mut [T]| {
                        for r in 0..*rows {
                            let d = dout[r];
                            let row = &wv[r * cols..(r + 1) * cols];
                            for (gi, &wi) in g.iter_mut().zip(row) {
                                *gi += wi * d;
                            }
                        }
                    });
                }
                Op::MatVecT { w, x, rows, cols } => {
                    let xv = self.val(*x);
                    let wv = self.val(*w);
                    acc!(*w, rows * cols, |g: &mut [T]| {
                        for r in 0..*rows {
                            let xr = xv[r];
                            let grow = &mut g[r * cols..(r + 1) * cols];
                            for (gi, &d) in grow.iter_mut().zip(&dout) {
                                *gi += xr * d;
                            }
                        }
                    });
                    acc!(*x, *rows, |g: &mut [T]| {
                        for r in 0..*rows {
                            g[r] += dot_slices(&wv[r * cols..(r + 1) * cols], &dout);
                        }
                    });
                }
                Op::Add { a, b } => {
                    acc!(*a, dout.len(), |g: &mut [T]| {
                        for (gi, &d) in g.iter_mut().zip(&dout) {
                            *gi += d;
                        }
                    });
                    acc!(*b, dout.len(), |g: &mut [T]| {
                        for (gi, &d) in g.iter_mut().zip(&dout) {
                            *gi += d;
                        }
                    });
                }
                Op::Sub { a, b } => {
                    acc!(*a, dout.len(), |g: &mut [T]| {
                        for (gi, &d) in g.iter_mut().zip(&dout) {
                            *gi += d;
                        }
                    });
                    acc!(*b, dout.len(), |g: &mut [T]| {
                        for (gi, &d) in g.iter_mut().zip(&dout) {
                            *gi -= d;
                        }
                    });
                }
                Op::Mul { a, b } => {
                    let av = self.val(*a);
                    let bv = self.val(*b);
                    acc!(*a, dout.len(), |g: &mut [T]| {
                        for ((gi, &d), &y) in g.iter_mut().zip(&dout).zip(bv) {
                            *gi += y * d;
                        }
                    });
                    acc!(*b, dout.len(), |g: &mut [T]| {
                        for ((gi, &d), &x) in g.iter_mut().zip(&dout).zip(av) {
                            *gi += x * d;
                        }
                    });
                }
                Op::MinElem { a, b } => {
                    let av = self.val(*a);
                    let bv = self.val(*b);
                    acc!(*a, dout.len(), |g: &mut [T]| {
                        for i in 0..dout.len() {
                            if av[i] <= bv[i] {
                                g[i] += dout[i];
                            }
                        }
                    });
                    acc!(*b, dout.len(), |g: &mut [T]| {
                        for i in 0..dout.len() {
                            if av[i] > bv[i] {
                                g[i] += dout[i];
                            }
                        }
                    });
                }
                Op::ScalarMul { s, v } => {
                    let sv = self.val(*s)[0];
                    let vv = self.val(*v);
                    acc!(*s, 1, |g: &mut [T]| {
                        g[0] += dot_slices(&dout, vv);
                    });
                    acc!(*v, dout.len(), |g: &mut [T]| {
                        for (gi, &d) in g.iter_mut().zip(&dout) {
                            *gi += sv * d;
                        }
                    });
                }
                Op::Scale { x, c } => {
                    acc!(*x, dout.len(), |g: &mut [T]| {
                        for (gi, &d) in g.iter_mut().zip(&dout) {
                            *gi += d * *c;
                        }
                    });
                }
                Op::Neg { x } => {
                    acc!(*x, dout.len(), |g: &mut [T]| {
                        for (gi, &d) in g.iter_mut().zip(&dout) {
                            *gi -= d;
                        }
                    });
                }
                Op::Relu { x } => {
                    let xv = self.val(*x);
                    acc!(*x, dout.len(), |g: &mut [T]| {
                        for i in 0..dout.len() {
                            if xv[i] > T::zero() {
                                g[i] += dout[i];
                            }
                        }
                    });
                }
                Op::Tanh { x } => {
                    let yv = self.val(i);
                    acc!(*x, dout.len(), |g: &mut [T]| {
                        for ((gi, &d), &y) in g.iter_mut().zip(&dout).zip(yv) {
                            *gi += d * (T::one() - y * y);
                        }
                    });
                }
                Op::Sigmoid { x } => {
                    let yv = self.val(i);
                    acc!(*x, dout.len(), |g: &mut [T]| {
                        for ((gi, &d), &y) in g.iter_mut().zip(&dout).zip(yv) {
                            *gi += d * y * (T::one() - y);
                        }
                    });
                }
                Op::Exp { x } => {
                    let yv = self.val(i);
                    acc!(*x, dout.len(), |g: &mut [T]| {
                        for ((gi, &d), &y) in g.iter_mut().zip(&dout).zip(yv) {
                            *gi += y * d;
                        }
                    });
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let plen = self.val(p).len();
                        let piece = &dout[offset..offset + plen];
                        acc!(p, plen, |g: &mut [T]| {
                            for (gi, &d) in g.iter_mut().zip(piece) {
                                *gi += d;
                            }
                        });
                        offset += plen;
                    }
                }
                Op::Sum { x } => {
                    let d = dout[0];
                    let xlen = self.val(*x).len();
                    acc!(*x, xlen, |g: &mut [T]| {
                        for gi in g.iter_mut() {
                            *gi += d;
                        }
                    });
                }
                Op::Dot { a, b } => {
                    let d = dout[0];
                    let av = self.val(*a);
                    let bv = self.val(*b);
                    acc!(*a, av.len(), |g: &mut [T]| {
                        for (gi, &y) in g.iter_mut().zip(bv) {
                            *gi += y * d;
                        }
                    });
                    acc!(*b, bv.len(), |g: &mut [T]| {
                        for (gi, &x) in g.iter_mut().zip(av) {
                            *gi += x * d;
                        }
                    });
                }
                Op::Softmax { x } => {
                    // dx = y ∘ (dout − (dout · y))
                    let yv = self.val(i);
                    let dy: T = dot_slices(&dout, yv);
                    acc!(*x, dout.len(), |g: &mut [T]| {
                        for ((gi, &d), &y) in g.iter_mut().zip(&dout).zip(yv) {
                            *gi += y * (d - dy);
                        }
                    });
                }
                Op::LogSoftmax { x } => {
                    // dx = dout − softmax(x) · sum(dout)
                    let yv = self.val(i);
                    let dsum: T = dout.iter().cloned().sum();
                    acc!(*x, dout.len(), |g: &mut [T]| {
                        for ((gi, &d), &ly) in g.iter_mut().zip(&dout).zip(yv) {
                            *gi += d - ly.exp() * dsum;
                        }
                    });
                }
                Op::Gather { x, index } => {
                    let d = dout[0];
                    let xlen = self.val(*x).len();
                    let idx = *index;
                    acc!(*x, xlen, |g: &mut [T]| {
                        g[idx] += d;
                    });
                }
            }
        }
        Ok(())
    }

    /// Convenience wrapper returning a fresh gradient store.
    pub fn backward(&self, loss: NodeId) -> Result<GradientStore<T>, DiffError> {
        let mut out = GradientStore::new();
        self.backward_into(loss, &mut out)?;
        out.ensure_finite()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(entries: &[(&str, Vec<usize>, Vec<f64>)]) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        for (name, shape, values) in entries {
            s.insert(*name, shape.clone(), values.clone()).unwrap();
        }
        s
    }

    #[test]
    fn quadratic_gradient_is_the_parameter() {
        // loss = ||w||^2 / 2  =>  d loss / d w = w
        let store = store_with(&[("w", vec![3], vec![1.5, -2.0, 0.25])]);
        let mut tape = Tape::new(&store);
        let w = tape.param("w").unwrap();
        let sq = tape.dot(w, w);
        let loss = tape.scale(sq, 0.5);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap(), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant() {
        let v = vec![0.3, -1.2, 4.0, 0.0];
        let p = softmax(&v);
        assert!(p.iter().all(|&x| x > 0.0));
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let shifted: Vec<f64> = v.iter().map(|x| x + 123.456).collect();
        let q = softmax(&shifted);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_matches_analytic_two_point_case() {
        // softmax([0, ln 2]) = [1/3, 2/3]
        let p = softmax(&[0.0, std::f64::consts::LN_2]);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_softmax_on_constant_input() {
        let p = softmax(&[7.7_f64; 5]);
        for &x in &p {
            assert!((x - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_closed_form() {
        // loss = -log_softmax(logits)[k]  =>  d/d logits = softmax(logits) - e_k
        let logits = vec![0.2, -0.7, 1.3, 0.05];
        let k = 2;
        let store = store_with(&[("logits", vec![4], logits.clone())]);
        let mut tape = Tape::new(&store);
        let l = tape.param("logits").unwrap();
        let lsm = tape.log_softmax(l);
        let picked = tape.gather(lsm, k);
        let loss = tape.neg(picked);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get("logits").unwrap();
        let p = softmax(&logits);
        for (i, (&gi, &pi)) in g.iter().zip(&p).enumerate() {
            let expect = if i == k { pi - 1.0 } else { pi };
            assert!(
                (gi - expect).abs() < 1e-10,
                "logit {i}: got {gi}, expected {expect}"
            );
        }
    }

    #[test]
    fn non_scalar_loss_is_a_usage_error() {
        let store = store_with(&[("w", vec![2], vec![1.0, 2.0])]);
        let mut tape = Tape::new(&store);
        let w = tape.param("w").unwrap();
        let doubled = tape.scale(w, 2.0);
        assert!(matches!(
            tape.backward(doubled),
            Err(DiffError::NonScalarLoss { len: 2 })
        ));
    }

    #[test]
    fn nan_gradient_carries_the_parameter_name() {
        let store = store_with(&[("w", vec![1], vec![0.0])]);
        let mut tape = Tape::new(&store);
        let w = tape.param("w").unwrap();
        // d/dw exp(1/w) at w=0 passes a NaN/Inf through the chain.
        let inv = tape.scale(w, f64::INFINITY);
        let e = tape.exp(inv);
        let loss = tape.sum(e);
        match tape.backward(loss) {
            Err(DiffError::NonFiniteGradient { name }) => assert_eq!(name, "w"),
            other => panic!("expected non-finite gradient error, got {other:?}"),
        }
    }

    #[test]
    fn min_elem_routes_gradient_by_winner() {
        let store = store_with(&[
            ("a", vec![3], vec![1.0, 5.0, 2.0]),
            ("b", vec![3], vec![2.0, 3.0, 2.0]),
        ]);
        let mut tape = Tape::new(&store);
        let a = tape.param("a").unwrap();
        let b = tape.param("b").unwrap();
        let m = tape.min_elem(a, b);
        let loss = tape.sum(m);
        assert_eq!(tape.value(m), &[1.0, 3.0, 2.0]);
        let grads = tape.backward(loss).unwrap();
        // Tie at index 2 routes to `a`.
        assert_eq!(grads.get("a").unwrap(), &[1.0, 0.0, 1.0]);
        assert_eq!(grads.get("b").unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn shared_parameter_accumulates_gradient() {
        // loss = sum(w) + dot(w, w): d/dw = 1 + 2w
        let store = store_with(&[("w", vec![2], vec![3.0, -1.0])]);
        let mut tape = Tape::new(&store);
        let w1 = tape.param("w").unwrap();
        let w2 = tape.param("w").unwrap();
        assert_eq!(w1, w2);
        let s = tape.sum(w1);
        let d = tape.dot(w1, w2);
        let loss = tape.add(s, d);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap(), &[7.0, -1.0]);
    }
}

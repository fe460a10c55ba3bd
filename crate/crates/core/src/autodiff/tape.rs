//! Reverse-mode tape over dense tensors.
//!
//! Every operation appends a node holding its forward value. Nodes only refer
//! to earlier nodes, so a reverse sweep over the node list is a valid
//! reverse topological order.

use crate::autodiff::Tensor;
use crate::error::{check_len, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A differentiable operation whose vector-Jacobian product is supplied by
/// the caller. Used for the quantum circuit layers.
pub trait OpaqueOp {
    fn name(&self) -> &str;

    /// Returns one gradient tensor per input, each shaped like that input.
    fn vjp(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &[f64]) -> Result<Vec<Tensor>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Broadcast(Var),
    Reshape(Var),
    Opaque(Box<dyn OpaqueOp>, Vec<Var>),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros if the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    pub fn wrt_slice(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(a);
        let value = Tensor::from_parts(src.shape().to_vec(), src.data().iter().map(|&x| f(x)).collect());
        self.push(op, value)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_len("elementwise operands", va.len(), vb.len())?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(op, value))
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    /// `m · x` for `m` of shape `[r, c]` and `x` of length `c`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (r, c) = self
            .value(m)
            .dims2()
            .ok_or(Error::InvalidParameter("matvec expects a rank-2 matrix".into()))?;
        check_len("matvec input", c, self.value(x).len())?;
        let (md, xd) = (self.data(m), self.data(x));
        let out = (0..r).map(|i| dot(&md[i * c..(i + 1) * c], xd)).collect();
        Ok(self.push(Op::MatVec(m, x), Tensor::vector(out)))
    }

    /// `xᵀ · m` for `x` of length `r` and `m` of shape `[r, c]`.
    pub fn vecmat(&mut self, x: Var, m: Var) -> Result<Var> {
        let (r, c) = self
            .value(m)
            .dims2()
            .ok_or(Error::InvalidParameter("vecmat expects a rank-2 matrix".into()))?;
        check_len("vecmat input", r, self.value(x).len())?;
        let (md, xd) = (self.data(m), self.data(x));
        let mut out = vec![0.0; c];
        for (j, &w) in xd.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(&md[j * c..(j + 1) * c]) {
                *o += w * v;
            }
        }
        Ok(self.push(Op::VecMat(x, m), Tensor::vector(out)))
    }

    /// `w · x + b`.
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), elu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let mut data = self.data(a).to_vec();
        softmax_in_place(&mut data);
        let value = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        self.push(Op::Softmax(a), value)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts.iter().flat_map(|&p| self.data(p).iter().copied()).collect();
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(data))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.data(a);
        if start + len > src.len() {
            return Err(Error::ShapeMismatch {
                context: "slice bounds",
                expected: src.len(),
                got: start + len,
            });
        }
        let value = Tensor::vector(src[start..start + len].to_vec());
        Ok(self.push(Op::Slice(a, start), value))
    }

    /// Repeats a single-element tensor `n` times.
    pub fn broadcast(&mut self, a: Var, n: usize) -> Result<Var> {
        check_len("broadcast source", 1, self.value(a).len())?;
        let v = self.data(a)[0];
        Ok(self.push(Op::Broadcast(a), Tensor::vector(vec![v; n])))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let src = self.value(a);
        check_len("reshape", shape.iter().product(), src.len())?;
        let value = Tensor::from_parts(shape, src.data().to_vec());
        Ok(self.push(Op::Reshape(a), value))
    }

    /// Records an externally evaluated operation. `output` must already hold
    /// the forward value computed from `inputs`.
    pub fn opaque(&mut self, op: Box<dyn OpaqueOp>, inputs: &[Var], output: Tensor) -> Var {
        self.push(Op::Opaque(op, inputs.to_vec()), output)
    }

    /// Propagates `seed` (the gradient of some scalar with respect to
    /// `output`) back to every node. A tape can be swept only once.
    pub fn backward(&mut self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        check_len("backward seed", self.value(output).len(), seed.len())?;
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.data().to_vec());

        fn acc(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut Vec<f64> {
            grads[var.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let len_of = |v: Var| self.nodes[v.0].value.len();
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    for (d, s) in acc(&mut grads, *b, g.len()).iter_mut().zip(&g) {
                        *d -= s;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.data(*a), self.data(*b));
                    for ((d, s), y) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g).zip(vb) {
                        *d += s * y;
                    }
                    for ((d, s), x) in acc(&mut grads, *b, g.len()).iter_mut().zip(&g).zip(va) {
                        *d += s * x;
                    }
                }
                Op::Scale(a, k) => {
                    for (d, s) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *d += k * s;
                    }
                }
                Op::MatVec(m, x) => {
                    let c = len_of(*x);
                    let (md, xd) = (self.data(*m), self.data(*x));
                    let gm = acc(&mut grads, *m, md.len());
                    for (i, &gi) in g.iter().enumerate() {
                        for (d, &xj) in gm[i * c..(i + 1) * c].iter_mut().zip(xd) {
                            *d += gi * xj;
                        }
                    }
                    let gx = acc(&mut grads, *x, c);
                    for (i, &gi) in g.iter().enumerate() {
                        for (d, &mij) in gx.iter_mut().zip(&md[i * c..(i + 1) * c]) {
                            *d += gi * mij;
                        }
                    }
                }
                Op::VecMat(x, m) => {
                    let c = g.len();
                    let (md, xd) = (self.data(*m), self.data(*x));
                    let gx = acc(&mut grads, *x, xd.len());
                    for (j, d) in gx.iter_mut().enumerate() {
                        *d += dot(&md[j * c..(j + 1) * c], &g);
                    }
                    let gm = acc(&mut grads, *m, md.len());
                    for (j, &xj) in xd.iter().enumerate() {
                        for (d, &gk) in gm[j * c..(j + 1) * c].iter_mut().zip(&g) {
                            *d += xj * gk;
                        }
                    }
                }
                Op::Elu(a) => {
                    let (xa, y) = (self.data(*a), node.value.data());
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        let d = if xa[i] >= 0.0 { 1.0 } else { y[i] + 1.0 };
                        ga[i] += g[i] * d;
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    for ((d, s), y) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g).zip(y) {
                        *d += s * y * (1.0 - y);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    for ((d, s), y) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g).zip(y) {
                        *d += s * (1.0 - y * y);
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let dot: f64 = g.iter().zip(y).map(|(s, y)| s * y).sum();
                    for ((d, s), y) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g).zip(y) {
                        *d += y * (s - dot);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = len_of(p);
                        add_into(acc(&mut grads, p, n), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    let ga = acc(&mut grads, *a, len_of(*a));
                    add_into(&mut ga[*start..*start + g.len()], &g);
                }
                Op::Broadcast(a) => {
                    acc(&mut grads, *a, 1)[0] += g.iter().sum::<f64>();
                }
                Op::Reshape(a) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                }
                Op::Opaque(op, inputs) => {
                    let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                    let input_grads = op.vjp(&values, &node.value, &g)?;
                    check_len("opaque gradient count", inputs.len(), input_grads.len())?;
                    for (v, gi) in inputs.iter().zip(&input_grads) {
                        check_len("opaque gradient", len_of(*v), gi.len())?;
                        add_into(acc(&mut grads, *v, gi.len()), gi.data());
                    }
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Dot product with eight independent accumulators so the loop vectorises.
/// The summation order is fixed, so every instruction set gives the same bits.
#[inline(always)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        let x: &[f64; 8] = x.try_into().expect("chunk of 8");
        let y: &[f64; 8] = y.try_into().expect("chunk of 8");
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

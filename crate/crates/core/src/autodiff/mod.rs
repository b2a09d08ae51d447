//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! ```
//! use ncm::autodiff::{Tape, Tensor};
//! let tape = Tape::new();
//! let x = tape.var(Tensor::vector(vec![0.0, 2.0]));
//! let y = x.sigmoid().unwrap().sum().unwrap();
//! let g = tape.backward(y).unwrap();
//! assert!((g.wrt(x).data()[0] - 0.25).abs() < 1e-12);
//! ```

pub mod gradcheck;
mod tensor;

use std::cell::{Ref, RefCell};

pub use tensor::Tensor;
pub(crate) use tensor::gemm;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Clone, Copy, Debug)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Linear { x: usize, w: usize, b: usize, relu: bool },
    Binary(BinOp, usize, usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Relu(usize),
    LogSigmoid(usize),
    Affine(usize, f64),
    ClampMin(usize, f64),
    Sum(usize),
    SumAxis { src: usize, outer: usize, len: usize, inner: usize },
    LogSumExp { src: usize, outer: usize, len: usize, inner: usize },
    Softmax { src: usize, cols: usize },
    Gather { src: usize, index: Vec<usize> },
    Concat(Vec<usize>),
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations so gradients can be replayed in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.value().shape())
    }
}

/// Gradients of a scalar with respect to the tape's leaves.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }

    /// Gradient for `v`, zeros when `v` did not influence the output.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.grads[v.id].clone().unwrap_or_else(|| Tensor::zeros(self.shapes[v.id].clone()))
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let la: usize = a.iter().product();
    let lb: usize = b.iter().product();
    let trim = |s: &[usize]| -> Vec<usize> { s.iter().copied().skip_while(|&d| d == 1).collect() };
    let (big, small) = if la >= lb { (a, b) } else { (b, a) };
    let (big_t, small_t) = (trim(big), trim(small));
    if small_t.is_empty() || (small_t.len() <= big_t.len() && big_t.ends_with(&small_t)) {
        Ok(big.to_vec())
    } else {
        Err(AutodiffError::Shape(format!("cannot broadcast {a:?} with {b:?}")))
    }
}

/// Visit `(i, i mod la, i mod lb)` for `i < n`, where each of `la`, `lb`
/// either equals `n` or divides it.
#[inline(always)]
fn for_each_pair(n: usize, la: usize, lb: usize, mut f: impl FnMut(usize, usize, usize)) {
    if la == n && lb == n {
        (0..n).for_each(|i| f(i, i, i));
    } else if la == n {
        for o in 0..n / lb {
            (0..lb).for_each(|j| f(o * lb + j, o * lb + j, j));
        }
    } else {
        for o in 0..n / la {
            (0..la).for_each(|j| f(o * la + j, j, o * la + j));
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize, Vec<usize>)> {
    if axis >= shape.len() {
        return Err(AutodiffError::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    let mut out = shape.to_vec();
    out.remove(axis);
    Ok((outer, shape[axis], inner, out))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Trainable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push(&self, value: Tensor, op: Op, parents: &[usize], name: &'static str) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(name));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Flatten and join several tensors into one vector.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(p.id).data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.push(Tensor::vector(data), Op::Concat(ids.clone()), &ids, "concat")
    }

    /// Gradients of the scalar `output` with respect to every trainable leaf.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id].value;
        if out.len() != 1 {
            return Err(AutodiffError::NonScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[output.id] = Some(vec![1.0]);
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            backprop(&nodes, id, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad).map(|g| Tensor::from_parts(n.value.shape().to_vec(), g))
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let g = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    f(g);
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let y = nodes[id].value.data();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            accumulate(grads, nodes, *a, |ga| gemm(m, n, k, g, false, bv.data(), true, 1.0, ga));
            accumulate(grads, nodes, *b, |gb| gemm(k, m, n, av.data(), true, g, false, 1.0, gb));
        }
        Op::Linear { x, w, b, relu } => {
            let (xv, wv) = (&nodes[*x].value, &nodes[*w].value);
            let (m, k, n) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
            let masked: Vec<f64>;
            let g = if *relu {
                masked = g.iter().zip(y).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect();
                &masked[..]
            } else {
                g
            };
            accumulate(grads, nodes, *x, |gx| gemm(m, n, k, g, false, wv.data(), true, 1.0, gx));
            accumulate(grads, nodes, *w, |gw| gemm(k, m, n, xv.data(), true, g, false, 1.0, gw));
            accumulate(grads, nodes, *b, |gb| {
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(a, &d)| *a += d);
                }
            });
        }
        Op::Binary(op, a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            let (la, lb, n) = (av.len(), bv.len(), g.len());
            match op {
                BinOp::Add => {
                    accumulate(grads, nodes, *a, |ga| for_each_pair(n, la, lb, |i, ia, _| ga[ia] += g[i]));
                    accumulate(grads, nodes, *b, |gb| for_each_pair(n, la, lb, |i, _, ib| gb[ib] += g[i]));
                }
                BinOp::Sub => {
                    accumulate(grads, nodes, *a, |ga| for_each_pair(n, la, lb, |i, ia, _| ga[ia] += g[i]));
                    accumulate(grads, nodes, *b, |gb| for_each_pair(n, la, lb, |i, _, ib| gb[ib] -= g[i]));
                }
                BinOp::Mul => {
                    accumulate(grads, nodes, *a, |ga| for_each_pair(n, la, lb, |i, ia, ib| ga[ia] += g[i] * bv[ib]));
                    accumulate(grads, nodes, *b, |gb| for_each_pair(n, la, lb, |i, ia, ib| gb[ib] += g[i] * av[ia]));
                }
                BinOp::Div => {
                    accumulate(grads, nodes, *a, |ga| for_each_pair(n, la, lb, |i, ia, ib| ga[ia] += g[i] / bv[ib]));
                    accumulate(grads, nodes, *b, |gb| {
                        for_each_pair(n, la, lb, |i, _, ib| gb[ib] -= g[i] * y[i] / bv[ib])
                    });
                }
            }
        }
        Op::Neg(a) => accumulate(grads, nodes, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x -= d)),
        Op::Exp(a) => accumulate(grads, nodes, *a, |ga| {
            ga.iter_mut().zip(g).zip(y).for_each(|((x, &d), &yv)| *x += d * yv)
        }),
        Op::Log(a) => {
            let av = nodes[*a].value.data();
            accumulate(grads, nodes, *a, |ga| ga.iter_mut().zip(g).zip(av).for_each(|((x, &d), &v)| *x += d / v))
        }
        Op::Sigmoid(a) => accumulate(grads, nodes, *a, |ga| {
            ga.iter_mut().zip(g).zip(y).for_each(|((x, &d), &s)| *x += d * s * (1.0 - s))
        }),
        Op::Relu(a) => {
            let av = nodes[*a].value.data();
            accumulate(grads, nodes, *a, |ga| {
                ga.iter_mut().zip(g).zip(av).for_each(|((x, &d), &v)| {
                    if v > 0.0 {
                        *x += d
                    }
                })
            })
        }
        Op::LogSigmoid(a) => {
            let av = nodes[*a].value.data();
            accumulate(grads, nodes, *a, |ga| {
                ga.iter_mut().zip(g).zip(av).for_each(|((x, &d), &v)| *x += d * stable_sigmoid(-v))
            })
        }
        Op::Affine(a, scale) => accumulate(grads, nodes, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d * scale)),
        Op::ClampMin(a, lo) => {
            let av = nodes[*a].value.data();
            accumulate(grads, nodes, *a, |ga| {
                ga.iter_mut().zip(g).zip(av).for_each(|((x, &d), &v)| {
                    if v > *lo {
                        *x += d
                    }
                })
            })
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
        Op::SumAxis { src, outer, len, inner } => accumulate(grads, nodes, *src, |ga| {
            for o in 0..*outer {
                for l in 0..*len {
                    for i in 0..*inner {
                        ga[(o * len + l) * inner + i] += g[o * inner + i];
                    }
                }
            }
        }),
        Op::LogSumExp { src, outer, len, inner } => {
            let xv = nodes[*src].value.data();
            accumulate(grads, nodes, *src, |ga| {
                for o in 0..*outer {
                    for l in 0..*len {
                        for i in 0..*inner {
                            let j = (o * len + l) * inner + i;
                            let k = o * inner + i;
                            ga[j] += g[k] * (xv[j] - y[k]).exp();
                        }
                    }
                }
            })
        }
        Op::Softmax { src, cols } => accumulate(grads, nodes, *src, |ga| {
            for (r, (gr, yr)) in g.chunks(*cols).zip(y.chunks(*cols)).enumerate() {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for c in 0..*cols {
                    ga[r * cols + c] += yr[c] * (gr[c] - dot);
                }
            }
        }),
        Op::Gather { src, index } => accumulate(grads, nodes, *src, |ga| {
            for (&j, &d) in index.iter().zip(g) {
                ga[j] += d;
            }
        }),
        Op::Concat(parts) => {
            let mut off = 0;
            for &p in parts {
                let n = nodes[p].value.len();
                accumulate(grads, nodes, p, |gp| gp.iter_mut().zip(&g[off..off + n]).for_each(|(x, &d)| *x += d));
                off += n;
            }
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d)),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    /// Value of a one-element variable.
    pub fn item(&self) -> f64 {
        self.tape.value(self.id).item()
    }

    fn unary(self, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let out = {
            let v = self.tape.value(self.id);
            Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
        };
        self.tape.push(out, op, &[self.id], name)
    }

    fn binary(self, other: Var<'t>, op: BinOp, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.tape.value(self.id), self.tape.value(other.id));
            let shape = broadcast_shape(a.shape(), b.shape())?;
            let (ad, bd) = (a.data(), b.data());
            let n = ad.len().max(bd.len());
            let mut data = Vec::with_capacity(n);
            for_each_pair(n, ad.len(), bd.len(), |_, ia, ib| data.push(f(ad[ia], bd[ib])));
            Tensor::from_parts(shape, data)
        };
        self.tape.push(out, Op::Binary(op, self.id, other.id), &[self.id, other.id], name)
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.tape.value(self.id), self.tape.value(other.id));
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(AutodiffError::Shape(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut c);
            Tensor::from_parts(vec![m, n], c)
        };
        self.tape.push(out, Op::MatMul(self.id, other.id), &[self.id, other.id], "matmul")
    }

    /// `x W + b` for `x: [m, k]`, `W: [k, n]`, `b: [n]`, optionally followed by ReLU.
    pub fn linear(self, w: Var<'t>, b: Var<'t>, relu: bool) -> Result<Var<'t>> {
        let out = {
            let (x, wv, bv) = (self.tape.value(self.id), self.tape.value(w.id), self.tape.value(b.id));
            if x.shape().len() != 2 || wv.shape().len() != 2 || x.shape()[1] != wv.shape()[0] || bv.len() != wv.shape()[1] {
                return Err(AutodiffError::Shape(format!("linear {:?} x {:?} + {:?}", x.shape(), wv.shape(), bv.shape())));
            }
            let (m, k, n) = (x.shape()[0], x.shape()[1], wv.shape()[1]);
            let mut c = Vec::with_capacity(m * n);
            for _ in 0..m {
                c.extend_from_slice(bv.data());
            }
            gemm(m, k, n, x.data(), false, wv.data(), false, 1.0, &mut c);
            if relu {
                c.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            Tensor::from_parts(vec![m, n], c)
        };
        self.tape.push(out, Op::Linear { x: self.id, w: w.id, b: b.id, relu }, &[self.id, w.id, b.id], "linear")
    }

    /// Elementwise sum; the smaller operand is repeated over leading dimensions.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinOp::Add, "add", |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinOp::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinOp::Mul, "mul", |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        if self.tape.value(other.id).data().contains(&0.0) {
            return Err(AutodiffError::Domain("division by zero".into()));
        }
        self.binary(other, BinOp::Div, "div", |a, b| a / b)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary(Op::Neg(self.id), "neg", |x| -x)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Op::Exp(self.id), "exp", f64::exp)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(self) -> Result<Var<'t>> {
        if let Some(&x) = self.tape.value(self.id).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(AutodiffError::Domain(format!("log of {x}")));
        }
        self.unary(Op::Log(self.id), "log", f64::ln)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), "sigmoid", stable_sigmoid)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), "relu", |x| x.max(0.0))
    }

    /// `ln sigmoid(x)`, accurate for large `|x|`.
    pub fn log_sigmoid(self) -> Result<Var<'t>> {
        self.unary(Op::LogSigmoid(self.id), "log_sigmoid", log_sigmoid)
    }

    /// `scale * x + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Result<Var<'t>> {
        self.unary(Op::Affine(self.id, scale), "affine", |x| scale * x + shift)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.affine(c, 0.0)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.affine(1.0, c)
    }

    /// `max(x, lo)`; the gradient is cut where the floor is active.
    pub fn clamp_min(self, lo: f64) -> Result<Var<'t>> {
        self.unary(Op::ClampMin(self.id, lo), "clamp_min", |x| x.max(lo))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(self) -> Result<Var<'t>> {
        let s = Tensor::scalar(self.tape.value(self.id).data().iter().sum());
        self.tape.push(s, Op::Sum(self.id), &[self.id], "sum")
    }

    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let out = {
            let v = self.tape.value(self.id);
            let (outer, len, inner, shape) = axis_split(v.shape(), axis)?;
            let x = v.data();
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        data[o * inner + i] += x[(o * len + l) * inner + i];
                    }
                }
            }
            (Tensor::from_parts(shape, data), outer, len, inner)
        };
        let (t, outer, len, inner) = out;
        self.tape.push(t, Op::SumAxis { src: self.id, outer, len, inner }, &[self.id], "sum_axis")
    }

    /// `ln Σ exp(x)` along `axis`, shifted by the maximum.
    pub fn log_sum_exp(self, axis: usize) -> Result<Var<'t>> {
        let out = {
            let v = self.tape.value(self.id);
            let (outer, len, inner, shape) = axis_split(v.shape(), axis)?;
            if len == 0 {
                return Err(AutodiffError::Shape("log_sum_exp over an empty axis".into()));
            }
            let x = v.data();
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| x[(o * len + l) * inner + i];
                    let mx = (0..len).map(at).fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = (0..len).map(|l| (at(l) - mx).exp()).sum();
                    data[o * inner + i] = mx + s.ln();
                }
            }
            (Tensor::from_parts(shape, data), outer, len, inner)
        };
        let (t, outer, len, inner) = out;
        self.tape.push(t, Op::LogSumExp { src: self.id, outer, len, inner }, &[self.id], "log_sum_exp")
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t>> {
        let (t, cols) = {
            let v = self.tape.value(self.id);
            let cols = *v.shape().last().ok_or_else(|| AutodiffError::Shape("softmax of a scalar".into()))?;
            if cols == 0 {
                return Err(AutodiffError::Shape("softmax over an empty axis".into()));
            }
            let mut data = Vec::with_capacity(v.len());
            for row in v.data().chunks(cols) {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|&x| (x - mx).exp()).collect();
                let s: f64 = e.iter().sum();
                data.extend(e.into_iter().map(|x| x / s));
            }
            (Tensor::from_parts(v.shape().to_vec(), data), cols)
        };
        self.tape.push(t, Op::Softmax { src: self.id, cols }, &[self.id], "softmax")
    }

    /// `out[i] = flat(self)[index[i]]`, reshaped to `shape`.
    pub fn gather(self, index: Vec<usize>, shape: Vec<usize>) -> Result<Var<'t>> {
        let t = {
            let v = self.tape.value(self.id);
            if shape.iter().product::<usize>() != index.len() {
                return Err(AutodiffError::Shape(format!("{} indices for shape {shape:?}", index.len())));
            }
            if let Some(&j) = index.iter().find(|&&j| j >= v.len()) {
                return Err(AutodiffError::Shape(format!("gather index {j} out of range {}", v.len())));
            }
            let x = v.data();
            Tensor::from_parts(shape, index.iter().map(|&j| x[j]).collect())
        };
        self.tape.push(t, Op::Gather { src: self.id, index }, &[self.id], "gather")
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>> {
        let t = self.tape.value(self.id).clone().reshape(shape)?;
        self.tape.push(t, Op::Reshape(self.id), &[self.id], "reshape")
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::check_gradients;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn analytic_values() {
        let tape = Tape::new();
        let z = tape.var(Tensor::vector(vec![0.0, 0.0]));
        assert!((z.log_sum_exp(0).unwrap().item() - 2f64.ln()).abs() < 1e-15);
        let big = tape.var(Tensor::vector(vec![1000.0, 1000.0]));
        assert!((big.log_sum_exp(0).unwrap().item() - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let s = tape.var(Tensor::scalar(0.0)).sigmoid().unwrap();
        assert_eq!(s.item(), 0.5);
        let ls = tape.var(Tensor::scalar(-800.0)).log_sigmoid().unwrap();
        assert!((ls.item() + 800.0).abs() < 1e-9);
    }

    #[test]
    fn analytic_gradients() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.0));
        let g = tape.backward(x.sigmoid().unwrap()).unwrap();
        assert_eq!(g.wrt(x).item(), 0.25);
        let v = tape.var(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap());
        let g = tape.backward(v.sum().unwrap()).unwrap();
        assert_eq!(g.wrt(v).data(), &[1.0; 6]);
    }

    #[test]
    fn errors() {
        let tape = Tape::new();
        let a = tape.var(Tensor::zeros(vec![2, 3]));
        let b = tape.var(Tensor::zeros(vec![2, 3]));
        assert!(matches!(a.matmul(b), Err(AutodiffError::Shape(_))));
        assert!(matches!(a.log(), Err(AutodiffError::Domain(_))));
        assert!(matches!(tape.backward(a), Err(AutodiffError::NonScalar(_))));
        let c = tape.var(Tensor::zeros(vec![2]));
        assert!(matches!(a.add(c), Err(AutodiffError::Shape(_))));
        let d = tape.var(Tensor::zeros(vec![3]));
        assert_eq!(a.add(d).unwrap().shape(), vec![2, 3]);
        let huge = tape.var(Tensor::scalar(1000.0));
        assert!(matches!(huge.exp(), Err(AutodiffError::NonFinite(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let w = tape.var(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let y = w.mul(c).unwrap().sum().unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(w).data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn lse_bounds() {
        let mut rng = crate::util::rng(1);
        for _ in 0..200 {
            let n = rng.random_range(1..20);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tape = Tape::new();
            let l = tape.var(Tensor::vector(x)).log_sum_exp(0).unwrap().item();
            assert!(l >= mx && l <= mx + (n as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let tape = Tape::new();
            let a = tape.var(Tensor::matrix(3, 4, (0..12).map(|i| (i as f64).cos()).collect()).unwrap());
            let b = tape.var(Tensor::matrix(4, 2, (0..8).map(|i| (i as f64).sin()).collect()).unwrap());
            let y = a.matmul(b).unwrap().sigmoid().unwrap().log_sum_exp(1).unwrap().sum().unwrap();
            let g = tape.backward(y).unwrap();
            (g.wrt(a), g.wrt(b))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn per_op_gradients() {
        let mut rng = crate::util::rng(7);
        let mut rand = |shape: Vec<usize>, lo: f64, hi: f64| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
        };
        type Case = Box<dyn for<'a> Fn(&'a Tape, &[Var<'a>]) -> Result<Var<'a>>>;
        let cases: Vec<(&str, Vec<Tensor>, Case)> = vec![
            ("matmul", vec![rand(vec![3, 4], -1.0, 1.0), rand(vec![4, 2], -1.0, 1.0)], Box::new(|_, v| v[0].matmul(v[1])?.sum())),
            ("add-bcast", vec![rand(vec![3, 4], -1.0, 1.0), rand(vec![4], -1.0, 1.0)], Box::new(|_, v| v[0].add(v[1])?.exp()?.sum())),
            ("mul-bcast-left", vec![rand(vec![3], -1.0, 1.0), rand(vec![2, 3], -1.0, 1.0)], Box::new(|_, v| v[0].mul(v[1])?.exp()?.sum())),
            (
                "linear",
                vec![rand(vec![4, 3], -1.0, 1.0), rand(vec![3, 2], -1.0, 1.0), rand(vec![2], -1.0, 1.0)],
                Box::new(|_, v| v[0].linear(v[1], v[2], false)?.sigmoid()?.sum()),
            ),
            (
                "linear-relu",
                vec![rand(vec![4, 3], 0.1, 1.0), rand(vec![3, 2], 0.1, 1.0), rand(vec![2], -0.1, 0.1)],
                Box::new(|_, v| v[0].linear(v[1], v[2], true)?.exp()?.sum()),
            ),
            ("sub", vec![rand(vec![5], -1.0, 1.0), rand(vec![5], -1.0, 1.0)], Box::new(|_, v| v[0].sub(v[1])?.sigmoid()?.sum())),
            ("mul-scalar", vec![rand(vec![2, 3], -1.0, 1.0), rand(vec![], -1.0, 1.0)], Box::new(|_, v| v[0].mul(v[1])?.exp()?.sum())),
            ("div", vec![rand(vec![4], -1.0, 1.0), rand(vec![4], 0.5, 2.0)], Box::new(|_, v| v[0].div(v[1])?.exp()?.sum())),
            ("neg", vec![rand(vec![4], -1.0, 1.0)], Box::new(|_, v| v[0].neg()?.exp()?.sum())),
            ("log", vec![rand(vec![4], 0.5, 2.0)], Box::new(|_, v| v[0].log()?.exp()?.log()?.sigmoid()?.sum())),
            ("relu", vec![rand(vec![6], 0.1, 1.0)], Box::new(|_, v| v[0].relu()?.exp()?.sum())),
            ("log_sigmoid", vec![rand(vec![6], -5.0, 5.0)], Box::new(|_, v| v[0].log_sigmoid()?.sum())),
            ("affine", vec![rand(vec![3], -1.0, 1.0)], Box::new(|_, v| v[0].affine(2.5, -1.0)?.sigmoid()?.sum())),
            ("clamp", vec![rand(vec![3], 0.1, 1.0)], Box::new(|_, v| v[0].clamp_min(-1.0)?.exp()?.sum())),
            ("sum_axis", vec![rand(vec![2, 3, 4], -1.0, 1.0)], Box::new(|_, v| v[0].sum_axis(1)?.exp()?.sum())),
            ("lse0", vec![rand(vec![3, 4], -3.0, 3.0)], Box::new(|_, v| v[0].log_sum_exp(0)?.sigmoid()?.sum())),
            ("lse1", vec![rand(vec![3, 4], -3.0, 3.0)], Box::new(|_, v| v[0].log_sum_exp(1)?.sigmoid()?.sum())),
            ("softmax", vec![rand(vec![2, 5], -2.0, 2.0), rand(vec![2, 5], -1.0, 1.0)], Box::new(|_, v| v[0].softmax()?.mul(v[1])?.sum())),
            (
                "gather",
                vec![rand(vec![5], -1.0, 1.0)],
                Box::new(|_, v| v[0].gather(vec![0, 4, 4, 2, 1, 0], vec![2, 3])?.exp()?.sum()),
            ),
            ("concat", vec![rand(vec![2], -1.0, 1.0), rand(vec![3], -1.0, 1.0)], Box::new(|t, v| t.concat(&[v[0], v[1]])?.exp()?.sum())),
            ("reshape", vec![rand(vec![6], -1.0, 1.0)], Box::new(|_, v| v[0].reshape(vec![2, 3])?.log_sum_exp(1)?.sum())),
        ];
        for (name, inputs, f) in &cases {
            let err = check_gradients(|t, v| f(t, v), inputs, 1e-5).unwrap();
            assert!(err < 1e-6, "{name}: relative error {err}");
        }
    }

    #[derive(Clone, Debug)]
    enum Step {
        Sigmoid,
        Exp,
        LogSigmoid,
        Relu,
        Affine(f64, f64),
        MulSelf,
        MatMul,
        Softmax,
        Lse,
    }

    fn step() -> impl Strategy<Value = Step> {
        prop_oneof![
            Just(Step::Sigmoid),
            Just(Step::Exp),
            Just(Step::LogSigmoid),
            Just(Step::Relu),
            (-2.0..2.0f64, -1.0..1.0f64).prop_map(|(a, b)| Step::Affine(a, b)),
            Just(Step::MulSelf),
            Just(Step::MatMul),
            Just(Step::Softmax),
            Just(Step::Lse),
        ]
    }

    fn apply<'a>(x: Var<'a>, w: Var<'a>, s: &Step) -> Result<Var<'a>> {
        match s {
            Step::Sigmoid => x.sigmoid(),
            Step::Exp => x.sigmoid()?.exp(),
            Step::LogSigmoid => x.log_sigmoid(),
            Step::Relu => x.affine(1.0, 0.05)?.relu(),
            Step::Affine(a, b) => x.affine(*a, *b),
            Step::MulSelf => x.mul(x.sigmoid()?),
            Step::MatMul => x.matmul(w),
            Step::Softmax => x.softmax(),
            Step::Lse => {
                let l = x.log_sum_exp(1)?;
                x.sub(l.reshape(vec![3, 1])?.matmul(w.scale(0.0)?.add_scalar(1.0)?.sum_axis(0)?.reshape(vec![1, 3])?)?)
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_compositions(steps in proptest::collection::vec(step(), 1..=6), seed in any::<u64>()) {
            let mut rng = crate::util::rng(seed);
            let x: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let inputs = vec![Tensor::matrix(3, 3, x).unwrap(), Tensor::matrix(3, 3, w).unwrap()];
            let err = check_gradients(
                |t, v| {
                    let mut h = v[0];
                    for s in &steps {
                        h = apply(h, v[1], s)?;
                    }
                    h.mul(t.constant(Tensor::matrix(3, 3, c.clone())?))?.sum()
                },
                &inputs,
                1e-5,
            );
            if let Ok(err) = err {
                prop_assert!(err < 1e-4, "relative error {} for {:?}", err, steps);
            }
        }
    }
}

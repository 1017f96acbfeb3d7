//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles in
//! creation order, which is already a topological order. [`Graph::backward`]
//! walks the tape in reverse and accumulates adjoints into every node that
//! transitively depends on a parameter leaf.

use std::cell::{Ref, RefCell};

use crate::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Unary(usize, Unary),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Slice {
        src: usize,
        axis: usize,
        start: usize,
    },
    MaxAxis {
        src: usize,
        axis: usize,
        argmax: Vec<usize>,
    },
    SumAxis {
        src: usize,
        axis: usize,
        scale: f64,
    },
    SumAll(usize, f64),
    SegmentMax {
        src: usize,
        argmax: Vec<Option<usize>>,
    },
    SegmentMean {
        src: usize,
        segments: Vec<usize>,
        counts: Vec<usize>,
    },
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm {
        src: usize,
        inv_std: Vec<f64>,
    },
    GatherRows {
        src: usize,
        index: Vec<usize>,
    },
    ScatterAddRows {
        src: usize,
        index: Vec<usize>,
    },
    BceWithLogits {
        src: usize,
        targets: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording tape. One graph per forward pass; separate graphs may be used
/// on separate threads.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; all zeros when the loss does not
    /// depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        let shape = &self.shapes[var.id];
        match &self.grads[var.id] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

struct Layout {
    outer: usize,
    len: usize,
    inner: usize,
}

fn layout(shape: &[usize], axis: usize) -> Layout {
    Layout {
        outer: shape[..axis].iter().product(),
        len: shape[axis],
        inner: shape[axis + 1..].iter().product(),
    }
}

/// `b` may broadcast onto `a` when the shapes match, `b` has a single
/// element, or `b`'s shape is a suffix of `a`'s.
fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    a == b || b.iter().product::<usize>() == 1 || (b.len() < a.len() && a.ends_with(b))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Computes d`loss`/d`node` for every node on the tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop_node(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(slot);
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(nodes[id].op, Op::Sub(..)) { -1.0 } else { 1.0 };
            accumulate(grads, nodes, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
            });
            let nb = nodes[*b].value.numel();
            accumulate(grads, nodes, *b, |gb| {
                for (i, gi) in g.iter().enumerate() {
                    gb[i % nb] += sign * gi;
                }
            });
        }
        Op::Mul(a, b) => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            let nb = bv.len();
            accumulate(grads, nodes, *a, |ga| {
                for (i, gi) in g.iter().enumerate() {
                    ga[i] += gi * bv[i % nb];
                }
            });
            accumulate(grads, nodes, *b, |gb| {
                for (i, gi) in g.iter().enumerate() {
                    gb[i % nb] += gi * av[i];
                }
            });
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, |ga| {
            ga.iter_mut().zip(g).for_each(|(x, gi)| *x += c * gi);
        }),
        Op::AddScalar(a) => accumulate(grads, nodes, *a, |ga| {
            ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
        }),
        Op::Unary(a, kind) => {
            let x = nodes[*a].value.data();
            let y = out.data();
            accumulate(grads, nodes, *a, |ga| {
                for i in 0..g.len() {
                    let d = match kind {
                        Unary::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Sigmoid => y[i] * (1.0 - y[i]),
                        Unary::Tanh => 1.0 - y[i] * y[i],
                        Unary::Sin => x[i].cos(),
                        Unary::Cos => -x[i].sin(),
                        Unary::Exp => y[i],
                        Unary::Log => 1.0 / x[i],
                        Unary::Abs => {
                            if x[i] > 0.0 {
                                1.0
                            } else if x[i] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    ga[i] += g[i] * d;
                }
            });
        }
        Op::MatMul(a, b) => {
            let (m, k) = nodes[*a].value.dims2().expect("matmul lhs");
            let (_, n) = nodes[*b].value.dims2().expect("matmul rhs");
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            // dA = dC · Bᵀ
            accumulate(grads, nodes, *a, |ga| unsafe {
                matrixmultiply::dgemm(
                    m, n, k, 1.0, g.as_ptr(), n as isize, 1, bv.as_ptr(), 1, n as isize, 1.0,
                    ga.as_mut_ptr(), k as isize, 1,
                );
            });
            // dB = Aᵀ · dC
            accumulate(grads, nodes, *b, |gb| unsafe {
                matrixmultiply::dgemm(
                    k, m, n, 1.0, av.as_ptr(), 1, k as isize, g.as_ptr(), n as isize, 1, 1.0,
                    gb.as_mut_ptr(), n as isize, 1,
                );
            });
        }
        Op::Transpose(a) => {
            let (r, c) = out.dims2().expect("transpose");
            // out is [r × c], source is [c × r]
            accumulate(grads, nodes, *a, |ga| {
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] += g[i * c + j];
                    }
                }
            });
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, |ga| {
            ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
        }),
        Op::Concat { parts, axis } => {
            let out_l = layout(out.shape(), *axis);
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.shape()[*axis];
                accumulate(grads, nodes, p, |gp| {
                    for o in 0..out_l.outer {
                        for k in 0..len {
                            let src = (o * out_l.len + offset + k) * out_l.inner;
                            let dst = (o * len + k) * out_l.inner;
                            for i in 0..out_l.inner {
                                gp[dst + i] += g[src + i];
                            }
                        }
                    }
                });
                offset += len;
            }
        }
        Op::Slice { src, axis, start } => {
            let src_l = layout(nodes[*src].value.shape(), *axis);
            let len = out.shape()[*axis];
            accumulate(grads, nodes, *src, |gs| {
                for o in 0..src_l.outer {
                    for k in 0..len {
                        let dst = (o * src_l.len + start + k) * src_l.inner;
                        let from = (o * len + k) * src_l.inner;
                        for i in 0..src_l.inner {
                            gs[dst + i] += g[from + i];
                        }
                    }
                }
            });
        }
        Op::MaxAxis { src, axis, argmax } => {
            let l = layout(nodes[*src].value.shape(), *axis);
            accumulate(grads, nodes, *src, |gs| {
                for o in 0..l.outer {
                    for i in 0..l.inner {
                        let k = argmax[o * l.inner + i];
                        gs[(o * l.len + k) * l.inner + i] += g[o * l.inner + i];
                    }
                }
            });
        }
        Op::SumAxis { src, axis, scale } => {
            let l = layout(nodes[*src].value.shape(), *axis);
            accumulate(grads, nodes, *src, |gs| {
                for o in 0..l.outer {
                    for k in 0..l.len {
                        for i in 0..l.inner {
                            gs[(o * l.len + k) * l.inner + i] += scale * g[o * l.inner + i];
                        }
                    }
                }
            });
        }
        Op::SumAll(a, scale) => accumulate(grads, nodes, *a, |ga| {
            ga.iter_mut().for_each(|x| *x += scale * g[0]);
        }),
        Op::SegmentMax { src, argmax } => {
            let (_, c) = out.dims2().expect("segment max");
            accumulate(grads, nodes, *src, |gs| {
                for (j, row) in argmax.iter().enumerate() {
                    if let Some(row) = row {
                        gs[row * c + j % c] += g[j];
                    }
                }
            });
        }
        Op::SegmentMean {
            src,
            segments,
            counts,
        } => {
            let (_, c) = out.dims2().expect("segment mean");
            accumulate(grads, nodes, *src, |gs| {
                for (row, &s) in segments.iter().enumerate() {
                    let w = 1.0 / counts[s] as f64;
                    for j in 0..c {
                        gs[row * c + j] += w * g[s * c + j];
                    }
                }
            });
        }
        Op::Softmax(a) => {
            let c = *out.shape().last().expect("softmax shape");
            let y = out.data();
            accumulate(grads, nodes, *a, |ga| {
                for r in 0..y.len() / c {
                    let row = r * c..(r + 1) * c;
                    let dot: f64 = y[row.clone()].iter().zip(&g[row.clone()]).map(|(a, b)| a * b).sum();
                    for i in row {
                        ga[i] += y[i] * (g[i] - dot);
                    }
                }
            });
        }
        Op::LogSoftmax(a) => {
            let c = *out.shape().last().expect("log-softmax shape");
            let y = out.data();
            accumulate(grads, nodes, *a, |ga| {
                for r in 0..y.len() / c {
                    let row = r * c..(r + 1) * c;
                    let gsum: f64 = g[row.clone()].iter().sum();
                    for i in row {
                        ga[i] += g[i] - y[i].exp() * gsum;
                    }
                }
            });
        }
        Op::LayerNorm { src, inv_std } => {
            let c = *out.shape().last().expect("layer norm shape");
            let xhat = out.data();
            accumulate(grads, nodes, *src, |gs| {
                for (r, &istd) in inv_std.iter().enumerate() {
                    let row = r * c..(r + 1) * c;
                    let mean_g: f64 = g[row.clone()].iter().sum::<f64>() / c as f64;
                    let mean_gx: f64 = g[row.clone()]
                        .iter()
                        .zip(&xhat[row.clone()])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / c as f64;
                    for i in row {
                        gs[i] += istd * (g[i] - mean_g - xhat[i] * mean_gx);
                    }
                }
            });
        }
        Op::GatherRows { src, index } => {
            let c = *out.shape().last().expect("gather shape");
            accumulate(grads, nodes, *src, |gs| {
                for (r, &s) in index.iter().enumerate() {
                    for j in 0..c {
                        gs[s * c + j] += g[r * c + j];
                    }
                }
            });
        }
        Op::ScatterAddRows { src, index } => {
            let c = *out.shape().last().expect("scatter shape");
            accumulate(grads, nodes, *src, |gs| {
                for (r, &d) in index.iter().enumerate() {
                    for j in 0..c {
                        gs[r * c + j] += g[d * c + j];
                    }
                }
            });
        }
        Op::BceWithLogits { src, targets } => {
            let z = nodes[*src].value.data();
            accumulate(grads, nodes, *src, |gs| {
                for i in 0..z.len() {
                    let s = 1.0 / (1.0 + (-z[i]).exp());
                    gs[i] += g[i] * (s - targets[i]);
                }
            });
        }
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Borrow of the recorded value. Drop it before recording new ops.
    pub fn value(&self) -> Ref<'g, Tensor> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.rg(self.id)
    }

    /// Copy of this value with no backward edge.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant(self.to_tensor())
    }

    fn new_node(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'g> {
        self.graph.push(value, op, requires_grad)
    }

    fn binary(self, other: Var<'g>, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let b = other.value();
            if !broadcastable(a.shape(), b.shape()) {
                return Err(TensorError::shape_mismatch(name, a.shape(), b.shape()));
            }
            let nb = b.numel();
            let bd = b.data();
            let data = a.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % nb])).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        let rg = self.requires_grad() || other.requires_grad();
        let op = match name {
            "add" => Op::Add(self.id, other.id),
            "sub" => Op::Sub(self.id, other.id),
            _ => Op::Mul(self.id, other.id),
        };
        Ok(self.new_node(value, op, rg))
    }

    /// Elementwise sum; `other` may broadcast over leading axes.
    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", |a, b| a + b)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", |a, b| a - b)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", |a, b| a * b)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let value = {
            let a = self.value();
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| x * c).collect()).expect("same shape")
        };
        let rg = self.requires_grad();
        self.new_node(value, Op::Scale(self.id, c), rg)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let value = {
            let a = self.value();
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| x + c).collect()).expect("same shape")
        };
        let rg = self.requires_grad();
        self.new_node(value, Op::AddScalar(self.id), rg)
    }

    fn unary(self, kind: Unary) -> Var<'g> {
        let value = {
            let a = self.value();
            let f: fn(f64) -> f64 = match kind {
                Unary::Relu => |x| x.max(0.0),
                Unary::Sigmoid => |x| 1.0 / (1.0 + (-x).exp()),
                Unary::Tanh => f64::tanh,
                Unary::Sin => f64::sin,
                Unary::Cos => f64::cos,
                Unary::Exp => f64::exp,
                Unary::Log => f64::ln,
                Unary::Abs => f64::abs,
            };
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).expect("same shape")
        };
        let rg = self.requires_grad();
        self.new_node(value, Op::Unary(self.id, kind), rg)
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(Unary::Relu)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Unary::Sigmoid)
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(Unary::Tanh)
    }

    pub fn sin(self) -> Var<'g> {
        self.unary(Unary::Sin)
    }

    pub fn cos(self) -> Var<'g> {
        self.unary(Unary::Cos)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Unary::Exp)
    }

    pub fn log(self) -> Var<'g> {
        self.unary(Unary::Log)
    }

    pub fn abs(self) -> Var<'g> {
        self.unary(Unary::Abs)
    }

    /// `[m × k] · [k × n]`.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let b = other.value();
            let (m, k, n) = match (a.shape(), b.shape()) {
                ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
                (sa, sb) => return Err(TensorError::shape_mismatch("matmul", sa, sb)),
            };
            let mut c = vec![0.0; m * n];
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a.data().as_ptr(),
                    k as isize,
                    1,
                    b.data().as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
            Tensor::new(vec![m, n], c)?
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.new_node(value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let (r, c) = a.dims2()?;
            let d = a.data();
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
            Tensor::new(vec![c, r], out)?
        };
        let rg = self.requires_grad();
        Ok(self.new_node(value, Op::Transpose(self.id), rg))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let value = self.to_tensor().reshaped(shape.to_vec())?;
        let rg = self.requires_grad();
        Ok(self.new_node(value, Op::Reshape(self.id), rg))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts.first().ok_or(TensorError::Empty("concat"))?;
        let graph = first.graph;
        let value = {
            let nodes = graph.nodes.borrow();
            let base = nodes[first.id].value.shape().to_vec();
            if axis >= base.len() {
                return Err(TensorError::Axis { axis, shape: base });
            }
            let mut total = 0;
            for p in parts {
                let s = nodes[p.id].value.shape();
                let compatible = s.len() == base.len()
                    && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(TensorError::shape_mismatch("concat", &base, s));
                }
                total += s[axis];
            }
            let mut shape = base.clone();
            shape[axis] = total;
            let l = layout(&shape, axis);
            let mut out = vec![0.0; shape.iter().product()];
            let mut offset = 0;
            for p in parts {
                let src = nodes[p.id].value.data();
                let len = nodes[p.id].value.shape()[axis];
                for o in 0..l.outer {
                    for k in 0..len {
                        let dst = (o * l.len + offset + k) * l.inner;
                        let from = (o * len + k) * l.inner;
                        out[dst..dst + l.inner].copy_from_slice(&src[from..from + l.inner]);
                    }
                }
                offset += len;
            }
            Tensor::new(shape, out)?
        };
        let rg = parts.iter().any(|p| p.requires_grad());
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(first.new_node(value, Op::Concat { parts: ids, axis }, rg))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            if axis >= a.ndim() {
                return Err(TensorError::Axis {
                    axis,
                    shape: a.shape().to_vec(),
                });
            }
            if start > end || end > a.shape()[axis] {
                return Err(TensorError::Index {
                    op: "slice",
                    index: end,
                    bound: a.shape()[axis],
                });
            }
            let l = layout(a.shape(), axis);
            let len = end - start;
            let mut shape = a.shape().to_vec();
            shape[axis] = len;
            let mut out = Vec::with_capacity(l.outer * len * l.inner);
            for o in 0..l.outer {
                let from = (o * l.len + start) * l.inner;
                out.extend_from_slice(&a.data()[from..from + len * l.inner]);
            }
            Tensor::new(shape, out)?
        };
        let rg = self.requires_grad();
        Ok(self.new_node(value, Op::Slice { src: self.id, axis, start }, rg))
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s: Vec<usize> = shape.iter().enumerate().filter(|(i, _)| *i != axis).map(|(_, d)| *d).collect();
        if s.is_empty() {
            s.push(1);
        }
        s
    }

    /// Maximum over `axis` (axis removed). Ties resolve to the lowest index.
    pub fn max_pool(self, axis: usize) -> Result<Var<'g>> {
        let (value, argmax) = {
            let a = self.value();
            if axis >= a.ndim() || a.shape()[axis] == 0 {
                return Err(TensorError::Axis {
                    axis,
                    shape: a.shape().to_vec(),
                });
            }
            let l = layout(a.shape(), axis);
            let d = a.data();
            let mut out = vec![f64::NEG_INFINITY; l.outer * l.inner];
            let mut argmax = vec![0; l.outer * l.inner];
            for o in 0..l.outer {
                for k in 0..l.len {
                    for i in 0..l.inner {
                        let v = d[(o * l.len + k) * l.inner + i];
                        let j = o * l.inner + i;
                        if v > out[j] {
                            out[j] = v;
                            argmax[j] = k;
                        }
                    }
                }
            }
            (Tensor::new(Self::reduced_shape(a.shape(), axis), out)?, argmax)
        };
        let rg = self.requires_grad();
        Ok(self.new_node(value, Op::MaxAxis { src: self.id, axis, argmax }, rg))
    }

    fn sum_axis_scaled(self, axis: usize, mean: bool) -> Result<Var<'g>> {
        let (value, scale) = {
            let a = self.value();
            if axis >= a.ndim() || a.shape()[axis] == 0 {
                return Err(TensorError::Axis {
                    axis,
                    shape: a.shape().to_vec(),
                });
            }
            let l = layout(a.shape(), axis);
            let scale = if mean { 1.0 / l.len as f64 } else { 1.0 };
            let d = a.data();
            let mut out = vec![0.0; l.outer * l.inner];
            for o in 0..l.outer {
                for k in 0..l.len {
                    for i in 0..l.inner {
                        out[o * l.inner + i] += d[(o * l.len + k) * l.inner + i];
                    }
                }
            }
            out.iter_mut().for_each(|x| *x *= scale);
            (Tensor::new(Self::reduced_shape(a.shape(), axis), out)?, scale)
        };
        let rg = self.requires_grad();
        Ok(self.new_node(value, Op::SumAxis { src: self.id, axis, scale }, rg))
    }

    pub fn sum(self, axis: usize) -> Result<Var<'g>> {
        self.sum_axis_scaled(axis, false)
    }

    pub fn mean(self, axis: usize) -> Result<Var<'g>> {
        self.sum_axis_scaled(axis, true)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(self) -> Var<'g> {
        let value = Tensor::scalar(self.value().data().iter().sum());
        let rg = self.requires_grad();
        self.new_node(value, Op::SumAll(self.id, 1.0), rg)
    }

    pub fn mean_all(self) -> Var<'g> {
        let (value, scale) = {
            let a = self.value();
            let scale = 1.0 / a.numel().max(1) as f64;
            (Tensor::scalar(a.data().iter().sum::<f64>() * scale), scale)
        };
        let rg = self.requires_grad();
        self.new_node(value, Op::SumAll(self.id, scale), rg)
    }

    /// Row-wise maximum within each segment of a `[n × c]` input.
    /// `segments[row]` names the output row; empty segments yield zeros.
    pub fn segment_max(self, segments: &[usize], n_segments: usize) -> Result<Var<'g>> {
        let (value, argmax) = {
            let a = self.value();
            let (n, c) = a.dims2()?;
            check_index("segment_max", segments, n, n_segments)?;
            let d = a.data();
            let mut out = vec![f64::NEG_INFINITY; n_segments * c];
            let mut argmax: Vec<Option<usize>> = vec![None; n_segments * c];
            for (row, &s) in segments.iter().enumerate() {
                for j in 0..c {
                    let v = d[row * c + j];
                    let o = s * c + j;
                    if argmax[o].is_none() || v > out[o] {
                        out[o] = v;
                        argmax[o] = Some(row);
                    }
                }
            }
            for (o, a) in argmax.iter().enumerate() {
                if a.is_none() {
                    out[o] = 0.0;
                }
            }
            (Tensor::new(vec![n_segments, c], out)?, argmax)
        };
        let rg = self.requires_grad();
        Ok(self.new_node(value, Op::SegmentMax { src: self.id, argmax }, rg))
    }

    /// Row-wise mean within each segment; empty segments yield zeros.
    pub fn segment_mean(self, segments: &[usize], n_segments: usize) -> Result<Var<'g>> {
        let (value, counts) = {
            let a = self.value();
            let (n, c) = a.dims2()?;
            check_index("segment_mean", segments, n, n_segments)?;
            let d = a.data();
            let mut counts = vec![0usize; n_segments];
            let mut out = vec![0.0; n_segments * c];
            for (row, &s) in segments.iter().enumerate() {
                counts[s] += 1;
                for j in 0..c {
                    out[s * c + j] += d[row * c + j];
                }
            }
            for (s, &k) in counts.iter().enumerate() {
                if k > 0 {
                    for j in 0..c {
                        out[s * c + j] /= k as f64;
                    }
                }
            }
            (Tensor::new(vec![n_segments, c], out)?, counts)
        };
        let rg = self.requires_grad();
        Ok(self.new_node(
            value,
            Op::SegmentMean {
                src: self.id,
                segments: segments.to_vec(),
                counts,
            },
            rg,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let c = last_dim(&a)?;
            let mut out = a.data().to_vec();
            for row in out.chunks_mut(c) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    z += *x;
                }
                row.iter_mut().for_each(|x| *x /= z);
            }
            Tensor::new(a.shape().to_vec(), out)?
        };
        let rg = self.requires_grad();
        Ok(self.new_node(value, Op::Softmax(self.id), rg))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let c = last_dim(&a)?;
            let mut out = a.data().to_vec();
            for row in out.chunks_mut(c) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|x| *x -= lse);
            }
            Tensor::new(a.shape().to_vec(), out)?
        };
        let rg = self.requires_grad();
        Ok(self.new_node(value, Op::LogSoftmax(self.id), rg))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance.
    pub fn layer_norm(self, eps: f64) -> Result<Var<'g>> {
        let (value, inv_std) = {
            let a = self.value();
            let c = last_dim(&a)?;
            let mut out = a.data().to_vec();
            let mut inv_std = Vec::with_capacity(out.len() / c);
            for row in out.chunks_mut(c) {
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
                let istd = 1.0 / (var + eps).sqrt();
                row.iter_mut().for_each(|x| *x = (*x - mean) * istd);
                inv_std.push(istd);
            }
            (Tensor::new(a.shape().to_vec(), out)?, inv_std)
        };
        let rg = self.requires_grad();
        Ok(self.new_node(value, Op::LayerNorm { src: self.id, inv_std }, rg))
    }

    /// Selects rows of a `[n × c]` input.
    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let (n, c) = a.dims2()?;
            let mut out = Vec::with_capacity(index.len() * c);
            for &i in index {
                if i >= n {
                    return Err(TensorError::Index {
                        op: "gather_rows",
                        index: i,
                        bound: n,
                    });
                }
                out.extend_from_slice(a.row(i));
            }
            Tensor::new(vec![index.len(), c], out)?
        };
        let rg = self.requires_grad();
        Ok(self.new_node(
            value,
            Op::GatherRows {
                src: self.id,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Sums rows of a `[m × c]` input into `n_rows` output rows.
    pub fn scatter_add_rows(self, index: &[usize], n_rows: usize) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let (m, c) = a.dims2()?;
            check_index("scatter_add_rows", index, m, n_rows)?;
            let mut out = vec![0.0; n_rows * c];
            for (r, &d) in index.iter().enumerate() {
                for j in 0..c {
                    out[d * c + j] += a.at2(r, j);
                }
            }
            Tensor::new(vec![n_rows, c], out)?
        };
        let rg = self.requires_grad();
        Ok(self.new_node(
            value,
            Op::ScatterAddRows {
                src: self.id,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise binary cross-entropy between `sigmoid(self)` and
    /// `targets`, evaluated in the overflow-free logit form.
    pub fn bce_with_logits(self, targets: &[f64]) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            if a.numel() != targets.len() {
                return Err(TensorError::shape_mismatch("bce_with_logits", a.shape(), &[targets.len()]));
            }
            let out = a
                .data()
                .iter()
                .zip(targets)
                .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
                .collect();
            Tensor::new(a.shape().to_vec(), out)?
        };
        let rg = self.requires_grad();
        Ok(self.new_node(
            value,
            Op::BceWithLogits {
                src: self.id,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }
}

fn last_dim(t: &Tensor) -> Result<usize> {
    match t.shape().last() {
        Some(&c) if c > 0 => Ok(c),
        _ => Err(TensorError::Axis {
            axis: 0,
            shape: t.shape().to_vec(),
        }),
    }
}

fn check_index(op: &'static str, index: &[usize], rows: usize, bound: usize) -> Result<()> {
    if index.len() != rows {
        return Err(TensorError::shape_mismatch(op, &[rows], &[index.len()]));
    }
    match index.iter().find(|&&i| i >= bound) {
        Some(&i) => Err(TensorError::Index { op, index: i, bound }),
        None => Ok(()),
    }
}

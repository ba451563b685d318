//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of that scalar with respect to every node that requires one.
//! Leaves created with `requires_grad = false` (constants, frozen weights,
//! detached values) never receive gradients, and nothing flows through them.

use std::cell::RefCell;
use std::rc::Rc;

use super::kernels::{self, gemm, MatView};
use super::tensor::{self, Tensor};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Sqr(usize),
    Relu(usize),
    Gelu(usize),
    SumAxis(usize, usize),
    SumAll(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Narrow { x: usize, axis: usize, start: usize },
    Concat { xs: Vec<usize>, axis: usize },
    IndexSelect { x: usize, axis: usize, indices: Vec<usize> },
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm { x: usize, rstd: Vec<f64> },
    Conv1d { x: usize, w: usize, pad: usize },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Graph`].
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

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of its shape when no gradient reached it.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn derived(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let rg = parents.iter().any(|&p| self.needs(p));
        self.push(value, op, rg)
    }

    /// Concatenates along `axis`; all inputs must agree on the other dims.
    pub fn concat<'g>(&'g self, xs: &[Var<'g>], axis: usize) -> Var<'g> {
        assert!(!xs.is_empty(), "concat of nothing");
        let vals: Vec<Rc<Tensor>> = xs.iter().map(|v| self.value(v.id)).collect();
        let first = vals[0].shape().to_vec();
        let mut shape = first.clone();
        shape[axis] = 0;
        for v in &vals {
            assert_eq!(v.rank(), first.len(), "concat rank mismatch");
            for (d, (&a, &b)) in v.shape().iter().zip(&first).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch {:?} vs {:?}", v.shape(), first);
            }
            shape[axis] += v.shape()[axis];
        }
        let (outer, _, inner) = tensor::split_axis(&shape, axis);
        let mut data = Vec::with_capacity(tensor::numel(&shape));
        for o in 0..outer {
            for v in &vals {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.id).collect();
        self.derived(Tensor::new(shape, data), Op::Concat { xs: ids.clone(), axis }, &ids)
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if !nodes[loss.id].requires_grad {
            return Gradients { grads };
        }
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape().to_vec(), 1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, tensor::reduce_to(g, val(*a).shape()));
            accumulate(grads, nodes, *b, tensor::reduce_to(g, val(*b).shape()));
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, tensor::reduce_to(g, val(*a).shape()));
            let neg = g.map(|x| -x);
            accumulate(grads, nodes, *b, tensor::reduce_to(&neg, val(*b).shape()));
        }
        Op::Mul(a, b) => {
            if nodes[*a].requires_grad {
                let ga = tensor::broadcast_binary(g, val(*b), |x, y| x * y);
                accumulate(grads, nodes, *a, tensor::reduce_to(&ga, val(*a).shape()));
            }
            if nodes[*b].requires_grad {
                let gb = tensor::broadcast_binary(g, val(*a), |x, y| x * y);
                accumulate(grads, nodes, *b, tensor::reduce_to(&gb, val(*b).shape()));
            }
        }
        Op::Div(a, b) => {
            if nodes[*a].requires_grad {
                let ga = tensor::broadcast_binary(g, val(*b), |x, y| x / y);
                accumulate(grads, nodes, *a, tensor::reduce_to(&ga, val(*a).shape()));
            }
            if nodes[*b].requires_grad {
                // d(a/b)/db = -out / b
                let t = tensor::broadcast_binary(g, out, |x, y| -x * y);
                let gb = tensor::broadcast_binary(&t, val(*b), |x, y| x / y);
                accumulate(grads, nodes, *b, tensor::reduce_to(&gb, val(*b).shape()));
            }
        }
        Op::MatMul(a, b) => {
            let (ga, gb) = matmul_backward(val(*a), val(*b), g, nodes[*a].requires_grad, nodes[*b].requires_grad);
            if let Some(ga) = ga {
                accumulate(grads, nodes, *a, ga);
            }
            if let Some(gb) = gb {
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Scale(a, s) => accumulate(grads, nodes, *a, g.map(|x| x * s)),
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::Exp(a) => accumulate(grads, nodes, *a, tensor::broadcast_binary(g, out, |x, y| x * y)),
        Op::Log(a) => accumulate(grads, nodes, *a, tensor::broadcast_binary(g, val(*a), |x, y| x / y)),
        Op::Sqrt(a) => accumulate(grads, nodes, *a, tensor::broadcast_binary(g, out, |x, y| 0.5 * x / y)),
        Op::Sqr(a) => accumulate(grads, nodes, *a, tensor::broadcast_binary(g, val(*a), |x, y| 2.0 * x * y)),
        Op::Relu(a) => {
            accumulate(grads, nodes, *a, tensor::broadcast_binary(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 }))
        }
        Op::Gelu(a) => {
            accumulate(grads, nodes, *a, tensor::broadcast_binary(g, val(*a), |x, y| x * kernels::gelu_grad(y)))
        }
        Op::SumAxis(a, axis) => {
            let shape = val(*a).shape().to_vec();
            let (outer, len, inner) = tensor::split_axis(&shape, *axis);
            let mut data = vec![0.0; shape.iter().product()];
            for o in 0..outer {
                for l in 0..len {
                    let dst = (o * len + l) * inner;
                    data[dst..dst + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(grads, nodes, *a, Tensor::new(shape, data));
        }
        Op::SumAll(a) => {
            accumulate(grads, nodes, *a, Tensor::full(val(*a).shape().to_vec(), g.item()));
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, g.clone().reshape(val(*a).shape().to_vec())),
        Op::Permute(a, axes) => {
            let mut inv = vec![0; axes.len()];
            for (i, &ax) in axes.iter().enumerate() {
                inv[ax] = i;
            }
            accumulate(grads, nodes, *a, tensor::permute(g, &inv));
        }
        Op::Narrow { x, axis, start } => {
            let shape = val(*x).shape().to_vec();
            let (outer, len, inner) = tensor::split_axis(&shape, *axis);
            let n = g.shape()[*axis];
            let mut data = vec![0.0; shape.iter().product()];
            for o in 0..outer {
                let src = &g.data()[o * n * inner..(o + 1) * n * inner];
                let dst = (o * len + start) * inner;
                data[dst..dst + n * inner].copy_from_slice(src);
            }
            accumulate(grads, nodes, *x, Tensor::new(shape, data));
        }
        Op::Concat { xs, axis } => {
            let shape = g.shape().to_vec();
            let (outer, total, inner) = tensor::split_axis(&shape, *axis);
            let mut offset = 0;
            for &x in xs {
                let xshape = val(x).shape().to_vec();
                let n = xshape[*axis];
                if nodes[x].requires_grad {
                    let mut data = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[src..src + n * inner]);
                    }
                    accumulate(grads, nodes, x, Tensor::new(xshape, data));
                }
                offset += n;
            }
        }
        Op::IndexSelect { x, axis, indices } => {
            let shape = val(*x).shape().to_vec();
            let (outer, len, inner) = tensor::split_axis(&shape, *axis);
            let mut data = vec![0.0; shape.iter().product()];
            let k = indices.len();
            for o in 0..outer {
                for (j, &i) in indices.iter().enumerate() {
                    let src = (o * k + j) * inner;
                    let dst = (o * len + i) * inner;
                    for t in 0..inner {
                        data[dst + t] += g.data()[src + t];
                    }
                }
            }
            accumulate(grads, nodes, *x, Tensor::new(shape, data));
        }
        Op::Softmax(a) => {
            let n = *out.shape().last().unwrap();
            let mut data = vec![0.0; out.numel()];
            for ((y, gr), d) in out.data().chunks(n).zip(g.data().chunks(n)).zip(data.chunks_mut(n)) {
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for i in 0..n {
                    d[i] = y[i] * (gr[i] - dot);
                }
            }
            accumulate(grads, nodes, *a, Tensor::new(out.shape().to_vec(), data));
        }
        Op::LogSoftmax(a) => {
            let n = *out.shape().last().unwrap();
            let mut data = vec![0.0; out.numel()];
            for ((y, gr), d) in out.data().chunks(n).zip(g.data().chunks(n)).zip(data.chunks_mut(n)) {
                let s: f64 = gr.iter().sum();
                for i in 0..n {
                    d[i] = gr[i] - y[i].exp() * s;
                }
            }
            accumulate(grads, nodes, *a, Tensor::new(out.shape().to_vec(), data));
        }
        Op::LayerNorm { x, rstd } => {
            let n = *out.shape().last().unwrap();
            let mut data = vec![0.0; out.numel()];
            let rows = out.data().chunks(n).zip(g.data().chunks(n)).zip(data.chunks_mut(n));
            for (r, ((xh, gr), d)) in rows.enumerate() {
                let mg = gr.iter().sum::<f64>() / n as f64;
                let mgx = gr.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                for i in 0..n {
                    d[i] = rstd[r] * (gr[i] - mg - xh[i] * mgx);
                }
            }
            accumulate(grads, nodes, *x, Tensor::new(out.shape().to_vec(), data));
        }
        Op::Conv1d { x, w, pad } => {
            let (gx, gw) = conv1d_backward(val(*x), val(*w), g, *pad, nodes[*x].requires_grad, nodes[*w].requires_grad);
            if let Some(gx) = gx {
                accumulate(grads, nodes, *x, gx);
            }
            if let Some(gw) = gw {
                accumulate(grads, nodes, *w, gw);
            }
        }
    }
}

/// Splits `[..., m, k]` into (batch, m, k).
fn mat_dims(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "matmul needs rank >= 2, got {shape:?}");
    let r = shape.len();
    (shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1])
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Tensor {
    let (ba, m, k) = mat_dims(a.shape());
    if b.rank() == 2 {
        let (kb, n) = (b.shape()[0], b.shape()[1]);
        assert_eq!(k, kb, "matmul {:?} x {:?}", a.shape(), b.shape());
        let mut out = vec![0.0; ba * m * n];
        gemm(MatView::new(a.data(), ba * m, k), MatView::new(b.data(), k, n), &mut out, 0.0);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        return Tensor::new(shape, out);
    }
    let (bb, kb, n) = mat_dims(b.shape());
    assert_eq!(a.shape()[..a.rank() - 2], b.shape()[..b.rank() - 2], "matmul batch dims differ");
    assert_eq!((ba, k), (bb, kb), "matmul {:?} x {:?}", a.shape(), b.shape());
    let mut out = vec![0.0; ba * m * n];
    for i in 0..ba {
        gemm(
            MatView::new(&a.data()[i * m * k..], m, k),
            MatView::new(&b.data()[i * k * n..], k, n),
            &mut out[i * m * n..(i + 1) * m * n],
            0.0,
        );
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Tensor::new(shape, out)
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor, need_a: bool, need_b: bool) -> (Option<Tensor>, Option<Tensor>) {
    let (ba, m, k) = mat_dims(a.shape());
    let n = *b.shape().last().unwrap();
    if b.rank() == 2 {
        let ga = need_a.then(|| {
            let mut d = vec![0.0; ba * m * k];
            gemm(MatView::new(g.data(), ba * m, n), MatView::new(b.data(), k, n).t(), &mut d, 0.0);
            Tensor::new(a.shape().to_vec(), d)
        });
        let gb = need_b.then(|| {
            let mut d = vec![0.0; k * n];
            gemm(MatView::new(a.data(), ba * m, k).t(), MatView::new(g.data(), ba * m, n), &mut d, 0.0);
            Tensor::new(b.shape().to_vec(), d)
        });
        return (ga, gb);
    }
    let ga = need_a.then(|| {
        let mut d = vec![0.0; ba * m * k];
        for i in 0..ba {
            gemm(
                MatView::new(&g.data()[i * m * n..], m, n),
                MatView::new(&b.data()[i * k * n..], k, n).t(),
                &mut d[i * m * k..(i + 1) * m * k],
                0.0,
            );
        }
        Tensor::new(a.shape().to_vec(), d)
    });
    let gb = need_b.then(|| {
        let mut d = vec![0.0; ba * k * n];
        for i in 0..ba {
            gemm(
                MatView::new(&a.data()[i * m * k..], m, k).t(),
                MatView::new(&g.data()[i * m * n..], m, n),
                &mut d[i * k * n..(i + 1) * k * n],
                0.0,
            );
        }
        Tensor::new(b.shape().to_vec(), d)
    });
    (ga, gb)
}

fn conv1d_forward(x: &Tensor, w: &Tensor, pad: usize) -> Tensor {
    let (b, cin, len) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout, cin_w, k) = (w.dim(0), w.dim(1), w.dim(2));
    assert_eq!(cin, cin_w, "conv1d channel mismatch");
    let lout = len + 2 * pad + 1 - k;
    assert_eq!(lout, len, "conv1d supports 'same' padding only");
    let mut cols = vec![0.0; cin * k * len];
    let mut out = vec![0.0; b * cout * len];
    for i in 0..b {
        kernels::im2col(&x.data()[i * cin * len..(i + 1) * cin * len], cin, len, k, pad, &mut cols);
        gemm(
            MatView::new(w.data(), cout, cin * k),
            MatView::new(&cols, cin * k, len),
            &mut out[i * cout * len..(i + 1) * cout * len],
            0.0,
        );
    }
    Tensor::new(vec![b, cout, len], out)
}

fn conv1d_backward(x: &Tensor, w: &Tensor, g: &Tensor, pad: usize, need_x: bool, need_w: bool) -> (Option<Tensor>, Option<Tensor>) {
    let (b, cin, len) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout, _, k) = (w.dim(0), w.dim(1), w.dim(2));
    let mut cols = vec![0.0; cin * k * len];
    let mut dcols = vec![0.0; cin * k * len];
    let mut gx = need_x.then(|| vec![0.0; x.numel()]);
    let mut gw = need_w.then(|| vec![0.0; w.numel()]);
    for i in 0..b {
        let gi = &g.data()[i * cout * len..(i + 1) * cout * len];
        if let Some(gw) = gw.as_mut() {
            kernels::im2col(&x.data()[i * cin * len..(i + 1) * cin * len], cin, len, k, pad, &mut cols);
            gemm(MatView::new(gi, cout, len), MatView::new(&cols, cin * k, len).t(), gw, 1.0);
        }
        if let Some(gx) = gx.as_mut() {
            gemm(MatView::new(w.data(), cout, cin * k).t(), MatView::new(gi, cout, len), &mut dcols, 0.0);
            kernels::col2im(&dcols, cin, len, k, pad, &mut gx[i * cin * len..(i + 1) * cin * len]);
        }
    }
    (
        gx.map(|d| Tensor::new(x.shape().to_vec(), d)),
        gw.map(|d| Tensor::new(w.shape().to_vec(), d)),
    )
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.graph.nodes.borrow()[self.id].value.shape()[axis]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs(self.id)
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let v = self.value().map(f);
        self.graph.derived(v, op, &[self.id])
    }

    fn binary(self, other: Var<'g>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'g> {
        let v = tensor::broadcast_binary(&self.value(), &other.value(), f);
        self.graph.derived(v, op, &[self.id, other.id])
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'g>) -> Var<'g> {
        self.binary(other, Op::Div(self.id, other.id), |a, b| a / b)
    }

    /// Batched matrix product. `other` is either `[k, n]` (shared across the
    /// batch) or has the same leading dims as `self`.
    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        let v = matmul_forward(&self.value(), &other.value());
        self.graph.derived(v, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        self.unary(Op::Scale(self.id, s), |x| x * s)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, s: f64) -> Var<'g> {
        self.unary(Op::AddScalar(self.id), |x| x + s)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Var<'g> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn sqrt(self) -> Var<'g> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn sqr(self) -> Var<'g> {
        self.unary(Op::Sqr(self.id), |x| x * x)
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn gelu(self) -> Var<'g> {
        self.unary(Op::Gelu(self.id), kernels::gelu)
    }

    /// Sums out `axis` (the axis is removed).
    pub fn sum_axis(self, axis: usize) -> Var<'g> {
        let x = self.value();
        let (outer, len, inner) = tensor::split_axis(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        self.graph.derived(Tensor::new(shape, out), Op::SumAxis(self.id, axis), &[self.id])
    }

    pub fn mean_axis(self, axis: usize) -> Var<'g> {
        let n = self.dim(axis);
        self.sum_axis(axis).scale(1.0 / n as f64)
    }

    pub fn sum_all(self) -> Var<'g> {
        let s = self.value().sum();
        self.graph.derived(Tensor::scalar(s), Op::SumAll(self.id), &[self.id])
    }

    pub fn mean_all(self) -> Var<'g> {
        let n = self.value().numel();
        self.sum_all().scale(1.0 / n as f64)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Var<'g> {
        let v = (*self.value()).clone().reshape(shape);
        self.graph.derived(v, Op::Reshape(self.id), &[self.id])
    }

    pub fn permute(self, axes: &[usize]) -> Var<'g> {
        let v = tensor::permute(&self.value(), axes);
        self.graph.derived(v, Op::Permute(self.id, axes.to_vec()), &[self.id])
    }

    /// Swaps the last two axes.
    pub fn t(self) -> Var<'g> {
        let r = self.shape().len();
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        assert!(start + len <= x.shape()[axis], "narrow out of range");
        let indices: Vec<usize> = (start..start + len).collect();
        let v = tensor::index_select(&x, axis, &indices);
        self.graph.derived(v, Op::Narrow { x: self.id, axis, start }, &[self.id])
    }

    pub fn index_select(self, axis: usize, indices: &[usize]) -> Var<'g> {
        let v = tensor::index_select(&self.value(), axis, indices);
        self.graph.derived(v, Op::IndexSelect { x: self.id, axis, indices: indices.to_vec() }, &[self.id])
    }

    /// Repeats a size-1 leading axis `n` times.
    pub fn expand_batch(self, n: usize) -> Var<'g> {
        assert_eq!(self.dim(0), 1, "expand_batch needs a leading axis of size 1");
        self.index_select(0, &vec![0; n])
    }

    pub fn softmax(self) -> Var<'g> {
        let x = self.value();
        let n = *x.shape().last().unwrap();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.graph.derived(Tensor::new(x.shape().to_vec(), out), Op::Softmax(self.id), &[self.id])
    }

    pub fn log_softmax(self) -> Var<'g> {
        let x = self.value();
        let n = *x.shape().last().unwrap();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.graph.derived(Tensor::new(x.shape().to_vec(), out), Op::LogSoftmax(self.id), &[self.id])
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(self, eps: f64) -> Var<'g> {
        let x = self.value();
        let n = *x.shape().last().unwrap();
        let mut out = x.data().to_vec();
        let mut rstd = Vec::with_capacity(x.numel() / n);
        for row in out.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        self.graph.derived(Tensor::new(x.shape().to_vec(), out), Op::LayerNorm { x: self.id, rstd }, &[self.id])
    }

    /// Stride-1 "same" convolution of `[b, cin, len]` with `[cout, cin, k]`, odd `k`.
    pub fn conv1d(self, weight: Var<'g>) -> Var<'g> {
        let k = weight.dim(2);
        assert!(k % 2 == 1, "conv1d kernel size must be odd");
        let pad = k / 2;
        let v = conv1d_forward(&self.value(), &weight.value(), pad);
        self.graph.derived(v, Op::Conv1d { x: self.id, w: weight.id, pad }, &[self.id, weight.id])
    }

    /// Same value, cut off from the tape: no gradient flows back through it.
    pub fn detach(self) -> Var<'g> {
        let v = (*self.value()).clone();
        self.graph.constant(v)
    }
}

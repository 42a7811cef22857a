use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;
use std::fmt;

use super::kernels::{self, Conv1dDims, LayerNormCache};
use super::{strides, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Gather-map sentinel: the output element is zero.
const ZERO: usize = usize::MAX;

enum Op {
    Leaf,
    /// `b`'s shape is a suffix of `a`'s shape (broadcast over leading axes).
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        factor: f64,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Relu {
        a: usize,
    },
    Gelu {
        a: usize,
    },
    Softmax {
        a: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        cache: LayerNormCache,
    },
    Conv1d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        dims: Conv1dDims,
    },
    Gather {
        src: usize,
        map: Vec<usize>,
    },
    Concat {
        parts: Vec<usize>,
        outer: usize,
        chunk: Vec<usize>,
    },
    Sum {
        a: usize,
    },
    MaxLast {
        a: usize,
        argmax: Vec<usize>,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Reshape {
        a: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::MatMul { .. } => "matmul",
            Op::BatchMatMul { .. } => "batch_matmul",
            Op::Relu { .. } => "relu",
            Op::Gelu { .. } => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Conv1d { .. } => "conv1d",
            Op::Gather { .. } => "gather",
            Op::Concat { .. } => "concat",
            Op::Sum { .. } => "sum",
            Op::MaxLast { .. } => "max",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Reshape { .. } => "reshape",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-forward-pass operation tape.
///
/// Nodes are appended in execution order, so the node index is already a
/// topological order and backward is a single reverse sweep.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Option<Vec<Option<Tensor>>>>,
    bound: RefCell<BTreeMap<String, usize>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grads: RefCell::new(None), bound: RefCell::new(BTreeMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    /// A leaf that receives gradients.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// Binds a named parameter from `store`. Repeated binds of the same name
    /// return the same leaf, so gradients from every use accumulate.
    pub fn param<'g>(&'g self, store: &ParamStore, name: &str) -> Result<Var<'g>> {
        if let Some(&id) = self.bound.borrow().get(name) {
            return Ok(Var { graph: self, id });
        }
        let value = store.get(name).ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?.clone();
        let var = self.push_leaf(value, store.is_trainable(name));
        self.bound.borrow_mut().insert(name.to_string(), var.id);
        Ok(var)
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn push(&self, value: Tensor, op: Op, parents: &[usize]) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node { value, op, requires_grad });
        Ok(Var { graph: self, id: nodes.len() - 1 })
    }

    pub fn value(&self, var: Var<'_>) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[var.id].value)
    }

    /// Gradient of the last backward root with respect to `var`.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.grads.borrow().as_ref()?.get(var.id)?.clone()
    }

    /// Gradients of every bound trainable parameter, keyed by name.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        let grads = self.grads.borrow();
        let nodes = self.nodes.borrow();
        let mut out = BTreeMap::new();
        if let Some(grads) = grads.as_ref() {
            for (name, &id) in self.bound.borrow().iter() {
                if !nodes[id].requires_grad {
                    continue;
                }
                let g = grads[id].clone().unwrap_or_else(|| Tensor::zeros(nodes[id].value.shape()));
                out.insert(name.clone(), g);
            }
        }
        out
    }

    /// Clears stored gradients so that `backward` may run again.
    pub fn zero_grad(&self) {
        *self.grads.borrow_mut() = None;
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        assert!(std::ptr::eq(self, loss.graph), "loss belongs to another graph");
        if self.grads.borrow().is_some() {
            return Err(Error::Backward("gradients already computed; call zero_grad before a second backward".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Backward(format!("root must be scalar, got shape {:?}", root.value.shape())));
        }
        if !root.requires_grad {
            return Err(Error::Backward("root is detached from every gradient leaf".into()));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let out = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                let node = &nodes[id];
                g.filter(|_| node.requires_grad).map(|g| Tensor { shape: node.value.shape().to_vec(), data: g })
            })
            .collect();
        *self.grads.borrow_mut() = Some(out);
        Ok(())
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let nodes = self.nodes.borrow();
        let base = nodes[first.id].value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut chunk = Vec::with_capacity(parts.len());
        let inner: usize = base[axis + 1..].iter().product();
        let outer: usize = base[..axis].iter().product();
        let mut total = 0;
        for p in parts {
            assert!(std::ptr::eq(self, p.graph));
            let s = nodes[p.id].value.shape();
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(Error::shape(format!("concat shape mismatch {base:?} vs {s:?}")));
            }
            chunk.push(s[axis] * inner);
            total += s[axis];
        }
        let width: usize = chunk.iter().sum();
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            for (p, &c) in parts.iter().zip(&chunk) {
                data.extend_from_slice(&nodes[p.id].value.data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        drop(nodes);
        self.push(Tensor { shape, data }, Op::Concat { parts: ids.clone(), outer, chunk }, &ids)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, contribution: Vec<f64>) {
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
        slot => *slot = Some(contribution),
    }
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let needs = |p: usize| nodes[p].requires_grad;
    let val = |p: usize| nodes[p].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            if needs(*a) {
                accumulate(grads, *a, g.to_vec());
            }
            if needs(*b) {
                let n = nodes[*b].value.numel();
                let mut gb = vec![0.0; n];
                for chunk in g.chunks_exact(n) {
                    gb.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                }
                accumulate(grads, *b, gb);
            }
        }
        Op::Sub { a, b } => {
            if needs(*a) {
                accumulate(grads, *a, g.to_vec());
            }
            if needs(*b) {
                accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
        }
        Op::Mul { a, b } => {
            if needs(*a) {
                accumulate(grads, *a, g.iter().zip(val(*b)).map(|(x, y)| x * y).collect());
            }
            if needs(*b) {
                accumulate(grads, *b, g.iter().zip(val(*a)).map(|(x, y)| x * y).collect());
            }
        }
        Op::Scale { a, factor } => {
            accumulate(grads, *a, g.iter().map(|v| v * factor).collect());
        }
        Op::MatMul { a, b, m, k, n } => {
            if needs(*a) {
                let mut ga = vec![0.0; m * k];
                kernels::gemm_nt_acc(&mut ga, g, val(*b), *m, *n, *k);
                accumulate(grads, *a, ga);
            }
            if needs(*b) {
                let mut gb = vec![0.0; k * n];
                kernels::gemm_tn_acc(&mut gb, val(*a), g, *m, *k, *n);
                accumulate(grads, *b, gb);
            }
        }
        Op::BatchMatMul { a, b, batch, m, k, n, trans_b } => {
            let (m, k, n) = (*m, *k, *n);
            let (av, bv) = (val(*a), val(*b));
            if needs(*a) {
                let mut ga = vec![0.0; batch * m * k];
                for i in 0..*batch {
                    let gs = &g[i * m * n..(i + 1) * m * n];
                    let bs = &bv[i * k * n..(i + 1) * k * n];
                    let out = &mut ga[i * m * k..(i + 1) * m * k];
                    if *trans_b {
                        // b is [n×k]: ga = g · b
                        kernels::gemm_acc(out, gs, bs, m, n, k);
                    } else {
                        kernels::gemm_nt_acc(out, gs, bs, m, n, k);
                    }
                }
                accumulate(grads, *a, ga);
            }
            if needs(*b) {
                let mut gb = vec![0.0; batch * k * n];
                for i in 0..*batch {
                    let gs = &g[i * m * n..(i + 1) * m * n];
                    let as_ = &av[i * m * k..(i + 1) * m * k];
                    let out = &mut gb[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        // gb[n×k] = gᵀ · a
                        kernels::gemm_tn_acc(out, gs, as_, m, n, k);
                    } else {
                        kernels::gemm_tn_acc(out, as_, gs, m, k, n);
                    }
                }
                accumulate(grads, *b, gb);
            }
        }
        Op::Relu { a } => {
            let x = val(*a);
            accumulate(grads, *a, g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect());
        }
        Op::Gelu { a } => {
            let x = val(*a);
            accumulate(grads, *a, g.iter().zip(x).map(|(g, x)| g * kernels::gelu_grad(*x)).collect());
        }
        Op::Softmax { a } => {
            let y = node.value.data();
            let n = *node.value.shape().last().unwrap();
            let mut ga = vec![0.0; y.len()];
            for ((ys, gs), out) in y.chunks_exact(n).zip(g.chunks_exact(n)).zip(ga.chunks_exact_mut(n)) {
                let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                for j in 0..n {
                    out[j] = ys[j] * (gs[j] - dot);
                }
            }
            accumulate(grads, *a, ga);
        }
        Op::LayerNorm { x, gamma, beta, cache } => {
            let d = nodes[*gamma].value.numel();
            let gam = val(*gamma);
            if needs(*gamma) || needs(*beta) {
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for (gs, hs) in g.chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
                    for j in 0..d {
                        gg[j] += gs[j] * hs[j];
                        gb[j] += gs[j];
                    }
                }
                if needs(*gamma) {
                    accumulate(grads, *gamma, gg);
                }
                if needs(*beta) {
                    accumulate(grads, *beta, gb);
                }
            }
            if needs(*x) {
                let mut gx = vec![0.0; g.len()];
                for (r, ((gs, hs), out)) in
                    g.chunks_exact(d).zip(cache.xhat.chunks_exact(d)).zip(gx.chunks_exact_mut(d)).enumerate()
                {
                    let gh: Vec<f64> = gs.iter().zip(gam).map(|(g, w)| g * w).collect();
                    let mean_gh = gh.iter().sum::<f64>() / d as f64;
                    let mean_ghh = gh.iter().zip(hs).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        out[j] = cache.rstd[r] * (gh[j] - mean_gh - hs[j] * mean_ghh);
                    }
                }
                accumulate(grads, *x, gx);
            }
        }
        Op::Conv1d { x, w, bias, dims } => {
            let (dx, dw, db) = kernels::conv1d_backward(val(*x), val(*w), g, *dims);
            if needs(*x) {
                accumulate(grads, *x, dx);
            }
            if needs(*w) {
                accumulate(grads, *w, dw);
            }
            if let Some(b) = bias {
                if needs(*b) {
                    accumulate(grads, *b, db);
                }
            }
        }
        Op::Gather { src, map } => {
            let mut gs = vec![0.0; nodes[*src].value.numel()];
            for (gv, &m) in g.iter().zip(map) {
                if m != ZERO {
                    gs[m] += gv;
                }
            }
            accumulate(grads, *src, gs);
        }
        Op::Concat { parts, outer, chunk } => {
            let width: usize = chunk.iter().sum();
            let mut offset = 0;
            for (&p, &c) in parts.iter().zip(chunk) {
                if needs(p) {
                    let mut gp = Vec::with_capacity(outer * c);
                    for o in 0..*outer {
                        let start = o * width + offset;
                        gp.extend_from_slice(&g[start..start + c]);
                    }
                    accumulate(grads, p, gp);
                }
                offset += c;
            }
        }
        Op::Sum { a } => {
            accumulate(grads, *a, vec![g[0]; nodes[*a].value.numel()]);
        }
        Op::MaxLast { a, argmax } => {
            let mut ga = vec![0.0; nodes[*a].value.numel()];
            for (gv, &i) in g.iter().zip(argmax) {
                ga[i] += gv;
            }
            accumulate(grads, *a, ga);
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let k = probs.len() / labels.len();
            let scale = g[0] / labels.len() as f64;
            let mut gl = probs.clone();
            for (r, &y) in labels.iter().enumerate() {
                gl[r * k + y] -= 1.0;
            }
            gl.iter_mut().for_each(|v| *v *= scale);
            accumulate(grads, *logits, gl);
        }
        Op::Reshape { a } => accumulate(grads, *a, g.to_vec()),
    }
}

/// Visits every multi-index of `shape` in row-major order.
fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    let numel: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..numel {
        f(&idx);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

fn build_map(out_shape: &[usize], f: impl Fn(&[usize]) -> Option<usize>) -> Vec<usize> {
    let mut map = Vec::with_capacity(out_shape.iter().product());
    for_each_index(out_shape, |i| map.push(f(i).unwrap_or(ZERO)));
    map
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.graph.grad(*self)
    }

    fn same_graph(&self, other: &Var<'g>) {
        assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'g>> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let t = &nodes[self.id].value;
            Tensor { shape: t.shape().to_vec(), data: t.data().iter().map(|&x| f(x)).collect() }
        };
        self.graph.push(v, op, &[self.id])
    }

    /// Elementwise sum. `other` may also be a suffix of `self`'s shape, in
    /// which case it is broadcast over the leading axes.
    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&other);
        let v = {
            let nodes = self.graph.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (sa, sb) = (a.shape(), b.shape());
            if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
                return Err(Error::shape(format!("add: {sb:?} does not broadcast onto {sa:?}")));
            }
            let n = b.numel();
            let data = a.data().chunks_exact(n).flat_map(|c| c.iter().zip(b.data()).map(|(x, y)| x + y)).collect();
            Tensor { shape: sa.to_vec(), data }
        };
        self.graph.push(v, Op::Add { a: self.id, b: other.id }, &[self.id, other.id])
    }

    fn same_shape_binary(&self, other: Var<'g>, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_graph(&other);
        let nodes = self.graph.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        if a.shape() != b.shape() {
            return Err(Error::shape(format!("{name}: {:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor { shape: a.shape().to_vec(), data })
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.same_shape_binary(other, "sub", |x, y| x - y)?;
        self.graph.push(v, Op::Sub { a: self.id, b: other.id }, &[self.id, other.id])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.same_shape_binary(other, "mul", |x, y| x * y)?;
        self.graph.push(v, Op::Mul { a: self.id, b: other.id }, &[self.id, other.id])
    }

    pub fn scale(&self, factor: f64) -> Result<Var<'g>> {
        self.unary(Op::Scale { a: self.id, factor }, |x| x * factor)
    }

    pub fn relu(&self) -> Result<Var<'g>> {
        self.unary(Op::Relu { a: self.id }, |x| x.max(0.0))
    }

    pub fn gelu(&self) -> Result<Var<'g>> {
        self.unary(Op::Gelu { a: self.id }, kernels::gelu)
    }

    /// `[m×k] · [k×n] → [m×n]`
    pub fn matmul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&other);
        let (v, m, k, n) = {
            let nodes = self.graph.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::shape(format!("matmul: {sa:?} x {sb:?}")));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![0.0; m * n];
            kernels::gemm_acc(&mut out, a.data(), b.data(), m, k, n);
            (Tensor { shape: vec![m, n], data: out }, m, k, n)
        };
        self.graph.push(v, Op::MatMul { a: self.id, b: other.id, m, k, n }, &[self.id, other.id])
    }

    /// Batched product `[B×m×k] · [B×k×n]`, or `[B×m×k] · [B×n×k]ᵀ` when `trans_b`.
    pub fn batch_matmul(&self, other: Var<'g>, trans_b: bool) -> Result<Var<'g>> {
        self.same_graph(&other);
        let (v, batch, m, k, n) = {
            let nodes = self.graph.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (sa, sb) = (a.shape(), b.shape());
            let ok = sa.len() == 3
                && sb.len() == 3
                && sa[0] == sb[0]
                && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
            if !ok {
                return Err(Error::shape(format!("batch_matmul: {sa:?} x {sb:?} (trans_b={trans_b})")));
            }
            let (batch, m, k) = (sa[0], sa[1], sa[2]);
            let n = if trans_b { sb[1] } else { sb[2] };
            let mut out = vec![0.0; batch * m * n];
            for i in 0..batch {
                let as_ = &a.data()[i * m * k..(i + 1) * m * k];
                let bs = &b.data()[i * k * n..(i + 1) * k * n];
                let os = &mut out[i * m * n..(i + 1) * m * n];
                if trans_b {
                    kernels::gemm_nt_acc(os, as_, bs, m, k, n);
                } else {
                    kernels::gemm_acc(os, as_, bs, m, k, n);
                }
            }
            (Tensor { shape: vec![batch, m, n], data: out }, batch, m, k, n)
        };
        self.graph.push(v, Op::BatchMatMul { a: self.id, b: other.id, batch, m, k, n, trans_b }, &[self.id, other.id])
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&self) -> Result<Var<'g>> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let t = &nodes[self.id].value;
            let n = *t.shape().last().ok_or_else(|| Error::shape("softmax of a scalar"))?;
            Tensor { shape: t.shape().to_vec(), data: kernels::softmax_rows(t.data(), n) }
        };
        self.graph.push(v, Op::Softmax { a: self.id }, &[self.id])
    }

    /// Layer normalisation over the last axis followed by `gamma · x̂ + beta`.
    pub fn layer_norm(&self, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> Result<Var<'g>> {
        self.same_graph(&gamma);
        self.same_graph(&beta);
        let (v, cache) = {
            let nodes = self.graph.nodes.borrow();
            let (x, gm, bt) = (&nodes[self.id].value, &nodes[gamma.id].value, &nodes[beta.id].value);
            let d = *x.shape().last().ok_or_else(|| Error::shape("layer_norm of a scalar"))?;
            if gm.shape() != [d] || bt.shape() != [d] {
                return Err(Error::shape(format!(
                    "layer_norm: affine {:?}/{:?} for width {d}",
                    gm.shape(),
                    bt.shape()
                )));
            }
            let (out, cache) = kernels::layer_norm_rows(x.data(), gm.data(), bt.data(), d, eps);
            (Tensor { shape: x.shape().to_vec(), data: out }, cache)
        };
        self.graph.push(
            v,
            Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, cache },
            &[self.id, gamma.id, beta.id],
        )
    }

    /// Single-sample 1-D cross-correlation. `self` is `[C_in×L]`, `weight`
    /// is `[C_out×C_in×K]`, `bias` is `[C_out]`.
    pub fn conv1d(&self, weight: Var<'g>, bias: Option<Var<'g>>, stride: usize, padding: usize) -> Result<Var<'g>> {
        self.same_graph(&weight);
        let (v, dims) = {
            let nodes = self.graph.nodes.borrow();
            let (x, w) = (&nodes[self.id].value, &nodes[weight.id].value);
            let (sx, sw) = (x.shape(), w.shape());
            if sx.len() != 2 || sw.len() != 3 || sx[0] != sw[1] {
                return Err(Error::shape(format!("conv1d: input {sx:?} weight {sw:?}")));
            }
            if stride == 0 {
                return Err(Error::invalid("conv1d stride must be positive"));
            }
            let (c_in, len, c_out, kernel) = (sx[0], sx[1], sw[0], sw[2]);
            if len + 2 * padding < kernel {
                return Err(Error::shape(format!(
                    "conv1d: kernel {kernel} larger than padded input {}",
                    len + 2 * padding
                )));
            }
            let out_len = (len + 2 * padding - kernel) / stride + 1;
            let b = match bias {
                Some(b) => {
                    self.same_graph(&b);
                    let bt = &nodes[b.id].value;
                    if bt.shape() != [c_out] {
                        return Err(Error::shape(format!("conv1d bias {:?}", bt.shape())));
                    }
                    Some(bt.data())
                }
                None => None,
            };
            let dims = Conv1dDims { c_in, len, c_out, kernel, stride, padding, out_len };
            let y = kernels::conv1d_forward(x.data(), w.data(), b, dims);
            (Tensor { shape: vec![c_out, out_len], data: y }, dims)
        };
        let mut parents = vec![self.id, weight.id];
        parents.extend(bias.map(|b| b.id));
        self.graph.push(v, Op::Conv1d { x: self.id, w: weight.id, bias: bias.map(|b| b.id), dims }, &parents)
    }

    /// Sum of all elements (scalar).
    pub fn sum(&self) -> Result<Var<'g>> {
        let s = self.graph.nodes.borrow()[self.id].value.data().iter().sum();
        self.graph.push(Tensor::scalar(s), Op::Sum { a: self.id }, &[self.id])
    }

    pub fn mean(&self) -> Result<Var<'g>> {
        let n = self.graph.nodes.borrow()[self.id].value.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Maximum over the last axis; ties resolve to the first index.
    pub fn max_last(&self) -> Result<Var<'g>> {
        let (v, argmax) = {
            let nodes = self.graph.nodes.borrow();
            let t = &nodes[self.id].value;
            let n = *t.shape().last().ok_or_else(|| Error::shape("max of a scalar"))?;
            let mut vals = Vec::with_capacity(t.numel() / n);
            let mut arg = Vec::with_capacity(t.numel() / n);
            for (r, row) in t.data().chunks_exact(n).enumerate() {
                let mut best = 0;
                for j in 1..n {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                vals.push(row[best]);
                arg.push(r * n + best);
            }
            let shape = t.shape()[..t.ndim() - 1].to_vec();
            (Tensor { shape, data: vals }, arg)
        };
        self.graph.push(v, Op::MaxLast { a: self.id, argmax }, &[self.id])
    }

    /// Mean negative log-likelihood of `labels` under `softmax(self)` for
    /// logits of shape `[B×K]`.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<'g>> {
        let (v, probs) = {
            let nodes = self.graph.nodes.borrow();
            let t = &nodes[self.id].value;
            let s = t.shape();
            if s.len() != 2 || s[0] != labels.len() {
                return Err(Error::shape(format!("cross_entropy: logits {s:?} for {} labels", labels.len())));
            }
            let k = s[1];
            if let Some(bad) = labels.iter().find(|&&y| y >= k) {
                return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
            }
            let probs = kernels::softmax_rows(t.data(), k);
            let mut loss = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                let row = &t.data()[r * k..(r + 1) * k];
                let mut arg = 0;
                for j in 1..k {
                    if row[j] > row[arg] {
                        arg = j;
                    }
                }
                let max = row[arg];
                // the argmax term is exactly 1; ln_1p keeps tiny losses positive
                let rest: f64 = (0..k).filter(|&j| j != arg).map(|j| (row[j] - max).exp()).sum();
                loss += (max - row[y]) + rest.ln_1p();
            }
            (Tensor::scalar(loss / labels.len() as f64), probs)
        };
        self.graph.push(v, Op::CrossEntropy { logits: self.id, labels: labels.to_vec(), probs }, &[self.id])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value().reshape(shape)?;
        self.graph.push(v, Op::Reshape { a: self.id }, &[self.id])
    }

    fn gather(&self, out_shape: Vec<usize>, map: Vec<usize>) -> Result<Var<'g>> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            let src = nodes[self.id].value.data();
            let data = map.iter().map(|&m| if m == ZERO { 0.0 } else { src[m] }).collect();
            Tensor { shape: out_shape, data }
        };
        self.graph.push(v, Op::Gather { src: self.id, map }, &[self.id])
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<'g>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::shape(format!("permute {axes:?} invalid for {shape:?}")));
        }
        let st = strides(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let map = build_map(&out_shape, |i| Some(i.iter().zip(axes).map(|(&ix, &a)| ix * st[a]).sum()));
        self.gather(out_shape, map)
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'g>> {
        let n = self.shape().len();
        if n < 2 {
            return Err(Error::shape("transpose needs at least two axes"));
        }
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 1, n - 2);
        self.permute(&axes)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(format!("narrow({axis}, {start}, {len}) of {shape:?}")));
        }
        let st = strides(&shape);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let map = build_map(&out_shape, |i| {
            Some(i.iter().enumerate().map(|(ax, &ix)| (ix + if ax == axis { start } else { 0 }) * st[ax]).sum())
        });
        self.gather(out_shape, map)
    }

    /// Zero-pads each axis by `(before, after)`.
    pub fn pad(&self, pads: &[(usize, usize)]) -> Result<Var<'g>> {
        let shape = self.shape();
        if pads.len() != shape.len() {
            return Err(Error::shape(format!("pad spec {pads:?} for {shape:?}")));
        }
        if pads.iter().all(|&(b, a)| b == 0 && a == 0) {
            return Ok(*self);
        }
        let st = strides(&shape);
        let out_shape: Vec<usize> = shape.iter().zip(pads).map(|(s, (b, a))| s + b + a).collect();
        let map = build_map(&out_shape, |i| {
            let mut off = 0;
            for ax in 0..i.len() {
                let src = i[ax].checked_sub(pads[ax].0)?;
                if src >= shape[ax] {
                    return None;
                }
                off += src * st[ax];
            }
            Some(off)
        });
        self.gather(out_shape, map)
    }

    /// Cyclic shift along `axis`: `out[i] = in[(i − shift) mod n]`.
    pub fn roll(&self, axis: usize, shift: isize) -> Result<Var<'g>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape(format!("roll axis {axis} for {shape:?}")));
        }
        let n = shape[axis] as isize;
        if shift.rem_euclid(n) == 0 {
            return Ok(*self);
        }
        let st = strides(&shape);
        let map = build_map(&shape, |i| {
            Some(
                i.iter()
                    .enumerate()
                    .map(|(ax, &ix)| {
                        let src = if ax == axis { (ix as isize - shift).rem_euclid(n) as usize } else { ix };
                        src * st[ax]
                    })
                    .sum(),
            )
        });
        self.gather(shape, map)
    }

    /// Selects rows of a 2-D table (embedding lookup).
    pub fn index_rows(&self, rows: &[usize]) -> Result<Var<'g>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::shape(format!("index_rows on {shape:?}")));
        }
        if let Some(bad) = rows.iter().find(|&&r| r >= shape[0]) {
            return Err(Error::invalid(format!("row index {bad} out of range for {} rows", shape[0])));
        }
        if rows.is_empty() {
            return Err(Error::invalid("index_rows with no rows"));
        }
        let cols = shape[1];
        let map = rows.iter().flat_map(|&r| (0..cols).map(move |c| r * cols + c)).collect();
        self.gather(vec![rows.len(), cols], map)
    }

    /// Gathers elements by flat index (`None` yields zero).
    pub fn take(&self, out_shape: &[usize], indices: &[Option<usize>]) -> Result<Var<'g>> {
        let numel = self.graph.nodes.borrow()[self.id].value.numel();
        if out_shape.iter().product::<usize>() != indices.len() {
            return Err(Error::shape("take: index count does not match output shape"));
        }
        if indices.iter().flatten().any(|&i| i >= numel) {
            return Err(Error::invalid("take: index out of range"));
        }
        let map = indices.iter().map(|i| i.unwrap_or(ZERO)).collect();
        self.gather(out_shape.to_vec(), map)
    }
}

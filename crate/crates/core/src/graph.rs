//! Reverse-mode automatic differentiation over dense tensors.
//!
//! The graph is built eagerly: every op computes its value when the node
//! is created, so construction doubles as the forward pass and
//! [`Graph::forward`] returns the cached result. [`Graph::backward`]
//! walks the nodes in reverse construction order (construction order is
//! topological by design) and returns gradients for every
//! `requires_grad` leaf.
//!
//! Non-differentiable points use fixed subgradients: `abs` is 0 at the
//! origin, elementwise `min` routes ties to the first operand, `clamp`
//! is 0 at its bounds. Every op checks its output for non-finite values
//! so numeric blow-ups surface at the op that produced them.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{broadcasts_to, Tensor};
use std::collections::HashMap;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Inverse of [`NodeId::index`], for code that walks a graph by
    /// construction order.
    pub fn from_index(i: usize) -> Self {
        NodeId(i as u32)
    }
}

/// Operation tag. Public so verification code can interpret a graph
/// independently of the built-in evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    /// Elementwise binary minimum; ties route gradient to the first input.
    Min,
    Clamp {
        lo: f32,
        hi: f32,
    },
    Sum,
    Mean,
    MatMul,
    Transpose2,
    Conv2d {
        stride: usize,
    },
    AvgPool2d {
        k: usize,
        stride: usize,
        same: bool,
    },
    Upsample2x,
    /// Bilinear sampling; inputs are `[source, coords]`.
    GridSample,
    /// 1.0 where coords land inside the source rectangle; no gradient.
    InBoundsMask {
        h: usize,
        w: usize,
    },
    Concat {
        axis: usize,
    },
    Slice {
        offset: Vec<usize>,
        size: Vec<usize>,
    },
    Reshape,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// An eagerly evaluated autodiff graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.index()].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.index()].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.index()].inputs
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.index()].requires_grad
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.index()].value.shape()
    }

    /// Add a leaf. Leaf values must be finite; that is a caller contract.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        assert!(value.is_all_finite(), "leaf value must be finite");
        self.push(Op::Leaf, vec![], value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: f32) -> NodeId {
        self.leaf(Tensor::scalar(v), false)
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        id
    }

    fn push_op(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> Result<NodeId> {
        if !value.is_all_finite() {
            return Err(Error::NonFinite {
                op: op_name(&op),
            });
        }
        let rg = !matches!(op, Op::InBoundsMask { .. })
            && inputs.iter().any(|&i| self.nodes[i.index()].requires_grad);
        Ok(self.push(op, inputs, value, rg))
    }

    // ---- elementwise binary with suffix broadcasting ----

    fn ew_binary(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.index()].value, &self.nodes[b.index()].value);
        let value = if broadcasts_to(vb.shape(), va.shape()) {
            let nb = vb.numel();
            let data = va
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, vb.data()[i % nb]))
                .collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if broadcasts_to(va.shape(), vb.shape()) {
            let na = va.numel();
            let data = vb
                .data()
                .iter()
                .enumerate()
                .map(|(i, &y)| f(va.data()[i % na], y))
                .collect();
            Tensor::new(vb.shape().to_vec(), data)?
        } else {
            return Err(Error::ShapeMismatch {
                op: op_name(&op),
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        };
        self.push_op(op, vec![a, b], value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew_binary(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew_binary(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew_binary(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew_binary(Op::Div, a, b, |x, y| x / y)
    }

    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.ew_binary(Op::Min, a, b, |x, y| if x <= y { x } else { y })
    }

    // ---- elementwise unary ----

    fn ew_unary(&mut self, op: Op, a: NodeId, f: impl Fn(f32) -> f32) -> Result<NodeId> {
        let value = self.nodes[a.index()].value.map(&f);
        self.push_op(op, vec![a], value)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.ew_unary(Op::Neg, a, |x| -x)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.ew_unary(Op::Exp, a, f32::exp)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.ew_unary(Op::Log, a, f32::ln)
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.ew_unary(Op::Sqrt, a, f32::sqrt)
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.ew_unary(Op::Abs, a, f32::abs)
    }

    pub fn sin(&mut self, a: NodeId) -> Result<NodeId> {
        self.ew_unary(Op::Sin, a, f32::sin)
    }

    pub fn cos(&mut self, a: NodeId) -> Result<NodeId> {
        self.ew_unary(Op::Cos, a, f32::cos)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f32, hi: f32) -> Result<NodeId> {
        self.ew_unary(Op::Clamp { lo, hi }, a, |x| x.clamp(lo, hi))
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.nodes[a.index()].value.sum_f64() as f32;
        self.push_op(Op::Sum, vec![a], Tensor::scalar(v))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = &self.nodes[a.index()].value;
        let v = (t.sum_f64() / t.numel() as f64) as f32;
        self.push_op(Op::Mean, vec![a], Tensor::scalar(v))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.index()].value, &self.nodes[b.index()].value);
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_forward(va.data(), vb.data(), (m, k, n), &mut out);
        self.push_op(Op::MatMul, vec![a, b], Tensor::new(vec![m, n], out)?)
    }

    pub fn transpose2(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.index()].value;
        let s = va.shape();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose2",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (s[0], s[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = va.data()[i * n + j];
            }
        }
        self.push_op(Op::Transpose2, vec![a], Tensor::new(vec![n, m], out)?)
    }

    // ---- spatial ops ----

    /// Zero-padded convolution over `[H, W, Cin]` with weights
    /// `[kh, kw, Cin, Cout]`; padding is `k/2` per side.
    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, stride: usize) -> Result<NodeId> {
        let (vi, vw) = (
            &self.nodes[input.index()].value,
            &self.nodes[weight.index()].value,
        );
        let (si, sw) = (vi.shape(), vw.shape());
        if si.len() != 3 || sw.len() != 4 || si[2] != sw[2] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: si.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (h, w, cin) = (si[0], si[1], si[2]);
        let (kh, kw, cout) = (sw[0], sw[1], sw[3]);
        let (ph, pw) = (kh / 2, kw / 2);
        let oh = (h + 2 * ph - kh) / stride + 1;
        let ow = (w + 2 * pw - kw) / stride + 1;
        let mut out = vec![0.0; oh * ow * cout];
        kernels::conv2d_forward(
            vi.data(),
            (h, w, cin),
            vw.data(),
            (kh, kw, cout),
            stride,
            &mut out,
            (oh, ow),
        );
        self.push_op(
            Op::Conv2d { stride },
            vec![input, weight],
            Tensor::new(vec![oh, ow, cout], out)?,
        )
    }

    pub fn avg_pool2d(&mut self, input: NodeId, k: usize, stride: usize, same: bool) -> Result<NodeId> {
        let vi = &self.nodes[input.index()].value;
        let s = vi.shape();
        if s.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "avg_pool2d",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let p = if same { k / 2 } else { 0 };
        if !same && (h < k || w < k) {
            return Err(Error::ShapeMismatch {
                op: "avg_pool2d",
                lhs: s.to_vec(),
                rhs: vec![k, k],
            });
        }
        let oh = (h + 2 * p - k) / stride + 1;
        let ow = (w + 2 * p - k) / stride + 1;
        let mut out = vec![0.0; oh * ow * c];
        kernels::avg_pool2d_forward(vi.data(), (h, w, c), k, stride, same, &mut out, (oh, ow));
        self.push_op(
            Op::AvgPool2d { k, stride, same },
            vec![input],
            Tensor::new(vec![oh, ow, c], out)?,
        )
    }

    pub fn upsample2x(&mut self, input: NodeId) -> Result<NodeId> {
        let vi = &self.nodes[input.index()].value;
        let s = vi.shape();
        if s.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "upsample2x",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let mut out = vec![0.0; h * 2 * w * 2 * c];
        kernels::upsample2x_forward(vi.data(), (h, w, c), &mut out);
        self.push_op(
            Op::Upsample2x,
            vec![input],
            Tensor::new(vec![h * 2, w * 2, c], out)?,
        )
    }

    /// Bilinear sampling of `source` `[H, W, C]` at `coords` `[Ho, Wo, 2]`
    /// given as (x, y) source pixel positions. Out-of-bounds taps
    /// contribute zero. Differentiable in both source and coords.
    pub fn grid_sample(&mut self, source: NodeId, coords: NodeId) -> Result<NodeId> {
        let (vs, vc) = (
            &self.nodes[source.index()].value,
            &self.nodes[coords.index()].value,
        );
        let (ss, sc) = (vs.shape(), vc.shape());
        if ss.len() != 3 || sc.len() != 3 || sc[2] != 2 {
            return Err(Error::ShapeMismatch {
                op: "grid_sample",
                lhs: ss.to_vec(),
                rhs: sc.to_vec(),
            });
        }
        let (h, w, c) = (ss[0], ss[1], ss[2]);
        let (oh, ow) = (sc[0], sc[1]);
        let mut out = vec![0.0; oh * ow * c];
        kernels::grid_sample_forward(vs.data(), (h, w, c), vc.data(), oh * ow, &mut out);
        self.push_op(
            Op::GridSample,
            vec![source, coords],
            Tensor::new(vec![oh, ow, c], out)?,
        )
    }

    /// Validity of sample coordinates against an `h` x `w` source: 1.0
    /// where `0 <= x <= w-1` and `0 <= y <= h-1`, else 0.0. Carries no
    /// gradient by construction.
    pub fn in_bounds_mask(&mut self, coords: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let vc = &self.nodes[coords.index()].value;
        let sc = vc.shape();
        if sc.len() != 3 || sc[2] != 2 {
            return Err(Error::ShapeMismatch {
                op: "in_bounds_mask",
                lhs: sc.to_vec(),
                rhs: vec![],
            });
        }
        let n = sc[0] * sc[1];
        let mut out = vec![0.0; n];
        for i in 0..n {
            let x = vc.data()[i * 2];
            let y = vc.data()[i * 2 + 1];
            if x >= 0.0 && x <= (w - 1) as f32 && y >= 0.0 && y <= (h - 1) as f32 {
                out[i] = 1.0;
            }
        }
        self.push_op(
            Op::InBoundsMask { h, w },
            vec![coords],
            Tensor::new(vec![sc[0], sc[1]], out)?,
        )
    }

    // ---- structure ----

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        assert!(!parts.is_empty());
        let first = self.nodes[parts[0].index()].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first,
                rhs: vec![axis],
            });
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.nodes[p.index()].value.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; out_shape.iter().product()];
        let mut axis_off = 0usize;
        for &p in parts {
            let v = &self.nodes[p.index()].value;
            let pa = v.shape()[axis];
            for o in 0..outer {
                let src = &v.data()[o * pa * inner..(o + 1) * pa * inner];
                let dst_start = (o * axis_total + axis_off) * inner;
                out[dst_start..dst_start + pa * inner].copy_from_slice(src);
            }
            axis_off += pa;
        }
        self.push_op(Op::Concat { axis }, parts.to_vec(), Tensor::new(out_shape, out)?)
    }

    pub fn slice(&mut self, input: NodeId, offset: &[usize], size: &[usize]) -> Result<NodeId> {
        let vi = &self.nodes[input.index()].value;
        let s = vi.shape();
        if offset.len() != s.len()
            || size.len() != s.len()
            || offset
                .iter()
                .zip(size)
                .zip(s)
                .any(|((&o, &z), &d)| o + z > d || z == 0)
        {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: s.to_vec(),
                rhs: size.to_vec(),
            });
        }
        let numel: usize = size.iter().product();
        let mut out = vec![0.0; numel];
        let rank = s.len();
        let mut idx = vec![0usize; rank];
        for slot in out.iter_mut() {
            let mut off = 0usize;
            for d in 0..rank {
                off = off * s[d] + offset[d] + idx[d];
            }
            *slot = vi.data()[off];
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < size[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        self.push_op(
            Op::Slice {
                offset: offset.to_vec(),
                size: size.to_vec(),
            },
            vec![input],
            Tensor::new(size.to_vec(), out)?,
        )
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.nodes[input.index()].value.reshaped(shape)?;
        self.push_op(Op::Reshape, vec![input], value)
    }

    // ---- composite helpers ----

    /// Multiply by a constant scalar.
    pub fn scale(&mut self, a: NodeId, factor: f32) -> Result<NodeId> {
        let s = self.scalar(factor);
        self.mul(a, s)
    }

    /// Add a constant scalar.
    pub fn offset(&mut self, a: NodeId, delta: f32) -> Result<NodeId> {
        let s = self.scalar(delta);
        self.add(a, s)
    }

    /// Numerically safe logistic: the argument is clamped to +-30 where
    /// the output saturates anyway, keeping `exp` inside f32 range.
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let c = self.clamp(a, -30.0, 30.0)?;
        let n = self.neg(c)?;
        let e = self.exp(n)?;
        let e1 = self.offset(e, 1.0)?;
        let one = self.scalar(1.0);
        self.div(one, e1)
    }

    /// Leaky rectifier expressed as `a*x + b*|x|`, which equals `x` for
    /// positive inputs and `alpha*x` for negative ones.
    pub fn leaky_relu(&mut self, x: NodeId, alpha: f32) -> Result<NodeId> {
        let ax = self.scale(x, 0.5 * (1.0 + alpha))?;
        let abs = self.abs(x)?;
        let babs = self.scale(abs, 0.5 * (1.0 - alpha))?;
        self.add(ax, babs)
    }

    // ---- evaluation ----

    /// Value at `root`. Construction is the forward pass, so this returns
    /// the cached tensor.
    pub fn forward(&self, root: NodeId) -> Result<Tensor> {
        Ok(self.nodes[root.index()].value.clone())
    }

    /// Gradients of the scalar at `root` with respect to every
    /// `requires_grad` leaf, as a map from leaf id to a tensor of the
    /// leaf's shape.
    pub fn backward(&self, root: NodeId) -> Result<HashMap<NodeId, Tensor>> {
        let root_node = &self.nodes[root.index()];
        if root_node.value.numel() != 1 {
            return Err(Error::RootNotScalar {
                shape: root_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !root_node.requires_grad {
            return Ok(HashMap::new());
        }
        grads[root.index()] = Some(Tensor::new(
            root_node.value.shape().to_vec(),
            vec![1.0],
        )?);

        for i in (0..=root.index()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else { continue };
            self.propagate(i, &grad, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(grad);
            }
        }

        let mut out = HashMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if matches!(self.nodes[i].op, Op::Leaf) {
                    out.insert(NodeId(i as u32), g);
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) {
        if !self.nodes[id.index()].requires_grad {
            return;
        }
        match &mut grads[id.index()] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(contrib.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    /// Reduce `grad` (shaped like `big`) down to `small_shape` by summing
    /// over broadcast (leading) positions.
    fn reduce_to(&self, grad: &[f32], small_shape: &[usize]) -> Tensor {
        let ns: usize = small_shape.iter().product();
        let mut out = vec![0.0f32; ns];
        for (i, &g) in grad.iter().enumerate() {
            out[i % ns] += g;
        }
        Tensor::new(small_shape.to_vec(), out).expect("reduce_to shape")
    }

    fn binary_grads(
        &self,
        grads: &mut [Option<Tensor>],
        a: NodeId,
        b: NodeId,
        ga_full: Vec<f32>,
        gb_full: Vec<f32>,
        out_shape: &[usize],
    ) {
        let sa = self.nodes[a.index()].value.shape().to_vec();
        let sb = self.nodes[b.index()].value.shape().to_vec();
        if self.nodes[a.index()].requires_grad {
            let t = if sa == out_shape {
                Tensor::new(sa, ga_full).expect("grad shape")
            } else {
                self.reduce_to(&ga_full, &sa)
            };
            self.accumulate(grads, a, t);
        }
        if self.nodes[b.index()].requires_grad {
            let t = if sb == out_shape {
                Tensor::new(sb, gb_full).expect("grad shape")
            } else {
                self.reduce_to(&gb_full, &sb)
            };
            self.accumulate(grads, b, t);
        }
    }

    /// Value of input `i` broadcast-expanded to the output element index.
    #[inline]
    fn bval(&self, id: NodeId, i: usize) -> f32 {
        let v = &self.nodes[id.index()].value;
        v.data()[i % v.numel()]
    }

    fn propagate(&self, i: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let ins = &node.inputs;
        let g = grad.data();
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf | Op::InBoundsMask { .. } => {}
            Op::Add => {
                let (a, b) = (ins[0], ins[1]);
                self.binary_grads(grads, a, b, g.to_vec(), g.to_vec(), out_shape);
            }
            Op::Sub => {
                let (a, b) = (ins[0], ins[1]);
                let gb = g.iter().map(|&v| -v).collect();
                self.binary_grads(grads, a, b, g.to_vec(), gb, out_shape);
            }
            Op::Mul => {
                let (a, b) = (ins[0], ins[1]);
                let ga = g
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * self.bval(b, i))
                    .collect();
                let gb = g
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * self.bval(a, i))
                    .collect();
                self.binary_grads(grads, a, b, ga, gb, out_shape);
            }
            Op::Div => {
                let (a, b) = (ins[0], ins[1]);
                let ga = g
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v / self.bval(b, i))
                    .collect();
                let gb = g
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let bv = self.bval(b, i);
                        -v * self.bval(a, i) / (bv * bv)
                    })
                    .collect();
                self.binary_grads(grads, a, b, ga, gb, out_shape);
            }
            Op::Min => {
                let (a, b) = (ins[0], ins[1]);
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; g.len()];
                for (i, &v) in g.iter().enumerate() {
                    if self.bval(a, i) <= self.bval(b, i) {
                        ga[i] = v;
                    } else {
                        gb[i] = v;
                    }
                }
                self.binary_grads(grads, a, b, ga, gb, out_shape);
            }
            Op::Neg => {
                let t = Tensor::new(out_shape.to_vec(), g.iter().map(|&v| -v).collect())
                    .expect("grad shape");
                self.accumulate(grads, ins[0], t);
            }
            Op::Exp => {
                let y = node.value.data();
                let t = Tensor::new(
                    out_shape.to_vec(),
                    g.iter().zip(y).map(|(&v, &e)| v * e).collect(),
                )
                .expect("grad shape");
                self.accumulate(grads, ins[0], t);
            }
            Op::Log => {
                let x = self.nodes[ins[0].index()].value.data();
                let t = Tensor::new(
                    out_shape.to_vec(),
                    g.iter().zip(x).map(|(&v, &xv)| v / xv).collect(),
                )
                .expect("grad shape");
                self.accumulate(grads, ins[0], t);
            }
            Op::Sqrt => {
                let y = node.value.data();
                let t = Tensor::new(
                    out_shape.to_vec(),
                    g.iter().zip(y).map(|(&v, &s)| v * 0.5 / s).collect(),
                )
                .expect("grad shape");
                self.accumulate(grads, ins[0], t);
            }
            Op::Abs => {
                let x = self.nodes[ins[0].index()].value.data();
                let t = Tensor::new(
                    out_shape.to_vec(),
                    g.iter()
                        .zip(x)
                        .map(|(&v, &xv)| {
                            if xv > 0.0 {
                                v
                            } else if xv < 0.0 {
                                -v
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                )
                .expect("grad shape");
                self.accumulate(grads, ins[0], t);
            }
            Op::Sin => {
                let x = self.nodes[ins[0].index()].value.data();
                let t = Tensor::new(
                    out_shape.to_vec(),
                    g.iter().zip(x).map(|(&v, &xv)| v * xv.cos()).collect(),
                )
                .expect("grad shape");
                self.accumulate(grads, ins[0], t);
            }
            Op::Cos => {
                let x = self.nodes[ins[0].index()].value.data();
                let t = Tensor::new(
                    out_shape.to_vec(),
                    g.iter().zip(x).map(|(&v, &xv)| -v * xv.sin()).collect(),
                )
                .expect("grad shape");
                self.accumulate(grads, ins[0], t);
            }
            Op::Clamp { lo, hi } => {
                let x = self.nodes[ins[0].index()].value.data();
                let t = Tensor::new(
                    out_shape.to_vec(),
                    g.iter()
                        .zip(x)
                        .map(|(&v, &xv)| if xv > *lo && xv < *hi { v } else { 0.0 })
                        .collect(),
                )
                .expect("grad shape");
                self.accumulate(grads, ins[0], t);
            }
            Op::Sum => {
                let shape = self.nodes[ins[0].index()].value.shape().to_vec();
                let n: usize = shape.iter().product();
                self.accumulate(
                    grads,
                    ins[0],
                    Tensor::new(shape, vec![g[0]; n]).expect("grad shape"),
                );
            }
            Op::Mean => {
                let shape = self.nodes[ins[0].index()].value.shape().to_vec();
                let n: usize = shape.iter().product();
                let v = g[0] / n as f32;
                self.accumulate(
                    grads,
                    ins[0],
                    Tensor::new(shape, vec![v; n]).expect("grad shape"),
                );
            }
            Op::MatMul => {
                let (a, b) = (ins[0], ins[1]);
                let va = &self.nodes[a.index()].value;
                let vb = &self.nodes[b.index()].value;
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                kernels::matmul_backward(va.data(), vb.data(), (m, k, n), g, &mut ga, &mut gb);
                if self.nodes[a.index()].requires_grad {
                    self.accumulate(grads, a, Tensor::new(vec![m, k], ga).expect("grad shape"));
                }
                if self.nodes[b.index()].requires_grad {
                    self.accumulate(grads, b, Tensor::new(vec![k, n], gb).expect("grad shape"));
                }
            }
            Op::Transpose2 => {
                let s = self.nodes[ins[0].index()].value.shape();
                let (m, n) = (s[0], s[1]);
                let mut t = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        t[j * n + i] = g[i * m + j];
                    }
                }
                self.accumulate(grads, ins[0], Tensor::new(vec![m, n], t).expect("grad shape"));
            }
            Op::Conv2d { stride } => {
                let (inp, wt) = (ins[0], ins[1]);
                let vi = &self.nodes[inp.index()].value;
                let vw = &self.nodes[wt.index()].value;
                let (h, w, cin) = (vi.shape()[0], vi.shape()[1], vi.shape()[2]);
                let (kh, kw, cout) = (vw.shape()[0], vw.shape()[1], vw.shape()[3]);
                let (oh, ow) = (out_shape[0], out_shape[1]);
                let mut gi = vec![0.0; vi.numel()];
                let mut gw = vec![0.0; vw.numel()];
                kernels::conv2d_backward(
                    vi.data(),
                    (h, w, cin),
                    vw.data(),
                    (kh, kw, cout),
                    *stride,
                    g,
                    (oh, ow),
                    &mut gi,
                    &mut gw,
                );
                if self.nodes[inp.index()].requires_grad {
                    self.accumulate(
                        grads,
                        inp,
                        Tensor::new(vi.shape().to_vec(), gi).expect("grad shape"),
                    );
                }
                if self.nodes[wt.index()].requires_grad {
                    self.accumulate(
                        grads,
                        wt,
                        Tensor::new(vw.shape().to_vec(), gw).expect("grad shape"),
                    );
                }
            }
            Op::AvgPool2d { k, stride, same } => {
                let vi = &self.nodes[ins[0].index()].value;
                let (h, w, c) = (vi.shape()[0], vi.shape()[1], vi.shape()[2]);
                let (oh, ow) = (out_shape[0], out_shape[1]);
                let mut gi = vec![0.0; vi.numel()];
                kernels::avg_pool2d_backward((h, w, c), *k, *stride, *same, g, (oh, ow), &mut gi);
                self.accumulate(
                    grads,
                    ins[0],
                    Tensor::new(vi.shape().to_vec(), gi).expect("grad shape"),
                );
            }
            Op::Upsample2x => {
                let vi = &self.nodes[ins[0].index()].value;
                let (h, w, c) = (vi.shape()[0], vi.shape()[1], vi.shape()[2]);
                let mut gi = vec![0.0; vi.numel()];
                kernels::upsample2x_backward((h, w, c), g, &mut gi);
                self.accumulate(
                    grads,
                    ins[0],
                    Tensor::new(vi.shape().to_vec(), gi).expect("grad shape"),
                );
            }
            Op::GridSample => {
                let (src, coords) = (ins[0], ins[1]);
                let vs = &self.nodes[src.index()].value;
                let vc = &self.nodes[coords.index()].value;
                let (h, w, c) = (vs.shape()[0], vs.shape()[1], vs.shape()[2]);
                let n_out = vc.shape()[0] * vc.shape()[1];
                let mut gs = vec![0.0; vs.numel()];
                let mut gc = vec![0.0; vc.numel()];
                kernels::grid_sample_backward(
                    vs.data(),
                    (h, w, c),
                    vc.data(),
                    n_out,
                    g,
                    &mut gs,
                    &mut gc,
                );
                if self.nodes[src.index()].requires_grad {
                    self.accumulate(
                        grads,
                        src,
                        Tensor::new(vs.shape().to_vec(), gs).expect("grad shape"),
                    );
                }
                if self.nodes[coords.index()].requires_grad {
                    self.accumulate(
                        grads,
                        coords,
                        Tensor::new(vc.shape().to_vec(), gc).expect("grad shape"),
                    );
                }
            }
            Op::Concat { axis } => {
                let out_s = out_shape.to_vec();
                let outer: usize = out_s[..*axis].iter().product();
                let inner: usize = out_s[*axis + 1..].iter().product();
                let axis_total = out_s[*axis];
                let mut axis_off = 0usize;
                for &p in ins {
                    let sp = self.nodes[p.index()].value.shape().to_vec();
                    let pa = sp[*axis];
                    if self.nodes[p.index()].requires_grad {
                        let mut gp = vec![0.0; sp.iter().product()];
                        for o in 0..outer {
                            let src_start = (o * axis_total + axis_off) * inner;
                            gp[o * pa * inner..(o + 1) * pa * inner]
                                .copy_from_slice(&g[src_start..src_start + pa * inner]);
                        }
                        self.accumulate(grads, p, Tensor::new(sp, gp).expect("grad shape"));
                    }
                    axis_off += pa;
                }
            }
            Op::Slice { offset, size } => {
                let s_in = self.nodes[ins[0].index()].value.shape().to_vec();
                let mut gi = vec![0.0; s_in.iter().product()];
                let rank = s_in.len();
                let mut idx = vec![0usize; rank];
                for &gv in g.iter() {
                    let mut off = 0usize;
                    for d in 0..rank {
                        off = off * s_in[d] + offset[d] + idx[d];
                    }
                    gi[off] += gv;
                    for d in (0..rank).rev() {
                        idx[d] += 1;
                        if idx[d] < size[d] {
                            break;
                        }
                        idx[d] = 0;
                    }
                }
                self.accumulate(grads, ins[0], Tensor::new(s_in, gi).expect("grad shape"));
            }
            Op::Reshape => {
                let s_in = self.nodes[ins[0].index()].value.shape().to_vec();
                self.accumulate(
                    grads,
                    ins[0],
                    Tensor::new(s_in, g.to_vec()).expect("grad shape"),
                );
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add => "add",
        Op::Sub => "sub",
        Op::Mul => "mul",
        Op::Div => "div",
        Op::Neg => "neg",
        Op::Exp => "exp",
        Op::Log => "log",
        Op::Sqrt => "sqrt",
        Op::Abs => "abs",
        Op::Sin => "sin",
        Op::Cos => "cos",
        Op::Min => "min",
        Op::Clamp { .. } => "clamp",
        Op::Sum => "sum",
        Op::Mean => "mean",
        Op::MatMul => "matmul",
        Op::Transpose2 => "transpose2",
        Op::Conv2d { .. } => "conv2d",
        Op::AvgPool2d { .. } => "avg_pool2d",
        Op::Upsample2x => "upsample2x",
        Op::GridSample => "grid_sample",
        Op::InBoundsMask { .. } => "in_bounds_mask",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Reshape => "reshape",
    }
}

//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op applied during one forward pass. Values are
//! immutable once recorded. [`Graph::backward`] walks the tape in reverse and
//! returns [`Gradients`] for every node that depends on a differentiable
//! leaf; parameter gradients are then folded into the [`ParamStore`] with
//! [`ParamStore::accumulate`]. Only first-order derivatives are supported.
//!
//! Convolutions use cross-correlation (no kernel flip) over reflect-padded
//! input.

use std::collections::HashMap;

use crate::error::{bail, Error, Result};
use crate::numerics::kernels::{self, ConvGeom};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::{Real, Tensor};

/// Handle to a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    BiasChannel(Var, Var),
    BiasRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom, cols: Option<Vec<T>> },
    Upsample2x(Var),
    AvgPool2x(Var),
    Concat0(Vec<Var>),
    Narrow0 { x: Var, start: usize },
    Silu(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Softmax { x: Var, axis: usize },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<T>, rstd: Vec<T> },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// One forward pass worth of recorded ops.
pub struct Graph<'s, T: Real = f32> {
    nodes: Vec<Node<T>>,
    store: Option<&'s ParamStore<T>>,
    param_vars: HashMap<ParamId, Var>,
    grad_enabled: bool,
    nonfinite: Option<(usize, &'static str)>,
}

/// Gradients from one backward pass.
#[derive(Debug)]
pub struct Gradients<T: Real> {
    per_node: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.per_node.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(id, g)| (*id, g))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }
}

impl<'s, T: Real> Default for Graph<'s, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s, T: Real> Graph<'s, T> {
    /// Graph without parameters, for standalone tensor math.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            store: None,
            param_vars: HashMap::new(),
            grad_enabled: true,
            nonfinite: None,
        }
    }

    pub fn with_params(store: &'s ParamStore<T>) -> Self {
        Self { store: Some(store), ..Self::new() }
    }

    /// Forward-only graph: nothing is differentiable and no backward state
    /// is kept.
    pub fn inference(store: &'s ParamStore<T>) -> Self {
        Self { grad_enabled: false, ..Self::with_params(store) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Error if any recorded value became NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite {
            Some((i, op)) => bail!(Numeric, "non-finite value produced by {op} at node {i}"),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, name: &'static str) -> Var {
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some((self.nodes.len(), name));
        }
        let needs_grad = needs_grad && self.grad_enabled;
        self.nodes.push(Node { value, op, needs_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false, "input")
    }

    /// Differentiable input leaf (gradient reported through [`Gradients::wrt`]).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true, "leaf")
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable, "param");
        self.nodes[v.0].param = Some(id);
        self.param_vars.insert(id, v);
        v
    }

    /// Leaf for the stored parameter called `name`.
    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let store = self.store.expect("graph has no parameter store");
        match store.id(name) {
            Some(id) => Ok(self.param(id)),
            None => bail!(Config, "unknown parameter {name}"),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng, "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), ng, "sub"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng, "mul"))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a, s), ng, "scale")
    }

    /// `x[c, ...] + b[c]`.
    pub fn bias_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs.len() != 1 || xs.is_empty() || xs[0] != bs[0] {
            bail!(Dimension, "bias_channel: x {xs:?} vs bias {bs:?}");
        }
        let inner = self.value(x).len() / xs[0];
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for (c, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            for v in chunk {
                *v += bias[c];
            }
        }
        let ng = self.ng(&[x, b]);
        Ok(self.push(out, Op::BiasChannel(x, b), ng, "bias_channel"))
    }

    /// `x[n, d] + b[d]` for every row.
    pub fn bias_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if xs.len() != 2 || bs.len() != 1 || xs[1] != bs[0] {
            bail!(Dimension, "bias_row: x {xs:?} vs bias {bs:?}");
        }
        let d = xs[1];
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            for (v, &bv) in row.iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        let ng = self.ng(&[x, b]);
        Ok(self.push(out, Op::BiasRow(x, b), ng, "bias_row"))
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            bail!(Dimension, "matmul: {sa:?} · {sb:?}");
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), ng, "matmul"))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            bail!(Dimension, "transpose needs rank 2, got {s:?}");
        }
        let (r, c) = (s[0], s[1]);
        let out = kernels::transpose(self.value(a).data(), r, c);
        let ng = self.ng(&[a]);
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(a), ng, "transpose"))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(&[a]);
        Ok(self.push(out, Op::Reshape(a), ng, "reshape"))
    }

    /// Cross-correlation of `x[c_in×h×w]` with `w[c_out×c_in×k×k]` over a
    /// reflect-padded input.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 4 {
            bail!(Dimension, "conv2d: x {xs:?}, kernel {ws:?}");
        }
        let (c_in, h, wd) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        if ws[1] != c_in || ws[3] != k {
            bail!(Dimension, "conv2d: kernel {ws:?} does not fit input {xs:?}");
        }
        if k % 2 == 0 || stride == 0 {
            bail!(Dimension, "conv2d: kernel size must be odd and stride positive");
        }
        if pad >= h || pad >= wd {
            bail!(Dimension, "conv2d: reflect pad {pad} too large for {h}×{wd}");
        }
        let (hp, wp) = (h + 2 * pad, wd + 2 * pad);
        if hp < k || wp < k {
            bail!(Dimension, "conv2d: zero-size output for input {xs:?}, k={k}, pad={pad}");
        }
        let h_out = (hp - k) / stride + 1;
        let w_out = (wp - k) / stride + 1;
        let geom = ConvGeom { c_in, h, w: wd, k, stride, pad, h_out, w_out };
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let mut out = vec![T::zero(); c_out * geom.cols()];
        kernels::gemm(self.value(w).data(), &cols, &mut out, c_out, geom.rows(), geom.cols());
        let ng = self.ng(&[x, w]);
        let out = Tensor::new(&[c_out, h_out, w_out], out)?;
        let cols = ng.then_some(cols);
        Ok(self.push(out, Op::Conv2d { x, w, geom, cols }, ng, "conv2d"))
    }

    /// Nearest-neighbour ×2 upsampling of `[c×h×w]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            bail!(Dimension, "upsample2x needs [c,h,w], got {s:?}");
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); c * 4 * h * w];
        for ci in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ci * 2 * h + y) * 2 * w + xx] = src[(ci * h + y / 2) * w + xx / 2];
                }
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(&[c, 2 * h, 2 * w], out)?, Op::Upsample2x(x), ng, "upsample2x"))
    }

    /// 2×2 average pooling of `[c×h×w]` with even `h`, `w`.
    pub fn avg_pool2x(&mut self, x: Var) -> Result<Var> {
        let out = avg_pool2x(self.value(x))?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::AvgPool2x(x), ng, "avg_pool2x"))
    }

    /// Concatenate along axis 0.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat0(&tensors)?;
        let ng = self.ng(parts);
        Ok(self.push(out, Op::Concat0(parts.to_vec()), ng, "concat0"))
    }

    /// Rows `start..start+len` along axis 0.
    pub fn narrow0(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || len == 0 || start + len > s[0] {
            bail!(Dimension, "narrow0 {start}..{} out of range for {s:?}", start + len);
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Narrow0 { x, start }, ng, "narrow0"))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        let ng = self.ng(&[x]);
        self.push(out, Op::Silu(x), ng, "silu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(&[x]);
        self.push(out, Op::Sigmoid(x), ng, "sigmoid")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::exp);
        let ng = self.ng(&[x]);
        self.push(out, Op::Exp(x), ng, "exp")
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        let ng = self.ng(&[x]);
        self.push(out, Op::Square(x), ng, "square")
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(&[x]);
        self.push(out, Op::Sum(x), ng, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        let ng = self.ng(&[x]);
        self.push(out, Op::Mean(x), ng, "mean")
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = softmax(self.value(x), axis)?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::Softmax { x, axis }, ng, "softmax"))
    }

    /// Group normalization of `x[c, ...]` with per-channel affine `gamma`, `beta`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let xs = self.shape(x).to_vec();
        let c = xs[0];
        if groups == 0 || !c.is_multiple_of(groups) {
            bail!(Dimension, "group_norm: {c} channels not divisible into {groups} groups");
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            bail!(Dimension, "group_norm: affine params must have shape [{c}]");
        }
        let inner = self.value(x).len() / c;
        let per_group = c / groups * inner;
        let src = self.value(x).data();
        let (g_val, b_val) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        let mut rstd = Vec::with_capacity(groups);
        let n = T::of(per_group as f64);
        for g in 0..groups {
            let range = g * per_group..(g + 1) * per_group;
            let chunk = &src[range.clone()];
            let mean = chunk.iter().copied().sum::<T>() / n;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let r = T::one() / (var + T::of(EPS)).sqrt();
            rstd.push(r);
            for i in range {
                let ch = i / inner;
                let xh = (src[i] - mean) * r;
                xhat[i] = xh;
                out[i] = xh * g_val[ch] + b_val[ch];
            }
        }
        let ng = self.ng(&[x, gamma, beta]);
        let out = Tensor::new(&xs, out)?;
        let (xhat, rstd) = if ng { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        Ok(self.push(out, Op::GroupNorm { x, gamma, beta, groups, xhat, rstd }, ng, "group_norm"))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            bail!(Contract, "backward needs a scalar loss, got shape {:?}", self.shape(loss));
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { per_node: grads, params: Vec::new() });
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| Some((n.param?, grads[i].clone()?)))
            .collect();
        Ok(Gradients { per_node: grads, params })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut send = |v: Var, t: Tensor<T>| -> Result<()> {
            if !self.nodes[v.0].needs_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t)?,
                slot @ None => *slot = Some(t),
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.scale(-T::one()))?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, g.mul(bv)?)?;
                send(*b, g.mul(av)?)?;
            }
            Op::Scale(a, s) => send(*a, g.scale(*s))?,
            Op::BiasChannel(x, b) => {
                let c = self.shape(*b)[0];
                let inner = g.len() / c;
                let db: Vec<T> = g.data().chunks(inner).map(|ch| ch.iter().copied().sum()).collect();
                send(*x, g.clone())?;
                send(*b, Tensor::new(&[c], db)?)?;
            }
            Op::BiasRow(x, b) => {
                let d = self.shape(*b)[0];
                let mut db = vec![T::zero(); d];
                for row in g.data().chunks(d) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                send(*x, g.clone())?;
                send(*b, Tensor::new(&[d], db)?)?;
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![T::zero(); m * k];
                    kernels::gemm_a_bt(g.data(), bv.data(), &mut da, m, n, k);
                    send(*a, Tensor::new(&[m, k], da)?)?;
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![T::zero(); k * n];
                    kernels::gemm_at_b(av.data(), g.data(), &mut db, k, m, n);
                    send(*b, Tensor::new(&[k, n], db)?)?;
                }
            }
            Op::Transpose(a) => {
                let s = g.shape();
                send(*a, Tensor::new(&[s[1], s[0]], kernels::transpose(g.data(), s[0], s[1]))?)?;
            }
            Op::Reshape(a) => send(*a, g.clone().reshape(self.shape(*a))?)?,
            Op::Conv2d { x, w, geom, cols } => {
                let cols = cols.as_ref().ok_or_else(|| Error::Contract("conv2d: no saved columns".into()))?;
                let c_out = self.shape(*w)[0];
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![T::zero(); c_out * geom.rows()];
                    kernels::gemm_a_bt(g.data(), cols, &mut dw, c_out, geom.cols(), geom.rows());
                    send(*w, Tensor::new(self.shape(*w), dw)?)?;
                }
                if self.nodes[x.0].needs_grad {
                    let mut dcols = vec![T::zero(); geom.rows() * geom.cols()];
                    kernels::gemm_at_b(self.value(*w).data(), g.data(), &mut dcols, geom.rows(), c_out, geom.cols());
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    kernels::col2im(&dcols, geom, &mut dx);
                    send(*x, Tensor::new(self.shape(*x), dx)?)?;
                }
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x);
                let (c, h, w) = (s[0], s[1], s[2]);
                let mut dx = vec![T::zero(); c * h * w];
                let gd = g.data();
                for ci in 0..c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            dx[(ci * h + y / 2) * w + xx / 2] += gd[(ci * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                send(*x, Tensor::new(s, dx)?)?;
            }
            Op::AvgPool2x(x) => {
                let s = self.shape(*x);
                let (c, h, w) = (s[0], s[1], s[2]);
                let (ho, wo) = (h / 2, w / 2);
                let q = T::of(0.25);
                let gd = g.data();
                let mut dx = vec![T::zero(); c * h * w];
                for ci in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            dx[(ci * h + y) * w + xx] = gd[(ci * ho + y / 2) * wo + xx / 2] * q;
                        }
                    }
                }
                send(*x, Tensor::new(s, dx)?)?;
            }
            Op::Concat0(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let piece = g.data()[offset..offset + len].to_vec();
                    offset += len;
                    send(p, Tensor::new(self.shape(p), piece)?)?;
                }
            }
            Op::Narrow0 { x, start } => {
                let s = self.shape(*x);
                let inner: usize = s[1..].iter().product();
                let mut dx = vec![T::zero(); self.value(*x).len()];
                dx[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                send(*x, Tensor::new(s, dx)?)?;
            }
            Op::Silu(x) => {
                let d = self.value(*x).zip_map(g, |v, gv| {
                    let s = sigmoid(v);
                    gv * s * (T::one() + v * (T::one() - s))
                })?;
                send(*x, d)?;
            }
            Op::Sigmoid(x) => {
                let d = node.value.zip_map(g, |y, gv| gv * y * (T::one() - y))?;
                send(*x, d)?;
            }
            Op::Exp(x) => send(*x, node.value.mul(g)?)?,
            Op::Square(x) => {
                let two = T::of(2.0);
                send(*x, self.value(*x).zip_map(g, |v, gv| two * v * gv)?)?;
            }
            Op::Sum(x) => send(*x, Tensor::full(self.shape(*x), g.data()[0]))?,
            Op::Mean(x) => {
                let n = T::of(self.value(*x).len() as f64);
                send(*x, Tensor::full(self.shape(*x), g.data()[0] / n))?;
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let (yd, gd) = (y.data(), g.data());
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for inn in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + inn;
                        let dot: T = (0..len).map(|j| yd[idx(j)] * gd[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                send(*x, Tensor::new(y.shape(), dx)?)?;
            }
            Op::GroupNorm { x, gamma, beta, groups, xhat, rstd } => {
                let c = self.shape(*gamma)[0];
                let inner = g.len() / c;
                let per_group = c / groups * inner;
                let gamma_v = self.value(*gamma).data();
                let gd = g.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for i in 0..gd.len() {
                    let ch = i / inner;
                    dgamma[ch] += gd[i] * xhat[i];
                    dbeta[ch] += gd[i];
                }
                if self.nodes[x.0].needs_grad {
                    let n = T::of(per_group as f64);
                    let mut dx = vec![T::zero(); gd.len()];
                    for (gi, &r) in rstd.iter().enumerate() {
                        let range = gi * per_group..(gi + 1) * per_group;
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for i in range.clone() {
                            let d = gd[i] * gamma_v[i / inner];
                            mean_d += d;
                            mean_dx += d * xhat[i];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for i in range {
                            let d = gd[i] * gamma_v[i / inner];
                            dx[i] = r * (d - mean_d - xhat[i] * mean_dx);
                        }
                    }
                    send(*x, Tensor::new(self.shape(*x), dx)?)?;
                }
                send(*gamma, Tensor::new(&[c], dgamma)?)?;
                send(*beta, Tensor::new(&[c], dbeta)?)?;
            }
        }
        Ok(())
    }
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Softmax along `axis` with max subtraction.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        bail!(Dimension, "softmax axis {axis} out of range for {:?}", x.shape());
    }
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for inn in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + inn;
            let max = (0..len).map(|j| xd[idx(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..len {
                let e = (xd[idx(j)] - max).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[idx(j)] /= total;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// 2×2 average pooling of a `[c×h×w]` tensor.
pub fn avg_pool2x<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 3 || !s[1].is_multiple_of(2) || !s[2].is_multiple_of(2) {
        bail!(Dimension, "avg_pool2x needs [c,h,w] with even h,w; got {s:?}");
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    let q = T::of(0.25);
    let out = (0..c * ho * wo)
        .map(|i| {
            let (ci, r) = (i / (ho * wo), i % (ho * wo));
            let (y, xx) = (2 * (r / wo), 2 * (r % wo));
            let at = |dy: usize, dx: usize| xd[(ci * h + y + dy) * w + xx + dx];
            (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * q
        })
        .collect();
    Tensor::new(&[c, ho, wo], out)
}

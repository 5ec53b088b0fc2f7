use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::{GradBuf, Gradients, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Same,
    Valid,
}

enum Op<S> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, tb: bool },
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    MulRow { a: Var, row: Var },
    Scale { a: Var, c: S },
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Softmax { a: Var, n: usize, inner: usize },
    MaskedSoftmax { a: Var, keep: Vec<bool> },
    LayerNorm { a: Var, rstd: Vec<S> },
    Concat { parts: Vec<Var>, lens: Vec<usize>, outer: usize, inner: usize },
    Reshape(Var),
    Rows { a: Var, offset: usize },
    Sum(Var),
    Mean(Var),
    Embedding { table: Var, ids: Vec<usize>, padding_idx: Option<usize> },
    Conv2d { x: Var, k: Var, bias: Option<Var>, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
}

struct Node<S> {
    /// `None` for parameters, whose values stay in the store.
    value: Option<Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in creation order, which is a
/// topological order; [`Graph::backward`] walks it in reverse.
pub struct Graph<'p, S: Scalar> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    param_vars: Vec<Option<Var>>,
    track_params: bool,
    acc: Vec<Option<Vec<S>>>,
    acc_rows: BTreeMap<usize, BTreeMap<usize, Vec<S>>>,
}

impl<'p, S: Scalar> Graph<'p, S> {
    /// Graph whose trainable parameters record gradients.
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Self::build(params, true)
    }

    /// Graph for scoring only; parameters are treated as constants.
    pub fn inference(params: &'p ParamStore<S>) -> Self {
        Self::build(params, false)
    }

    fn build(params: &'p ParamStore<S>, track_params: bool) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            track_params,
            acc: Vec::new(),
            acc_rows: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        debug_assert!(
            value.is_finite() || !self.inputs_finite(&op),
            "non-finite output from finite inputs"
        );
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_finite(&self, op: &Op<S>) -> bool {
        let mut finite = true;
        for_each_input(op, |v| finite &= self.value(v).is_finite());
        finite
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let requires_grad = self.track_params && self.params.is_trainable(id);
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn data(&self, v: Var) -> &[S] {
        self.value(v).data()
    }

    // ---- linear algebra -------------------------------------------------

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::shape("matmul", sa, sb));
        }
        let mut out = vec![S::zero(); m * n];
        kernels::gemm(self.data(a), false, self.data(b), tb, m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, tb }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::dim("transpose", format!("expected 2-D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.data(a);
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    // ---- elementwise ------------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let out: Vec<S> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var> {
        let width = *self.shape(a).last().unwrap();
        if self.value(row).numel() != width {
            return Err(Error::shape(name, self.shape(a), self.shape(row)));
        }
        let r = self.data(row);
        let out: Vec<S> = self
            .data(a)
            .chunks(width)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| f(x, y)))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    /// Adds a vector to every slice along the last axis.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, row, |x, y| x + y, Op::AddRow { a, row })
    }

    /// Multiplies every slice along the last axis by a vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, row, |x, y| x * y, Op::MulRow { a, row })
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| f(x)).collect(),
        };
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        self.unary(a, |x| x * c, Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(S::zero()), Op::Relu(a))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    // ---- normalisation ----------------------------------------------------

    /// Softmax along `axis`, using max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.data(a);
        let mut out = vec![S::zero(); x.len()];
        for o in 0..outer {
            for q in 0..inner {
                let idx = |i: usize| (o * n + i) * inner + q;
                let max = (0..n).map(|i| x[idx(i)]).fold(S::neg_infinity(), S::max);
                let mut total = S::zero();
                for i in 0..n {
                    let e = (x[idx(i)] - max).exp();
                    out[idx(i)] = e;
                    total += e;
                }
                for i in 0..n {
                    out[idx(i)] = out[idx(i)] / total;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a, n, inner }, rg))
    }

    /// Row softmax of a `rows×n` matrix restricted to columns with `keep[j]`.
    /// Dropped columns get exactly zero weight.
    pub fn masked_softmax_rows(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || shape[1] != keep.len() {
            return Err(Error::dim(
                "masked_softmax_rows",
                format!("matrix {shape:?} with mask of length {}", keep.len()),
            ));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::Contract("softmax over an all-masked row".into()));
        }
        let n = shape[1];
        let x = self.data(a);
        let mut out = vec![S::zero(); x.len()];
        for (row_in, row_out) in x.chunks(n).zip(out.chunks_mut(n)) {
            let max = row_in
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for j in 0..n {
                if keep[j] {
                    let e = (row_in[j] - max).exp();
                    row_out[j] = e;
                    total += e;
                }
            }
            row_out.iter_mut().for_each(|v| *v = *v / total);
        }
        let rg = self.rg(a);
        let op = Op::MaskedSoftmax {
            a,
            keep: keep.to_vec(),
        };
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    /// Zero-mean, unit-variance normalisation over the last axis (no affine).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let shape = self.shape(a).to_vec();
        let width = *shape.last().unwrap();
        let x = self.data(a);
        let eps = S::of(eps);
        let n = S::of(width as f64);
        let mut out = vec![S::zero(); x.len()];
        let mut rstd = Vec::with_capacity(x.len() / width);
        for (row_in, row_out) in x.chunks(width).zip(out.chunks_mut(width)) {
            let mean = row_in.iter().copied().sum::<S>() / n;
            let var = row_in.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let r = S::one() / (var + eps).sqrt();
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - mean) * r;
            }
            rstd.push(r);
        }
        let rg = self.rg(a);
        self.push(Tensor { shape, data: out }, Op::LayerNorm { a, rstd }, rg)
    }

    // ---- structure ---------------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            lens.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&lens) {
                let d = self.data(p);
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        let op = Op::Concat {
            parts: parts.to_vec(),
            lens,
            outer,
            inner,
        };
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Rows `start..start+len` along the first axis.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if len == 0 || start + len > shape[0] {
            return Err(Error::dim(
                "rows",
                format!("rows {start}..{} out of {shape:?}", start + len),
            ));
        }
        let stride: usize = shape[1..].iter().product();
        let data = self.data(a)[start * stride..(start + len) * stride].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        let rg = self.rg(a);
        let op = Op::Rows {
            a,
            offset: start * stride,
        };
        Ok(self.push(Tensor::new(out_shape, data)?, op, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum::<S>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().copied().sum::<S>() / S::of(d.len() as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Gathers rows of a `vocab×dim` table. Gradient for `padding_idx` rows is dropped.
    pub fn embedding(&mut self, table: Var, ids: &[usize], padding_idx: Option<usize>) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::dim("embedding", format!("table must be 2-D, got {shape:?}")));
        }
        if ids.is_empty() {
            return Err(Error::dim("embedding", "empty id sequence"));
        }
        let (vocab, dim) = (shape[0], shape[1]);
        let t = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::dim("embedding", format!("id {id} outside vocabulary of {vocab}")));
            }
            out.extend_from_slice(&t[id * dim..(id + 1) * dim]);
        }
        let rg = self.rg(table);
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
            padding_idx,
        };
        Ok(self.push(Tensor::new(vec![ids.len(), dim], out)?, op, rg))
    }

    // ---- convolution -------------------------------------------------------

    /// Cross-correlation of `x[C_in×H×W]` with `kernels[C_out×C_in×kh×kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernels: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernels).to_vec();
        if xs.len() != 3 || ks.len() != 4 || xs[0] != ks[1] {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
        if let Some(b) = bias {
            if self.value(b).numel() != c_out {
                return Err(Error::shape("conv2d bias", &[c_out], self.shape(b)));
            }
        }
        let (oh, pad_top) = conv_extent(h, kh, stride, padding)
            .ok_or_else(|| Error::dim("conv2d", format!("kernel {kh}x{kw} larger than input {h}x{w}")))?;
        let (ow, pad_left) = conv_extent(w, kw, stride, padding)
            .ok_or_else(|| Error::dim("conv2d", format!("kernel {kh}x{kw} larger than input {h}x{w}")))?;
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            oh,
            ow,
        };
        let mut out = vec![S::zero(); c_out * oh * ow];
        kernels::conv2d_forward(
            &geom,
            self.data(x),
            self.data(kernels),
            bias.map(|b| self.data(b)),
            &mut out,
        );
        let rg = self.rg(x) || self.rg(kernels) || bias.is_some_and(|b| self.rg(b));
        let op = Op::Conv2d {
            x,
            k: kernels,
            bias,
            geom,
        };
        Ok(self.push(Tensor::new(vec![c_out, oh, ow], out)?, op, rg))
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim("max_pool2d", format!("expected C×H×W, got {s:?}")));
        }
        if kernel == 0 || stride == 0 {
            return Err(Error::dim("max_pool2d", "kernel and stride must be positive"));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        if h < kernel || w < kernel {
            return Err(Error::dim(
                "max_pool2d",
                format!("input {h}x{w} smaller than kernel {kernel}"),
            ));
        }
        let oh = (h - kernel) / stride + 1;
        let ow = (w - kernel) / stride + 1;
        let mut out = vec![S::zero(); c * oh * ow];
        let argmax =
            kernels::max_pool_forward(self.data(x), c, h, w, kernel, stride, oh, ow, &mut out);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![c, oh, ow], out)?, Op::MaxPool { x, argmax }, rg))
    }

    // ---- reverse pass ------------------------------------------------------

    /// Accumulates d(loss)/d(leaf) into every gradient-tracking leaf and parameter.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if self.acc.len() < self.nodes.len() {
            self.acc.resize(self.nodes.len(), None);
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf | Op::Param(_) => {
                    accumulate_into(&mut self.acc[i], &gout);
                }
                op => {
                    let sparse = self.backprop(i, op, &gout, &mut grads);
                    if let Some((node, rows)) = sparse {
                        let dst = self.acc_rows.entry(node).or_default();
                        for (r, vals) in rows {
                            match dst.get_mut(&r) {
                                Some(existing) => {
                                    existing.iter_mut().zip(&vals).for_each(|(x, y)| *x += *y)
                                }
                                None => {
                                    dst.insert(r, vals);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Propagates `gout` from node `i` into its inputs. Embedding gradients
    /// into a parameter table are returned row-sparse instead.
    #[allow(clippy::type_complexity)]
    fn backprop(
        &self,
        i: usize,
        op: &Op<S>,
        gout: &[S],
        grads: &mut [Option<Vec<S>>],
    ) -> Option<(usize, BTreeMap<usize, Vec<S>>)> {
        let out = self.nodes[i].value.as_ref().expect("op node has a value");
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul { a, b, tb } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k) = (sa[0], sa[1]);
                let n = if *tb { sb[0] } else { sb[1] };
                let (av, bv) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    // dA = dC · op(B)ᵀ
                    kernels::gemm(gout, false, bv, !*tb, m, n, k, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    if *tb {
                        // B is n×k: dB = dCᵀ · A
                        kernels::gemm(gout, true, av, false, n, m, k, gb);
                    } else {
                        // dB = Aᵀ · dC
                        kernels::gemm(av, true, gout, false, k, m, n, gb);
                    }
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[0], s[1]);
                if let Some(ga) = self.slot(grads, *a) {
                    for x in 0..r {
                        for y in 0..c {
                            ga[x * c + y] += gout[y * r + x];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_assign(ga, gout);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    add_assign(gb, gout);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_assign(ga, gout);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(gout).for_each(|(x, &g)| *x -= g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &g), &y) in ga.iter_mut().zip(gout).zip(bv) {
                        *x += g * y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((x, &g), &y) in gb.iter_mut().zip(gout).zip(av) {
                        *x += g * y;
                    }
                }
            }
            Op::AddRow { a, row } => {
                let width = self.value(*row).numel();
                if let Some(ga) = self.slot(grads, *a) {
                    add_assign(ga, gout);
                }
                if let Some(gr) = self.slot(grads, *row) {
                    for chunk in gout.chunks(width) {
                        add_assign(gr, chunk);
                    }
                }
            }
            Op::MulRow { a, row } => {
                let width = self.value(*row).numel();
                let (av, rv) = (self.data(*a), self.data(*row));
                if let Some(ga) = self.slot(grads, *a) {
                    for (gc, gch) in ga.chunks_mut(width).zip(gout.chunks(width)) {
                        for ((x, &g), &r) in gc.iter_mut().zip(gch).zip(rv) {
                            *x += g * r;
                        }
                    }
                }
                if let Some(gr) = self.slot(grads, *row) {
                    for (gch, ach) in gout.chunks(width).zip(av.chunks(width)) {
                        for ((x, &g), &v) in gr.iter_mut().zip(gch).zip(ach) {
                            *x += g * v;
                        }
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(gout).for_each(|(x, &g)| *x += g * *c);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_assign(ga, gout);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &g), &y) in ga.iter_mut().zip(gout).zip(out.data()) {
                        *x += g * (S::one() - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &g), &y) in ga.iter_mut().zip(gout).zip(out.data()) {
                        *x += g * y * (S::one() - y);
                    }
                }
            }
            Op::Relu(a) => {
                let av = self.data(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &g), &v) in ga.iter_mut().zip(gout).zip(av) {
                        if v > S::zero() {
                            *x += g;
                        }
                    }
                }
            }
            Op::Softplus(a) => {
                let av = self.data(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &g), &v) in ga.iter_mut().zip(gout).zip(av) {
                        *x += g * sigmoid(v);
                    }
                }
            }
            Op::Softmax { a, n, inner } => {
                let (n, inner) = (*n, *inner);
                let y = out.data();
                if let Some(ga) = self.slot(grads, *a) {
                    let outer = y.len() / (n * inner);
                    for o in 0..outer {
                        for q in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + q;
                            let dot: S = (0..n).map(|j| gout[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                ga[idx(j)] += y[idx(j)] * (gout[idx(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedSoftmax { a, keep } => {
                let n = keep.len();
                let y = out.data();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((gr, yr), gor) in ga.chunks_mut(n).zip(y.chunks(n)).zip(gout.chunks(n)) {
                        let dot: S = yr.iter().zip(gor).map(|(&p, &g)| p * g).sum();
                        for j in 0..n {
                            if keep[j] {
                                gr[j] += yr[j] * (gor[j] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { a, rstd } => {
                let y = out.data();
                let width = y.len() / rstd.len();
                let n = S::of(width as f64);
                if let Some(ga) = self.slot(grads, *a) {
                    for (row, &r) in rstd.iter().enumerate() {
                        let span = row * width..(row + 1) * width;
                        let (yr, gr) = (&y[span.clone()], &gout[span.clone()]);
                        let mean_g = gr.iter().copied().sum::<S>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(&g, &v)| g * v).sum::<S>() / n;
                        for ((x, &g), &v) in ga[span].iter_mut().zip(gr).zip(yr) {
                            *x += r * (g - mean_g - v * mean_gy);
                        }
                    }
                }
            }
            Op::Concat {
                parts,
                lens,
                outer,
                inner,
            } => {
                let total: usize = lens.iter().sum();
                let mut start = 0;
                for (&p, &len) in parts.iter().zip(lens) {
                    if let Some(gp) = self.slot(grads, p) {
                        for o in 0..*outer {
                            let src = &gout[(o * total + start) * inner..(o * total + start + len) * inner];
                            add_assign(&mut gp[o * len * inner..(o + 1) * len * inner], src);
                        }
                    }
                    start += len;
                }
            }
            Op::Rows { a, offset } => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_assign(&mut ga[*offset..*offset + gout.len()], gout);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += gout[0]);
                }
            }
            Op::Mean(a) => {
                let n = S::of(self.value(*a).numel() as f64);
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += gout[0] / n);
                }
            }
            Op::Embedding {
                table,
                ids,
                padding_idx,
            } => {
                let dim = self.shape(*table)[1];
                if matches!(self.nodes[table.0].op, Op::Param(_)) {
                    let mut rows: BTreeMap<usize, Vec<S>> = BTreeMap::new();
                    for (pos, &id) in ids.iter().enumerate() {
                        if Some(id) == *padding_idx {
                            continue;
                        }
                        let dst = rows.entry(id).or_insert_with(|| vec![S::zero(); dim]);
                        add_assign(dst, &gout[pos * dim..(pos + 1) * dim]);
                    }
                    return Some((table.0, rows));
                }
                if let Some(gt) = self.slot(grads, *table) {
                    for (pos, &id) in ids.iter().enumerate() {
                        if Some(id) == *padding_idx {
                            continue;
                        }
                        add_assign(&mut gt[id * dim..(id + 1) * dim], &gout[pos * dim..(pos + 1) * dim]);
                    }
                }
            }
            Op::Conv2d { x, k, bias, geom } => {
                let (xv, kv) = (self.data(*x), self.data(*k));
                let rx = self.nodes[x.0].requires_grad;
                let rk = self.nodes[k.0].requires_grad;
                let rb = bias.is_some_and(|b| self.nodes[b.0].requires_grad);
                let mut dx = rx.then(|| vec![S::zero(); xv.len()]);
                let mut dk = rk.then(|| vec![S::zero(); kv.len()]);
                let mut db = rb.then(|| vec![S::zero(); geom.c_out]);
                kernels::conv2d_backward(
                    geom,
                    xv,
                    kv,
                    gout,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    add_assign(self.slot(grads, *x).unwrap(), &dx);
                }
                if let Some(dk) = dk {
                    add_assign(self.slot(grads, *k).unwrap(), &dk);
                }
                if let (Some(db), Some(b)) = (db, bias) {
                    add_assign(self.slot(grads, *b).unwrap(), &db);
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (&src, &g) in argmax.iter().zip(gout) {
                        gx[src] += g;
                    }
                }
            }
        }
        None
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<S>>], v: Var) -> Option<&'g mut Vec<S>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); n]))
    }

    /// Accumulated gradient of a leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<Vec<S>> {
        let numel = self.value(v).numel();
        let dense = self.acc.get(v.0).and_then(|g| g.clone());
        let rows = self.acc_rows.get(&v.0);
        match (dense, rows) {
            (None, None) => None,
            (d, r) => {
                let mut out = d.unwrap_or_else(|| vec![S::zero(); numel]);
                if let Some(r) = r {
                    let width = self.shape(v)[1];
                    for (&row, vals) in r {
                        add_assign(&mut out[row * width..(row + 1) * width], vals);
                    }
                }
                Some(out)
            }
        }
    }

    /// Collects parameter gradients accumulated so far.
    pub fn param_gradients(&self) -> Gradients<S> {
        let mut grads = Gradients::empty(self.params);
        for (pid, var) in self.param_vars.iter().enumerate() {
            let Some(var) = var else { continue };
            let id = ParamId(pid);
            if let Some(Some(d)) = self.acc.get(var.0) {
                grads.accumulate(id, GradBuf::Dense(d.clone()));
            }
            if let Some(rows) = self.acc_rows.get(&var.0) {
                let width = self.shape(*var)[1];
                grads.accumulate(
                    id,
                    GradBuf::Rows {
                        width,
                        rows: rows.clone(),
                    },
                );
            }
        }
        grads
    }

    pub fn zero_grad(&mut self) {
        self.acc.iter_mut().for_each(|g| *g = None);
        self.acc_rows.clear();
    }
}

/// Output extent and leading pad for one spatial axis.
fn conv_extent(len: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => (len >= k).then(|| ((len - k) / stride + 1, 0)),
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            (len + total >= k).then_some((out, total / 2))
        }
    }
}

fn for_each_input<S>(op: &Op<S>, mut f: impl FnMut(Var)) {
    match op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            f(*a);
            f(*b);
        }
        Op::AddRow { a, row } | Op::MulRow { a, row } => {
            f(*a);
            f(*row);
        }
        Op::Transpose(a)
        | Op::Scale { a, .. }
        | Op::AddScalar(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Relu(a)
        | Op::Softplus(a)
        | Op::Softmax { a, .. }
        | Op::MaskedSoftmax { a, .. }
        | Op::LayerNorm { a, .. }
        | Op::Reshape(a)
        | Op::Rows { a, .. }
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::MaxPool { x: a, .. } => f(*a),
        Op::Concat { parts, .. } => parts.iter().for_each(|&p| f(p)),
        Op::Embedding { table, .. } => f(*table),
        Op::Conv2d { x, k, bias, .. } => {
            f(*x);
            f(*k);
            if let Some(b) = bias {
                f(*b);
            }
        }
    }
}

#[inline]
fn add_assign<S: Scalar>(dst: &mut [S], src: &[S]) {
    dst.iter_mut().zip(src).for_each(|(x, &y)| *x += y);
}

fn accumulate_into<S: Scalar>(slot: &mut Option<Vec<S>>, g: &[S]) {
    match slot {
        Some(existing) => add_assign(existing, g),
        None => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

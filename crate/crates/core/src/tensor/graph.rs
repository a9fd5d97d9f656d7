//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value, so insertion
//! order is a topological order and `backward` is a single reverse sweep.
//! Intermediate gradients live only for the duration of one sweep; leaf
//! gradients persist and accumulate across repeated `backward` calls until
//! [`Graph::zero_grad`] is called.

use super::kernels::{self, dot};
use super::{Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Gelu {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaskedSoftmax {
        x: Var,
    },
    HeadScores {
        q: Var,
        k: Var,
        heads: usize,
        scale: f64,
    },
    HeadMix {
        p: Var,
        v: Var,
        heads: usize,
    },
    RowNormMean {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    GroupMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Jitter {
        x: Var,
        noise: Vec<f64>,
        coef: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Linear { .. } => "linear",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::Gelu { .. } => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::HeadScores { .. } => "head_scores",
            Op::HeadMix { .. } => "head_mix",
            Op::RowNormMean { .. } => "mse",
            Op::Sum { .. } => "sum",
            Op::GroupMaxPool { .. } => "group_max_pool",
            Op::Jitter { .. } => "jitter",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(msg: String) -> TensorError {
    TensorError::Shape(msg)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(op.name()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize), TensorError> {
        match self.value(v).shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(format!("{what}: expected a matrix, got shape {s:?}"))),
        }
    }

    /// Matrix product `a[m x k] * b[k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix_dims(a, "matmul lhs")?;
        let (k2, n) = self.matrix_dims(b, "matmul rhs")?;
        if k != k2 {
            return Err(shape_err(format!(
                "matmul inner dimensions differ: {m}x{k} * {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push(value, Op::MatMul { a, b }, &[a, b])
    }

    /// Affine map over the last dimension: `x[..., in] * w[in x out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (fan_in, fan_out) = self.matrix_dims(w, "linear weight")?;
        let xv = self.value(x);
        if xv.cols() != fan_in {
            return Err(shape_err(format!(
                "linear: input width {} does not match weight {fan_in}x{fan_out}",
                xv.cols()
            )));
        }
        if self.value(b).shape() != [fan_out] {
            return Err(shape_err(format!(
                "linear: bias shape {:?}, expected [{fan_out}]",
                self.value(b).shape()
            )));
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * fan_out);
        let bias = self.value(b).data();
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        kernels::matmul_acc(xv.data(), self.value(w).data(), &mut out, rows, fan_in, fan_out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = fan_out;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Linear { x, w, b }, &[x, w, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(format!(
                "add: shapes {:?} and {:?} differ",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(value, Op::Add { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(value, Op::Scale { x, factor }, &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| kernels::gelu(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(value, Op::Gelu { x }, &[x])
    }

    /// Normalizes each row of the last dimension to zero mean and unit
    /// variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let c = xv.cols();
        if self.value(gain).shape() != [c] || self.value(bias).shape() != [c] {
            return Err(shape_err(format!(
                "layer_norm: gain/bias must be [{c}], got {:?} and {:?}",
                self.value(gain).shape(),
                self.value(bias).shape()
            )));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; rows * c];
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = vec![0.0; rows * c];
        let (g, bb) = (self.value(gain).data(), self.value(bias).data());
        for r in 0..rows {
            let span = r * c..(r + 1) * c;
            inv_std.push(kernels::layer_norm_row(&xv.data()[span.clone()], eps, &mut xhat[span.clone()]));
            for ((o, &h), (&gi, &bi)) in out[span.clone()].iter_mut().zip(&xhat[span]).zip(g.iter().zip(bb)) {
                *o = h * gi + bi;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Softmax over the last dimension with `masked[j] == true` keys
    /// excluded. Masked outputs are exactly zero.
    pub fn masked_softmax(&mut self, x: Var, masked: &[bool]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let kv = xv.cols();
        if masked.len() != kv {
            return Err(shape_err(format!(
                "masked_softmax: mask has {} entries for {kv} keys",
                masked.len()
            )));
        }
        if masked.iter().all(|&m| m) {
            return Err(TensorError::InvalidMask);
        }
        let mut out = vec![0.0; xv.len()];
        for (src, dst) in xv.data().chunks_exact(kv).zip(out.chunks_exact_mut(kv)) {
            kernels::masked_softmax_row(src, masked, dst);
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(value, Op::MaskedSoftmax { x }, &[x])
    }

    /// Per-head scaled dot products. `q[nq x c]`, `k[nk x c]` are split
    /// into `heads` contiguous column blocks; output is `[heads x nq x nk]`.
    pub fn head_scores(&mut self, q: Var, k: Var, heads: usize, scale: f64) -> Result<Var, TensorError> {
        let (nq, c) = self.matrix_dims(q, "head_scores query")?;
        let (nk, c2) = self.matrix_dims(k, "head_scores key")?;
        if c != c2 || heads == 0 || c % heads != 0 {
            return Err(shape_err(format!(
                "head_scores: widths {c}/{c2} incompatible with {heads} heads"
            )));
        }
        let d = c / heads;
        let (qd, kd) = (self.value(q).data(), self.value(k).data());
        let mut out = vec![0.0; heads * nq * nk];
        for h in 0..heads {
            for i in 0..nq {
                let qi = &qd[i * c + h * d..i * c + (h + 1) * d];
                let row = &mut out[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                for (j, o) in row.iter_mut().enumerate() {
                    *o = scale * dot(qi, &kd[j * c + h * d..j * c + (h + 1) * d]);
                }
            }
        }
        let value = Tensor::new(vec![heads, nq, nk], out)?;
        self.push(value, Op::HeadScores { q, k, heads, scale }, &[q, k])
    }

    /// Per-head weighted sum of values: `p[heads x nq x nk]`, `v[nk x c]`,
    /// output `[nq x c]` with head blocks concatenated along columns.
    pub fn head_mix(&mut self, p: Var, v: Var) -> Result<Var, TensorError> {
        let (nk, c) = self.matrix_dims(v, "head_mix value")?;
        let (heads, nq, nk2) = match self.value(p).shape() {
            [h, a, b] => (*h, *a, *b),
            s => return Err(shape_err(format!("head_mix: weights must be 3-d, got {s:?}"))),
        };
        if nk != nk2 || heads == 0 || c % heads != 0 {
            return Err(shape_err(format!(
                "head_mix: weights [{heads}x{nq}x{nk2}] incompatible with values [{nk}x{c}]"
            )));
        }
        let d = c / heads;
        let (pd, vd) = (self.value(p).data(), self.value(v).data());
        let mut out = vec![0.0; nq * c];
        for h in 0..heads {
            for i in 0..nq {
                let weights = &pd[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                let dst = &mut out[i * c + h * d..i * c + (h + 1) * d];
                for (j, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let src = &vd[j * c + h * d..j * c + (h + 1) * d];
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o += w * s;
                    }
                }
            }
        }
        let value = Tensor::new(vec![nq, c], out)?;
        self.push(value, Op::HeadMix { p, v, heads }, &[p, v])
    }

    /// Mean over the first dimension of the per-row Euclidean distance:
    /// `(1/g) * sum_i ||a_i - b_i||_2`. The gradient at `a_i == b_i` is zero.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || av.shape().is_empty() || av.shape()[0] == 0 {
            return Err(shape_err(format!(
                "mse: shapes {:?} and {:?} must agree and be non-empty",
                av.shape(),
                bv.shape()
            )));
        }
        let total: f64 = row_distances(av, bv).iter().sum();
        let value = Tensor::scalar(total / av.shape()[0] as f64);
        self.push(value, Op::RowNormMean { a, b }, &[a, b])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x }, &[x])
    }

    /// Max over consecutive row blocks of `group_size`:
    /// `[(g * group_size) x c] -> [g x c]`. Ties resolve to the first row.
    pub fn group_max_pool(&mut self, x: Var, group_size: usize) -> Result<Var, TensorError> {
        let (rows, c) = self.matrix_dims(x, "group_max_pool")?;
        if group_size == 0 || rows % group_size != 0 {
            return Err(shape_err(format!(
                "group_max_pool: {rows} rows do not split into groups of {group_size}"
            )));
        }
        let groups = rows / group_size;
        let xd = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; groups * c];
        let mut argmax = vec![0usize; groups * c];
        for g in 0..groups {
            for r in g * group_size..(g + 1) * group_size {
                for ch in 0..c {
                    let v = xd[r * c + ch];
                    if v > out[g * c + ch] {
                        out[g * c + ch] = v;
                        argmax[g * c + ch] = r;
                    }
                }
            }
        }
        let value = Tensor::new(vec![groups, c], out)?;
        self.push(value, Op::GroupMaxPool { x, argmax }, &[x])
    }

    /// Adds `coef * ||x_i|| * noise_i` to every row `x_i`. The noise scale
    /// depends on the row norm, and the gradient flows through it.
    pub fn jitter(&mut self, x: Var, noise: Tensor, coef: f64) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if noise.shape() != xv.shape() {
            return Err(shape_err(format!(
                "jitter: noise shape {:?} does not match {:?}",
                noise.shape(),
                xv.shape()
            )));
        }
        let c = xv.cols();
        let mut out = xv.data().to_vec();
        for (row, z) in out.chunks_exact_mut(c).zip(noise.data().chunks_exact(c)) {
            let n = kernels::norm(row);
            if n == 0.0 {
                continue;
            }
            let s = coef * n;
            for (o, &zi) in row.iter_mut().zip(z) {
                *o += s * zi;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let noise = noise.into_data();
        self.push(value, Op::Jitter { x, noise, coef }, &[x])
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        for (idx, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &mut node.grad {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(&g) {
                        *e += v;
                    }
                }
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if wants(*a) {
                    kernels::matmul_bt_acc(g, bv.data(), slot(grads, *a, m * k), m, k, n);
                }
                if wants(*b) {
                    kernels::matmul_at_acc(av.data(), g, slot(grads, *b, k * n), m, k, n);
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (fan_in, fan_out) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if wants(*x) {
                    kernels::matmul_bt_acc(g, wv.data(), slot(grads, *x, rows * fan_in), rows, fan_in, fan_out);
                }
                if wants(*w) {
                    kernels::matmul_at_acc(xv.data(), g, slot(grads, *w, fan_in * fan_out), rows, fan_in, fan_out);
                }
                if wants(*b) {
                    let gb = slot(grads, *b, fan_out);
                    for row in g.chunks_exact(fan_out) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if wants(v) {
                        for (o, &gi) in slot(grads, v, g.len()).iter_mut().zip(g) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Scale { x, factor } => {
                if wants(*x) {
                    for (o, &gi) in slot(grads, *x, g.len()).iter_mut().zip(g) {
                        *o += factor * gi;
                    }
                }
            }
            Op::Gelu { x } => {
                if wants(*x) {
                    let xd = self.value(*x).data();
                    for ((o, &gi), &xi) in slot(grads, *x, g.len()).iter_mut().zip(g).zip(xd) {
                        *o += gi * kernels::gelu_grad(xi);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = self.value(*gain).len();
                let gd = self.value(*gain).data();
                if wants(*gain) {
                    let gg = slot(grads, *gain, c);
                    for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ((o, &gi), &h) in gg.iter_mut().zip(grow).zip(hrow) {
                            *o += gi * h;
                        }
                    }
                }
                if wants(*bias) {
                    let gb = slot(grads, *bias, c);
                    for grow in g.chunks_exact(c) {
                        for (o, &gi) in gb.iter_mut().zip(grow) {
                            *o += gi;
                        }
                    }
                }
                if wants(*x) {
                    let cf = c as f64;
                    let gx = slot(grads, *x, g.len());
                    let mut dxhat = vec![0.0; c];
                    for (r, (grow, hrow)) in g.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
                        for ((d, &gi), &gain_i) in dxhat.iter_mut().zip(grow).zip(gd) {
                            *d = gi * gain_i;
                        }
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dh = dot(&dxhat, hrow);
                        let s = inv_std[r] / cf;
                        for ((o, &d), &h) in gx[r * c..(r + 1) * c].iter_mut().zip(&dxhat).zip(hrow) {
                            *o += s * (cf * d - sum_d - h * sum_dh);
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x } => {
                if wants(*x) {
                    let y = node.value.data();
                    let kv = node.value.cols();
                    let gx = slot(grads, *x, g.len());
                    for ((grow, yrow), orow) in g.chunks_exact(kv).zip(y.chunks_exact(kv)).zip(gx.chunks_exact_mut(kv)) {
                        let s = dot(grow, yrow);
                        for ((o, &gi), &yi) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yi * (gi - s);
                        }
                    }
                }
            }
            Op::HeadScores { q, k, heads, scale } => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                let (nq, c) = (qv.shape()[0], qv.shape()[1]);
                let nk = kv.shape()[0];
                let d = c / heads;
                if wants(*q) {
                    let gq = slot(grads, *q, nq * c);
                    let kd = kv.data();
                    for h in 0..*heads {
                        for i in 0..nq {
                            let grow = &g[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                            let dst = &mut gq[i * c + h * d..i * c + (h + 1) * d];
                            for (j, &gij) in grow.iter().enumerate() {
                                if gij == 0.0 {
                                    continue;
                                }
                                let w = scale * gij;
                                for (o, &kv) in dst.iter_mut().zip(&kd[j * c + h * d..j * c + (h + 1) * d]) {
                                    *o += w * kv;
                                }
                            }
                        }
                    }
                }
                if wants(*k) {
                    let gk = slot(grads, *k, nk * c);
                    let qd = qv.data();
                    for h in 0..*heads {
                        for i in 0..nq {
                            let grow = &g[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                            let qi = &qd[i * c + h * d..i * c + (h + 1) * d];
                            for (j, &gij) in grow.iter().enumerate() {
                                if gij == 0.0 {
                                    continue;
                                }
                                let w = scale * gij;
                                for (o, &qv) in gk[j * c + h * d..j * c + (h + 1) * d].iter_mut().zip(qi) {
                                    *o += w * qv;
                                }
                            }
                        }
                    }
                }
            }
            Op::HeadMix { p, v, heads } => {
                let (pv, vv) = (self.value(*p), self.value(*v));
                let (nq, nk) = (pv.shape()[1], pv.shape()[2]);
                let c = vv.shape()[1];
                let d = c / heads;
                if wants(*p) {
                    let gp = slot(grads, *p, heads * nq * nk);
                    let vd = vv.data();
                    for h in 0..*heads {
                        for i in 0..nq {
                            let gi = &g[i * c + h * d..i * c + (h + 1) * d];
                            let dst = &mut gp[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                            for (j, o) in dst.iter_mut().enumerate() {
                                *o += dot(gi, &vd[j * c + h * d..j * c + (h + 1) * d]);
                            }
                        }
                    }
                }
                if wants(*v) {
                    let gv = slot(grads, *v, nk * c);
                    let pd = pv.data();
                    for h in 0..*heads {
                        for i in 0..nq {
                            let gi = &g[i * c + h * d..i * c + (h + 1) * d];
                            let weights = &pd[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                            for (j, &w) in weights.iter().enumerate() {
                                if w == 0.0 {
                                    continue;
                                }
                                for (o, &gv_) in gv[j * c + h * d..j * c + (h + 1) * d].iter_mut().zip(gi) {
                                    *o += w * gv_;
                                }
                            }
                        }
                    }
                }
            }
            Op::RowNormMean { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let rows = av.shape()[0];
                let c = av.len() / rows;
                let dists = row_distances(av, bv);
                let scale = g[0] / rows as f64;
                let mut diff = vec![0.0; av.len()];
                for (r, &dist) in dists.iter().enumerate() {
                    if dist == 0.0 {
                        continue;
                    }
                    for ch in r * c..(r + 1) * c {
                        diff[ch] = scale * (av.data()[ch] - bv.data()[ch]) / dist;
                    }
                }
                if wants(*a) {
                    for (o, &d) in slot(grads, *a, diff.len()).iter_mut().zip(&diff) {
                        *o += d;
                    }
                }
                if wants(*b) {
                    for (o, &d) in slot(grads, *b, diff.len()).iter_mut().zip(&diff) {
                        *o -= d;
                    }
                }
            }
            Op::Sum { x } => {
                if wants(*x) {
                    let n = self.value(*x).len();
                    for o in slot(grads, *x, n).iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::GroupMaxPool { x, argmax } => {
                if wants(*x) {
                    let c = node.value.cols();
                    let n = self.value(*x).len();
                    let gx = slot(grads, *x, n);
                    for (flat, (&row, &gi)) in argmax.iter().zip(g).enumerate() {
                        gx[row * c + flat % c] += gi;
                    }
                }
            }
            Op::Jitter { x, noise, coef } => {
                if wants(*x) {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let gx = slot(grads, *x, g.len());
                    for (((grow, xrow), zrow), orow) in g
                        .chunks_exact(c)
                        .zip(xv.data().chunks_exact(c))
                        .zip(noise.chunks_exact(c))
                        .zip(gx.chunks_exact_mut(c))
                    {
                        let n = kernels::norm(xrow);
                        let k = if n == 0.0 { 0.0 } else { coef * dot(grow, zrow) / n };
                        for ((o, &gi), &xi) in orow.iter_mut().zip(grow).zip(xrow) {
                            *o += gi + k * xi;
                        }
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Euclidean distance between corresponding rows (first dimension).
pub(crate) fn row_distances(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let rows = a.shape()[0];
    let c = a.len() / rows;
    a.data()
        .chunks_exact(c)
        .zip(b.data().chunks_exact(c))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .collect()
}

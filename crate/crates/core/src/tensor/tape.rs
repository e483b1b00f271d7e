//! Wengert-list autodiff. Nodes are appended in evaluation order, so walking
//! the list backwards is a reverse topological traversal.

use alloc::vec::Vec;

use super::batchnorm::{self, RunningStats};
use super::conv::{self, conv_out_len, Conv1dGeom, Conv2dGeom};
use super::{ParamId, ParamSet, Real, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by a training-mode batchnorm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1d { x: Var, w: Var, geom: Conv1dGeom },
    Conv2d { x: Var, w: Var, geom: Conv2dGeom },
    BiasAdd { x: Var, b: Var, spatial: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, x_hat: Vec<T>, inv_std: Vec<T>, dims: (usize, usize, usize), train: bool },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    Sum { x: Var },
    GlobalAvgPool { x: Var, spatial: usize },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Reshape { x: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    SelectRows { x: Var, rows: Vec<usize> },
    GroupMean { x: Var, labels: Vec<usize>, counts: Vec<usize> },
    SqDist { q: Var, p: Var },
    NegLogSoftmax { d: Var, probs: Vec<T> },
    NllMean { lp: Var, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

fn shape_err(msg: alloc::string::String) -> Error {
    Error::ShapeMismatch(msg)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that takes no gradient (network inputs, fixed targets).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false, param: None });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is computed and reported in [`Gradients`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Binds a parameter's current value; its gradient flows back into `params`.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        let value = params.get(id).value.clone();
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true, param: Some(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Which side of every ReLU and max-pool switch point each activation sits
    /// on. Two tapes with equal patterns lie in the same linear piece.
    pub fn switch_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => out.extend(self.nodes[x.0].value.data().iter().map(|&v| (v > T::zero()) as u32)),
                Op::MaxPool2d { argmax, .. } => out.extend(argmax.iter().map(|&i| i as u32)),
                _ => {}
            }
        }
        out
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// 1-D convolution of `[B, C_in, L]` with `[C_out, C_in, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, dilation: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(shape_err(alloc::format!("conv1d input {xs:?} with weight {ws:?}")));
        }
        if stride == 0 || dilation == 0 || ws[2] == 0 {
            return Err(Error::InvalidHyperparameter(alloc::format!(
                "conv1d kernel {} stride {stride} dilation {dilation}",
                ws[2]
            )));
        }
        let out_len = conv_out_len(xs[2], ws[2], stride, dilation, padding).ok_or_else(|| {
            Error::InvalidHyperparameter(alloc::format!(
                "dilated kernel span {} exceeds padded length {}",
                dilation * (ws[2] - 1) + 1,
                xs[2] + 2 * padding
            ))
        })?;
        let geom = Conv1dGeom {
            batch: xs[0],
            c_in: xs[1],
            len: xs[2],
            c_out: ws[0],
            kernel: ws[2],
            stride,
            dilation,
            padding,
            out_len,
        };
        let mut y = Tensor::zeros(&[geom.batch, geom.c_out, out_len]);
        conv::conv1d_forward(&geom, self.value(x).data(), self.value(w).data(), y.data_mut());
        Ok(self.push(y, Op::Conv1d { x, w, geom }, &[x, w]))
    }

    /// 2-D cross-correlation of `[B, C_in, H, W]` with `[C_out, C_in, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(shape_err(alloc::format!("conv2d input {xs:?} with weight {ws:?}")));
        }
        let out_h = conv_out_len(xs[2], ws[2], stride.0, 1, padding.0);
        let out_w = conv_out_len(xs[3], ws[3], stride.1, 1, padding.1);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::InvalidHyperparameter(alloc::format!(
                "conv2d kernel {:?} stride {stride:?} does not fit input {xs:?}",
                &ws[2..]
            )));
        };
        let geom = Conv2dGeom {
            batch: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            padding,
            out_h,
            out_w,
        };
        let mut y = Tensor::zeros(&[geom.batch, geom.c_out, out_h, out_w]);
        conv::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), y.data_mut());
        Ok(self.push(y, Op::Conv2d { x, w, geom }, &[x, w]))
    }

    /// Adds a per-channel bias along axis 1.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || self.shape(b) != [xs[1]] {
            return Err(shape_err(alloc::format!("bias {:?} for input {xs:?}", self.shape(b))));
        }
        let spatial: usize = xs[2..].iter().product();
        let bias = self.value(b).data().to_vec();
        let mut y = self.value(x).clone();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += bias[(i / spatial) % xs[1]];
        }
        Ok(self.push(y, Op::BiasAdd { x, b, spatial }, &[x, b]))
    }

    /// Batch normalization over the batch and spatial axes of `[B, C, ...]`.
    ///
    /// Training mode normalizes with the batch moments and returns them so the
    /// caller can update its running statistics; evaluation mode uses `stats`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        stats: Option<&RunningStats<T>>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            return Err(shape_err(alloc::format!("batchnorm params for input {xs:?}")));
        }
        let dims = (xs[0], xs[1], xs[2..].iter().product::<usize>());
        let eps = T::of(eps);
        let (mean, var, batch_stats) = match mode {
            Mode::Train => {
                let (m, v) = batchnorm::channel_moments(self.value(x).data(), dims.0, dims.1, dims.2);
                let bs = BatchStats { mean: m.clone(), var: v.clone(), count: dims.0 * dims.2 };
                (m, v, Some(bs))
            }
            Mode::Eval => {
                let s = stats.ok_or(Error::EvalWithoutStats)?;
                if s.mean.len() != dims.1 || s.var.len() != dims.1 {
                    return Err(Error::EvalWithoutStats);
                }
                (s.mean.clone(), s.var.clone(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut y = Tensor::zeros(&xs);
        let x_hat = batchnorm::normalize(
            self.value(x).data(),
            dims,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
            y.data_mut(),
        );
        let op = Op::BatchNorm { x, gamma, beta, x_hat, inv_std, dims, train: mode == Mode::Train };
        Ok((self.push(y, op, &[x, gamma, beta]), batch_stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        // `x < 0` rather than `max` so NaN passes through instead of becoming 0.
        y.data_mut().iter_mut().filter(|v| **v < T::zero()).for_each(|v| *v = T::zero());
        self.push(y, Op::Relu { x }, &[x])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(alloc::format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut y = self.value(a).clone();
        y.data_mut().iter_mut().zip(self.value(b).data()).for_each(|(u, &v)| *u += v);
        Ok(self.push(y, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let mut y = self.value(a).clone();
        y.data_mut().iter_mut().zip(self.value(b).data()).for_each(|(u, &v)| *u *= v);
        Ok(self.push(y, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().for_each(|v| *v *= c);
        self.push(y, Op::Scale { x, c }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    /// Mean over every axis after the first two: `[B, C, ...] → [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(shape_err(alloc::format!("global_avg_pool needs spatial axes, got {xs:?}")));
        }
        let spatial: usize = xs[2..].iter().product();
        let n = T::of(spatial as f64);
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks(spatial)
            .map(|c| c.iter().copied().sum::<T>() / n)
            .collect();
        let y = Tensor::new(&xs[..2], data)?;
        Ok(self.push(y, Op::GlobalAvgPool { x, spatial }, &[x]))
    }

    /// Max pooling without padding; output size `floor((H − kh)/sh) + 1`.
    pub fn maxpool2d(&mut self, x: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err(alloc::format!("maxpool2d input {xs:?}")));
        }
        let oh = conv_out_len(xs[2], kernel.0, stride.0, 1, 0);
        let ow = conv_out_len(xs[3], kernel.1, stride.1, 1, 0);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::InvalidHyperparameter(alloc::format!("pool {kernel:?} on {xs:?}")));
        };
        let (h, w) = (xs[2], xs[3]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(xs[0] * xs[1] * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..xs[0] * xs[1] {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * stride.0 * w + j * stride.1;
                    for di in 0..kernel.0 {
                        for dj in 0..kernel.1 {
                            let idx = base + (i * stride.0 + di) * w + j * stride.1 + dj;
                            if src[idx] > src[best] || (src[idx].is_nan() && !src[best].is_nan()) {
                                best = idx;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let y = Tensor::new(&[xs[0], xs[1], oh, ow], out)?;
        Ok(self.push(y, Op::MaxPool2d { x, argmax }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = Tensor::new(shape, self.value(x).data().to_vec())?;
        Ok(self.push(y, Op::Reshape { x }, &[x]))
    }

    /// `[B, ...] → [B, rest]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let shape = [xs[0], xs[1..].iter().product()];
        self.reshape(x, &shape)
    }

    /// `x·Wᵀ + b` for `x: [B, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(alloc::format!("linear input {xs:?} with weight {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(shape_err(alloc::format!("linear bias {:?}", self.shape(b))));
            }
        }
        let (batch, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let bd = b.map(|b| self.value(b).data());
        let mut out = alloc::vec![T::zero(); batch * fan_out];
        for r in 0..batch {
            let xr = &xd[r * fan_in..][..fan_in];
            for o in 0..fan_out {
                let wr = &wd[o * fan_in..][..fan_in];
                let mut acc = xr.iter().zip(wr).map(|(&a, &c)| a * c).sum::<T>();
                if let Some(bd) = bd {
                    acc += bd[o];
                }
                out[r * fan_out + o] = acc;
            }
        }
        let y = Tensor::new(&[batch, fan_out], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(y, Op::Linear { x, w, b }, &inputs))
    }

    /// Gathers rows (first-axis slices) in the given order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || rows.iter().any(|&r| r >= xs[0]) {
            return Err(shape_err(alloc::format!("row selection out of range for {xs:?}")));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * t.numel() / xs[0]);
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let mut shape = xs.clone();
        shape[0] = rows.len();
        let y = Tensor::new(&shape, data)?;
        Ok(self.push(y, Op::SelectRows { x, rows: rows.to_vec() }, &[x]))
    }

    /// Mean of the rows of `[N, D]` sharing each label: `→ [groups, D]`.
    pub fn group_mean(&mut self, x: Var, labels: &[usize], groups: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[0] != labels.len() {
            return Err(shape_err(alloc::format!("{} labels for rows of {xs:?}", labels.len())));
        }
        let mut counts = alloc::vec![0usize; groups];
        for &l in labels {
            if l >= groups {
                return Err(Error::LabelOutOfRange { label: l, categories: groups });
            }
            counts[l] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyCategory(empty));
        }
        let d = xs[1];
        let mut out = alloc::vec![T::zero(); groups * d];
        let t = self.value(x);
        for (r, &l) in labels.iter().enumerate() {
            for (o, &v) in out[l * d..][..d].iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        for (g, &c) in counts.iter().enumerate() {
            let n = T::of(c as f64);
            out[g * d..][..d].iter_mut().for_each(|v| *v /= n);
        }
        let y = Tensor::new(&[groups, d], out)?;
        Ok(self.push(y, Op::GroupMean { x, labels: labels.to_vec(), counts }, &[x]))
    }

    /// `dist[m, c] = Σ_d (q[m, d] − p[c, d])²`.
    pub fn sq_dist(&mut self, q: Var, p: Var) -> Result<Var> {
        let (qs, ps) = (self.shape(q).to_vec(), self.shape(p).to_vec());
        if qs.len() != 2 || ps.len() != 2 {
            return Err(shape_err(alloc::format!("sq_dist on {qs:?} and {ps:?}")));
        }
        if qs[1] != ps[1] {
            return Err(Error::DimensionMismatch(qs[1], ps[1]));
        }
        let (qt, pt) = (self.value(q), self.value(p));
        let mut out = Vec::with_capacity(qs[0] * ps[0]);
        for m in 0..qs[0] {
            for c in 0..ps[0] {
                out.push(qt.row(m).iter().zip(pt.row(c)).map(|(&a, &b)| (a - b) * (a - b)).sum());
            }
        }
        let y = Tensor::new(&[qs[0], ps[0]], out)?;
        Ok(self.push(y, Op::SqDist { q, p }, &[q, p]))
    }

    /// Row-wise `log softmax(−d)`, computed with max subtraction.
    pub fn neg_log_softmax(&mut self, d: Var) -> Result<Var> {
        let ds = self.shape(d).to_vec();
        if ds.len() != 2 || ds[1] == 0 {
            return Err(shape_err(alloc::format!("neg_log_softmax on {ds:?}")));
        }
        let mut out = Vec::with_capacity(ds[0] * ds[1]);
        let mut probs = Vec::with_capacity(ds[0] * ds[1]);
        for row in self.value(d).data().chunks(ds[1]) {
            let top = row.iter().map(|&v| -v).fold(T::neg_infinity(), T::max);
            let lse = top + row.iter().map(|&v| (-v - top).exp()).sum::<T>().ln();
            for &v in row {
                let lp = -v - lse;
                out.push(lp);
                probs.push(lp.exp());
            }
        }
        let y = Tensor::new(&ds, out)?;
        Ok(self.push(y, Op::NegLogSoftmax { d, probs }, &[d]))
    }

    /// `−(1/M) Σ_m lp[m, labels[m]]`.
    pub fn nll_mean(&mut self, lp: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(lp).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() || labels.is_empty() {
            return Err(shape_err(alloc::format!("{} labels for log-probs {ls:?}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= ls[1]) {
            return Err(Error::LabelOutOfRange { label: bad, categories: ls[1] });
        }
        let t = self.value(lp);
        let total: T = labels.iter().enumerate().map(|(m, &l)| t.row(m)[l]).sum();
        let y = Tensor::scalar(-total / T::of(labels.len() as f64));
        Ok(self.push(y, Op::NllMean { lp, labels: labels.to_vec() }, &[lp]))
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added into
    /// `params`; the tape is consumed.
    pub fn backward(self, loss: Var, params: &mut ParamSet<T>) -> Result<Gradients<T>> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::NotScalar(loss_node.value.shape().to_vec()));
        }
        if !loss_node.requires_grad {
            return Err(Error::DetachedGraph);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(alloc::vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(id) = node.param {
                match &grads[i] {
                    Some(g) => params.get_mut(id).accumulate_grad(g),
                    None => params.get_mut(id).accumulate_grad(&alloc::vec![T::zero(); node.value.numel()]),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn grad_slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut [T]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| alloc::vec![T::zero(); node.value.numel()]).as_mut_slice())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, geom } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = self.grad_slot(grads, *x).map(|s| s.to_vec());
                let mut dw = self.grad_slot(grads, *w).map(|s| s.to_vec());
                conv::conv1d_backward(geom, xv, wv, g, dx.as_deref_mut(), dw.as_deref_mut());
                self.store(grads, *x, dx);
                self.store(grads, *w, dw);
            }
            Op::Conv2d { x, w, geom } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = self.grad_slot(grads, *x).map(|s| s.to_vec());
                let mut dw = self.grad_slot(grads, *w).map(|s| s.to_vec());
                conv::conv2d_backward(geom, xv, wv, g, dx.as_deref_mut(), dw.as_deref_mut());
                self.store(grads, *x, dx);
                self.store(grads, *w, dw);
            }
            Op::BiasAdd { x, b, spatial } => {
                let channels = self.shape(*b)[0];
                if let Some(dx) = self.grad_slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    for (k, &v) in g.iter().enumerate() {
                        db[(k / spatial) % channels] += v;
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, x_hat, inv_std, dims, train } => {
                let gm = self.value(*gamma).data();
                let mut dx = self.grad_slot(grads, *x).map(|s| s.to_vec());
                let mut dg = self.grad_slot(grads, *gamma).map(|s| s.to_vec());
                let mut db = self.grad_slot(grads, *beta).map(|s| s.to_vec());
                let f = if *train { batchnorm::backward_train } else { batchnorm::backward_eval };
                f(g, x_hat, *dims, inv_std, gm, dx.as_deref_mut(), dg.as_deref_mut(), db.as_deref_mut());
                self.store(grads, *x, dx);
                self.store(grads, *gamma, dg);
                self.store(grads, *beta, db);
            }
            Op::Relu { x } => {
                let y = node.value.data();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                        if yv > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = self.grad_slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                if let Some(d) = self.grad_slot(grads, *a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k];
                    }
                }
                if let Some(d) = self.grad_slot(grads, *b) {
                    for k in 0..d.len() {
                        d[k] += g[k] * av[k];
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(d) = self.grad_slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * *c);
                }
            }
            Op::Sum { x } => {
                if let Some(d) = self.grad_slot(grads, *x) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::GlobalAvgPool { x, spatial } => {
                let n = T::of(*spatial as f64);
                if let Some(d) = self.grad_slot(grads, *x) {
                    for (k, dv) in d.iter_mut().enumerate() {
                        *dv += g[k / spatial] / n;
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if let Some(d) = self.grad_slot(grads, *x) {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        d[src] += gv;
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(d) = self.grad_slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (batch, fan_in, fan_out) = (xs[0], xs[1], ws[0]);
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for r in 0..batch {
                        for o in 0..fan_out {
                            let gv = g[r * fan_out + o];
                            for (d, &wk) in dx[r * fan_in..][..fan_in].iter_mut().zip(&wv[o * fan_in..][..fan_in]) {
                                *d += gv * wk;
                            }
                        }
                    }
                }
                if let Some(dw) = self.grad_slot(grads, *w) {
                    for r in 0..batch {
                        for o in 0..fan_out {
                            let gv = g[r * fan_out + o];
                            for (d, &xk) in dw[o * fan_in..][..fan_in].iter_mut().zip(&xv[r * fan_in..][..fan_in]) {
                                *d += gv * xk;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = self.grad_slot(grads, *b) {
                        for (k, &gv) in g.iter().enumerate() {
                            db[k % fan_out] += gv;
                        }
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                let width = node.value.numel() / rows.len().max(1);
                if let Some(d) = self.grad_slot(grads, *x) {
                    for (k, &r) in rows.iter().enumerate() {
                        for (dv, &gv) in d[r * width..][..width].iter_mut().zip(&g[k * width..][..width]) {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::GroupMean { x, labels, counts } => {
                let dim = self.shape(*x)[1];
                if let Some(d) = self.grad_slot(grads, *x) {
                    for (r, &l) in labels.iter().enumerate() {
                        let n = T::of(counts[l] as f64);
                        for (dv, &gv) in d[r * dim..][..dim].iter_mut().zip(&g[l * dim..][..dim]) {
                            *dv += gv / n;
                        }
                    }
                }
            }
            Op::SqDist { q, p } => {
                let (qs, ps) = (self.shape(*q).to_vec(), self.shape(*p).to_vec());
                let (m_n, c_n, dim) = (qs[0], ps[0], qs[1]);
                let (qv, pv) = (self.value(*q).data().to_vec(), self.value(*p).data().to_vec());
                let two = T::of(2.0);
                if let Some(dq) = self.grad_slot(grads, *q) {
                    for m in 0..m_n {
                        for c in 0..c_n {
                            let gv = g[m * c_n + c] * two;
                            for k in 0..dim {
                                dq[m * dim + k] += gv * (qv[m * dim + k] - pv[c * dim + k]);
                            }
                        }
                    }
                }
                if let Some(dp) = self.grad_slot(grads, *p) {
                    for m in 0..m_n {
                        for c in 0..c_n {
                            let gv = g[m * c_n + c] * two;
                            for k in 0..dim {
                                dp[c * dim + k] -= gv * (qv[m * dim + k] - pv[c * dim + k]);
                            }
                        }
                    }
                }
            }
            Op::NegLogSoftmax { d, probs } => {
                let cols = node.value.shape()[1];
                if let Some(dd) = self.grad_slot(grads, *d) {
                    for (r, grow) in g.chunks(cols).enumerate() {
                        let total: T = grow.iter().copied().sum();
                        for c in 0..cols {
                            // d/dz of (z − lse(z)) with z = −d
                            dd[r * cols + c] -= grow[c] - probs[r * cols + c] * total;
                        }
                    }
                }
            }
            Op::NllMean { lp, labels } => {
                let cols = self.shape(*lp)[1];
                let k = g[0] / T::of(labels.len() as f64);
                if let Some(d) = self.grad_slot(grads, *lp) {
                    for (m, &l) in labels.iter().enumerate() {
                        d[m * cols + l] -= k;
                    }
                }
            }
        }
    }

    fn store(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Option<Vec<T>>) {
        if let Some(g) = g {
            grads[v.0] = Some(g);
        }
    }
}

//! Tape-based computation graph. Nodes are appended in evaluation order, so
//! the tape is acyclic by construction and backward is one reverse sweep.

use super::kernels::{bilinear_taps, conv_backward, conv_forward, max_pool2, ConvGeom};
use super::optim::{ParamId, ParamStore};
use super::{Result, Scalar, Tensor, TensorError};
use crate::boxes::BBox;

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, n: usize, k: usize },
    Relu { x: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Linear { x: Var, w: Var, b: Var, rows: usize, din: usize, dout: usize },
    Add { a: Var, b: Var },
    MulScalar { x: Var, s: T },
    Concat { parts: Vec<Var> },
    Reshape { x: Var },
    AnchorRows { x: Var, k: usize, m: usize, h: usize, w: usize },
    Sum { x: Var },
    SoftmaxCe { logits: Var, targets: Vec<usize>, weights: Vec<T>, probs: Vec<T>, denom: T },
    SmoothL1 { pred: Var, diff: Vec<T>, weights: Vec<T>, denom: T },
    CropResize { x: Var, taps: Vec<([usize; 4], [T; 4])>, rois: usize, c: usize, plane: usize, out: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// One forward evaluation and its gradients.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn mismatch(msg: String) -> TensorError {
    TensorError::ShapeMismatch(msg)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`, when `v` is
    /// on a path from a differentiable leaf to that loss.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// A constant leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf that is not tied to a parameter store.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copies a parameter's current value into the graph.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    /// Parameters referenced by this graph and their gradients.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.nodes.iter().filter_map(|n| match (&n.op, &n.grad) {
            (Op::Param(id), Some(g)) => Some((*id, g)),
            _ => None,
        })
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        let (&[n, c, h, wd], &[k, wc, kh, kw]) = (xs.as_slice(), ws.as_slice()) else {
            return Err(mismatch(format!("conv2d expects 4-d input and weight, got {xs:?} and {ws:?}")));
        };
        if wc != c || bs != [k] || stride == 0 || kh > h + 2 * pad || kw > wd + 2 * pad {
            return Err(mismatch(format!(
                "conv2d input {xs:?}, weight {ws:?}, bias {bs:?}, stride {stride}, pad {pad}"
            )));
        }
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        };
        let mut out = Tensor::zeros(&[n, k, geom.ho, geom.wo]);
        conv_forward(self.value(x).data(), n, self.value(w).data(), self.value(b).data(), k, &geom, out.data_mut());
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom, n, k }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        let rg = self.needs(&[x]);
        self.push(out, Op::Relu { x }, rg)
    }

    /// 2x2 max pooling, stride 2, output `ceil(H/2) x ceil(W/2)`.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let &[n, c, h, w] = xs.as_slice() else {
            return Err(mismatch(format!("max_pool2 expects 4-d input, got {xs:?}")));
        };
        let mut out = Tensor::zeros(&[n, c, h.div_ceil(2), w.div_ceil(2)]);
        let argmax = max_pool2(self.value(x).data(), n * c, h, w, out.data_mut());
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, rg))
    }

    /// `x[N, D] * w[D, E] + b[E]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        let (&[rows, din], &[wd, dout]) = (xs.as_slice(), ws.as_slice()) else {
            return Err(mismatch(format!("linear expects 2-d input and weight, got {xs:?} and {ws:?}")));
        };
        if wd != din || bs != [dout] {
            return Err(mismatch(format!("linear input {xs:?}, weight {ws:?}, bias {bs:?}")));
        }
        let mut out = Tensor::zeros(&[rows, dout]);
        let bias = self.value(b).data();
        for row in out.data_mut().chunks_mut(dout) {
            row.copy_from_slice(bias);
        }
        T::gemm(
            rows,
            din,
            dout,
            T::one(),
            self.value(x).data(),
            (din as isize, 1),
            self.value(w).data(),
            (dout as isize, 1),
            T::one(),
            out.data_mut(),
            (dout as isize, 1),
        );
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Linear { x, w, b, rows, din, dout }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(format!("add {:?} and {:?}", self.shape(a), self.shape(b))));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn mul_scalar(&mut self, x: Var, s: f64) -> Var {
        let s = T::from_f64(s);
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = *v * s);
        let rg = self.needs(&[x]);
        self.push(out, Op::MulScalar { x, s }, rg)
    }

    /// Concatenation along the first axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| mismatch("concat of nothing".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s[1..] != tail[..] {
                return Err(mismatch(format!("concat {:?} with trailing shape {tail:?}", s)));
            }
            rows += s[0];
            data.extend_from_slice(self.value(*p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let rg = self.needs(parts);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat { parts: parts.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    /// Rearranges a head output `[1, k*m, H, W]` into per-anchor rows
    /// `[H*W*k, m]`, ordered by cell (row-major) then anchor index.
    pub fn anchor_rows(&mut self, x: Var, m: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let &[1, km, h, w] = xs.as_slice() else {
            return Err(mismatch(format!("anchor_rows expects [1, k*m, H, W], got {xs:?}")));
        };
        if m == 0 || km % m != 0 {
            return Err(mismatch(format!("{km} channels do not split into groups of {m}")));
        }
        let k = km / m;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); h * w * k * m];
        for a in 0..k {
            for c in 0..m {
                let plane = &src[(a * m + c) * h * w..(a * m + c + 1) * h * w];
                for (cell, &v) in plane.iter().enumerate() {
                    out[(cell * k + a) * m + c] = v;
                }
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![h * w * k, m], out)?, Op::AnchorRows { x, k, m, h, w }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Weighted mean of `-ln softmax(logits)[target]`, normalized by
    /// `max(1, sum(weights))`. A zero weight masks a row entirely.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        let &[n, c] = ls.as_slice() else {
            return Err(mismatch(format!("softmax_cross_entropy expects [N, C] logits, got {ls:?}")));
        };
        if targets.len() != n || weights.len() != n {
            return Err(mismatch(format!("{n} logit rows, {} targets, {} weights", targets.len(), weights.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::BadTarget { target: t, classes: c });
        }
        let probs = softmax_rows(self.value(logits).data(), c);
        let weights: Vec<T> = weights.iter().map(|&w| T::from_f64(w)).collect();
        let denom = weights.iter().copied().sum::<T>().max(T::one());
        let lv = self.value(logits).data();
        let mut loss = T::zero();
        for (i, (&t, &wt)) in targets.iter().zip(&weights).enumerate() {
            if wt == T::zero() {
                continue;
            }
            let row = &lv[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            loss = loss + wt * (lse - row[t]);
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / denom),
            Op::SoftmaxCe { logits, targets: targets.to_vec(), weights, probs, denom },
            rg,
        ))
    }

    /// Weighted mean of the smooth-L1 penalty over `pred - target`,
    /// normalized by `max(1, sum(weights))`; `weights` is per element.
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor<T>, weights: &[f64]) -> Result<Var> {
        if self.shape(pred) != target.shape() || weights.len() != target.len() {
            return Err(mismatch(format!(
                "smooth_l1 pred {:?}, target {:?}, {} weights",
                self.shape(pred),
                target.shape(),
                weights.len()
            )));
        }
        let weights: Vec<T> = weights.iter().map(|&w| T::from_f64(w)).collect();
        let denom = weights.iter().copied().sum::<T>().max(T::one());
        let diff: Vec<T> = self.value(pred).data().iter().zip(target.data()).map(|(&p, &t)| p - t).collect();
        let half = T::from_f64(0.5);
        let loss: T = diff
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w != T::zero())
            .map(|(&d, &w)| w * if d.abs() < T::one() { half * d * d } else { d.abs() - half })
            .sum();
        let rg = self.needs(&[pred]);
        Ok(self.push(Tensor::scalar(loss / denom), Op::SmoothL1 { pred, diff, weights, denom }, rg))
    }

    /// Bilinearly samples an `out x out` grid inside every box of a
    /// `[1, C, H, W]` map; box coordinates are in feature-cell units, with
    /// cell `j` centered at `j + 0.5`. Returns `[R, C, out, out]`.
    /// Differentiable with respect to the features only.
    pub fn crop_resize(&mut self, x: Var, boxes: &[BBox], out: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let &[1, c, h, w] = xs.as_slice() else {
            return Err(mismatch(format!("crop_resize expects [1, C, H, W], got {xs:?}")));
        };
        if out == 0 || boxes.is_empty() {
            return Err(mismatch("crop_resize needs at least one box and out >= 1".into()));
        }
        let mut taps = Vec::with_capacity(boxes.len() * out * out);
        for b in boxes {
            if !(b.is_valid() && b.width() > 0.0 && b.height() > 0.0) {
                return Err(TensorError::DegenerateBox);
            }
            for i in 0..out {
                let y = b.ymin + (i as f64 + 0.5) / out as f64 * b.height() - 0.5;
                for j in 0..out {
                    let xx = b.xmin + (j as f64 + 0.5) / out as f64 * b.width() - 0.5;
                    let (idx, wt) = bilinear_taps(y, xx, h, w);
                    taps.push((idx, wt.map(T::from_f64)));
                }
            }
        }
        let plane = h * w;
        let oo = out * out;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); boxes.len() * c * oo];
        for r in 0..boxes.len() {
            let rt = &taps[r * oo..(r + 1) * oo];
            for ch in 0..c {
                let fm = &src[ch * plane..(ch + 1) * plane];
                let dst = &mut data[(r * c + ch) * oo..(r * c + ch + 1) * oo];
                for (d, (idx, wt)) in dst.iter_mut().zip(rt) {
                    *d = wt[0] * fm[idx[0]] + wt[1] * fm[idx[1]] + wt[2] * fm[idx[2]] + wt[3] * fm[idx[3]];
                }
            }
        }
        let rg = self.needs(&[x]);
        let rois = boxes.len();
        Ok(self.push(Tensor::new(vec![rois, c, out, out], data)?, Op::CropResize { x, taps, rois, c, plane, out }, rg))
    }

    /// Reverse sweep from a one-element `loss`. Gradients of earlier calls
    /// are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = if node.requires_grad { g } else { None };
        }
        Ok(())
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)).data_mut())
    }

    /// Removes (or creates) the gradient buffer of `v` for in-place updates.
    fn take(&self, grads: &mut [Option<Tensor<T>>], v: Var) -> Option<Tensor<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(grads[v.0].take().unwrap_or_else(|| Tensor::zeros(self.shape(v))))
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, b, geom, n, k } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dx = self.take(grads, *x);
                let mut dw = self.take(grads, *w);
                let mut db = self.take(grads, *b);
                conv_backward(
                    xv,
                    *n,
                    wv,
                    *k,
                    geom,
                    gd,
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                for (v, d) in [(*x, dx), (*w, dw), (*b, db)] {
                    if d.is_some() {
                        grads[v.0] = d;
                    }
                }
            }
            Op::Relu { x } => {
                let out = self.nodes[i].value.data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &o), &gv) in dx.iter_mut().zip(out).zip(gd) {
                        if o > T::zero() {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for (&src, &gv) in argmax.iter().zip(gd) {
                        dx[src] = dx[src] + gv;
                    }
                }
            }
            Op::Linear { x, w, b, rows, din, dout } => {
                let (rows, din, dout) = (*rows, *din, *dout);
                if let Some(dx) = self.slot(grads, *x) {
                    // dx[N, D] += g[N, E] * w[D, E]^T
                    let wv = self.value(*w).data();
                    T::gemm(
                        rows,
                        dout,
                        din,
                        T::one(),
                        gd,
                        (dout as isize, 1),
                        wv,
                        (1, dout as isize),
                        T::one(),
                        dx,
                        (din as isize, 1),
                    );
                }
                if let Some(dw) = self.slot(grads, *w) {
                    // dw[D, E] += x[N, D]^T * g[N, E]
                    let xv = self.value(*x).data();
                    T::gemm(
                        din,
                        rows,
                        dout,
                        T::one(),
                        xv,
                        (1, din as isize),
                        gd,
                        (dout as isize, 1),
                        T::one(),
                        dw,
                        (dout as isize, 1),
                    );
                }
                if let Some(db) = self.slot(grads, *b) {
                    for row in gd.chunks(dout) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        for (d, &gv) in d.iter_mut().zip(gd) {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::MulScalar { x, s } => {
                if let Some(d) = self.slot(grads, *x) {
                    for (d, &gv) in d.iter_mut().zip(gd) {
                        *d = *d + *s * gv;
                    }
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(d) = self.slot(grads, *p) {
                        for (d, &gv) in d.iter_mut().zip(&gd[offset..offset + len]) {
                            *d = *d + gv;
                        }
                    }
                    offset += len;
                }
            }
            Op::Reshape { x } | Op::Sum { x } => {
                let sum_op = matches!(self.nodes[i].op, Op::Sum { .. });
                if let Some(d) = self.slot(grads, *x) {
                    if sum_op {
                        d.iter_mut().for_each(|d| *d = *d + gd[0]);
                    } else {
                        for (d, &gv) in d.iter_mut().zip(gd) {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::AnchorRows { x, k, m, h, w } => {
                let (k, m, hw) = (*k, *m, h * w);
                if let Some(dx) = self.slot(grads, *x) {
                    for a in 0..k {
                        for c in 0..m {
                            let plane = &mut dx[(a * m + c) * hw..(a * m + c + 1) * hw];
                            for (cell, d) in plane.iter_mut().enumerate() {
                                *d = *d + gd[(cell * k + a) * m + c];
                            }
                        }
                    }
                }
            }
            Op::SoftmaxCe { logits, targets, weights, probs, denom } => {
                let c = self.shape(*logits)[1];
                let scale = gd[0] / *denom;
                if let Some(dl) = self.slot(grads, *logits) {
                    for (r, (&t, &wt)) in targets.iter().zip(weights).enumerate() {
                        if wt == T::zero() {
                            continue;
                        }
                        let f = wt * scale;
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            dl[r * c + j] = dl[r * c + j] + f * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::SmoothL1 { pred, diff, weights, denom } => {
                let scale = gd[0] / *denom;
                if let Some(dp) = self.slot(grads, *pred) {
                    for ((d, &df), &wt) in dp.iter_mut().zip(diff).zip(weights) {
                        if wt == T::zero() {
                            continue;
                        }
                        let slope = if df.abs() < T::one() { df } else { df.signum() };
                        *d = *d + wt * scale * slope;
                    }
                }
            }
            Op::CropResize { x, taps, rois, c, plane, out } => {
                let oo = out * out;
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..*rois {
                        let rt = &taps[r * oo..(r + 1) * oo];
                        for ch in 0..*c {
                            let fm = &mut dx[ch * plane..(ch + 1) * plane];
                            let src = &gd[(r * c + ch) * oo..(r * c + ch + 1) * oo];
                            for (&gv, (idx, wt)) in src.iter().zip(rt) {
                                for t in 0..4 {
                                    fm[idx[t]] = fm[idx[t]] + wt[t] * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-wise numerically stable softmax of a `[N, C]` buffer.
pub fn softmax_rows<T: Scalar>(data: &[T], c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(c) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - mx).exp()));
        let s: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / s);
    }
    out
}

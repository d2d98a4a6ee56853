//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation applied during a forward pass. Each
//! operation appends a node whose inputs were recorded earlier, so the node
//! list is already in topological order and [`Tape::backward`] simply walks
//! it in reverse.
//!
//! Gradients are only propagated through nodes that (transitively) depend
//! on a leaf created with `requires_grad = true`; constant subgraphs cost a
//! forward pass and nothing else.
//!
//! `backward` may run once per tape. A second call returns
//! [`Error::Backward`] instead of silently accumulating; build a fresh tape
//! for every step.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, ConvGrads};
use crate::tensor::Tensor;

/// Lower bound applied inside every logarithm of the loss functions.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        batch: usize,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Relu(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Softmax(Var),
    SliceCols {
        input: Var,
        start: usize,
    },
    SumCols(Var),
    Gather {
        input: Var,
        index: Vec<usize>,
    },
    LogClamp(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records a forward computation and differentiates it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// 2-D convolution with zero padding.
    ///
    /// `input` is `[C_in, H, W]` or batched `[N, C_in, H, W]`; `kernel` is
    /// `[C_out, C_in, kh, kw]` and `bias` is `[C_out]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        let (batch, c_in, h, w) = match xs.as_slice() {
            [c, h, w] => (1, *c, *h, *w),
            [n, c, h, w] => (*n, *c, *h, *w),
            _ => return Err(Error::shape("conv2d", format!("input must be 3-D or 4-D, got {xs:?}"))),
        };
        let [c_out, k_in, kh, kw] = ks[..] else {
            return Err(Error::shape("conv2d", format!("kernel must be 4-D, got {ks:?}")));
        };
        if k_in != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {k_in} input channels, input has {c_in}"),
            ));
        }
        if bs != [c_out] {
            return Err(Error::shape("conv2d", format!("bias {bs:?} for {c_out} output channels")));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        };
        let mut out = vec![0.0; batch * geom.out_len()];
        kernels::conv_forward(
            &geom,
            batch,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &mut out,
        );
        let shape = if xs.len() == 3 {
            vec![c_out, geom.oh, geom.ow]
        } else {
            vec![batch, c_out, geom.oh, geom.ow]
        };
        let rg = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
            },
        ))
    }

    /// Affine map `input · weights + bias` for `input: [N, D]`, `weights: [D, M]`.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let xs = self.value(input).shape();
        let ws = self.value(weights).shape();
        let bs = self.value(bias).shape();
        let (&[n, d], &[d2, m]) = (xs, ws) else {
            return Err(Error::shape("dense", format!("expected 2-D operands, got {xs:?} and {ws:?}")));
        };
        if d != d2 {
            return Err(Error::shape("dense", format!("inner dimensions {d} and {d2} differ")));
        }
        if bs != [m] {
            return Err(Error::shape("dense", format!("bias {bs:?} for {m} outputs")));
        }
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.value(bias).data());
        }
        kernels::gemm_acc(
            self.value(input).data(),
            self.value(weights).data(),
            &mut out,
            n,
            d,
            m,
        );
        let rg = self.needs(input) || self.needs(weights) || self.needs(bias);
        Ok(self.push(
            Tensor::new(vec![n, m], out)?,
            rg,
            Op::Dense {
                input,
                weights,
                bias,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(value, rg, Op::Relu(x))
    }

    /// Non-overlapping 2×2 max pooling over the last two axes.
    ///
    /// Ties route the gradient to the first maximal element in row-major
    /// window order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() < 2 {
            return Err(Error::shape("maxpool2", format!("need at least 2 axes, got {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("maxpool2", format!("odd spatial extent {h}x{w}")));
        }
        let planes: usize = s[..s.len() - 2].iter().product();
        let (oh, ow) = (h / 2, w / 2);
        let src = t.data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let top = base + 2 * oy * w + 2 * ox;
                    let mut best = top;
                    for idx in [top + 1, top + w, top + w + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let mut shape = s.to_vec();
        let nd = shape.len();
        shape[nd - 2] = oh;
        shape[nd - 1] = ow;
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::MaxPool2 { input: x, argmax }))
    }

    /// Mean over the spatial axes: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [n, c, h, w] = t.shape()[..] else {
            return Err(Error::shape("global_avg_pool", format!("need 4-D input, got {:?}", t.shape())));
        };
        let hw = h * w;
        let out = t
            .data()
            .chunks_exact(hw)
            .map(|plane| plane.iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(vec![n, c], out)?, rg, Op::GlobalAvgPool(x)))
    }

    /// Row-wise softmax of a `[N, M]` matrix, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [n, m] = t.shape()[..] else {
            return Err(Error::shape("softmax", format!("need 2-D input, got {:?}", t.shape())));
        };
        let out: Vec<f64> = t.data().chunks_exact(m).flat_map(softmax_row).collect();
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(vec![n, m], out)?, rg, Op::Softmax(x)))
    }

    /// Columns `[start, end)` of a `[N, M]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let [n, m] = t.shape()[..] else {
            return Err(Error::shape("slice_cols", format!("need 2-D input, got {:?}", t.shape())));
        };
        if start >= end || end > m {
            return Err(Error::shape("slice_cols", format!("range {start}..{end} of {m} columns")));
        }
        let out = t
            .data()
            .chunks_exact(m)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let rg = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![n, end - start], out)?,
            rg,
            Op::SliceCols { input: x, start },
        ))
    }

    /// Row sums: `[N, M] -> [N]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [n, m] = t.shape()[..] else {
            return Err(Error::shape("sum_cols", format!("need 2-D input, got {:?}", t.shape())));
        };
        let out = t.data().chunks_exact(m).map(|r| r.iter().sum()).collect();
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(vec![n], out)?, rg, Op::SumCols(x)))
    }

    /// Picks `x[i, index[i]]` from each row: `[N, M] -> [N]`.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let [n, m] = t.shape()[..] else {
            return Err(Error::shape("gather", format!("need 2-D input, got {:?}", t.shape())));
        };
        if index.len() != n {
            return Err(Error::shape("gather", format!("{} indices for {n} rows", index.len())));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::shape("gather", format!("index {bad} out of {m} columns")));
        }
        let out = index
            .iter()
            .enumerate()
            .map(|(row, &col)| t.data()[row * m + col])
            .collect();
        let rg = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![n], out)?,
            rg,
            Op::Gather {
                input: x,
                index: index.to_vec(),
            },
        ))
    }

    /// Elementwise `ln(max(x, LOG_CLAMP))`.
    pub fn log_clamped(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(LOG_CLAMP).ln()).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(value, rg, Op::LogClamp(x))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * c).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(x);
        self.push(value, rg, Op::Scale(x, c))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    /// Mean of all elements as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.needs(x);
        self.push(Tensor::scalar(s), rg, Op::Mean(x))
    }

    fn zip(&self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// Propagates d`loss`/d`node` to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Backward("tape already differentiated".into()));
        }
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the differentiated loss with respect to `v`, if any
    /// contribution reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.as_ref()?.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.value(v).shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs(target) {
            return;
        }
        let slot = grads[target.0].get_or_insert_with(|| vec![0.0; self.nodes[target.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
            } => {
                let mut di = self.needs(*input).then(|| vec![0.0; self.value(*input).numel()]);
                let mut dk = self.needs(*kernel).then(|| vec![0.0; self.value(*kernel).numel()]);
                let mut db = self.needs(*bias).then(|| vec![0.0; self.value(*bias).numel()]);
                kernels::conv_backward(
                    geom,
                    *batch,
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    g,
                    ConvGrads {
                        input: di.as_deref_mut(),
                        kernel: dk.as_deref_mut(),
                        bias: db.as_deref_mut(),
                    },
                );
                for (var, d) in [(*input, di), (*kernel, dk), (*bias, db)] {
                    if let Some(d) = d {
                        self.accumulate(grads, var, |acc| add_into(acc, &d));
                    }
                }
            }
            Op::Dense {
                input,
                weights,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weights);
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let m = w.shape()[1];
                self.accumulate(grads, *input, |acc| {
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for k in 0..d {
                            let wrow = &w.data()[k * m..(k + 1) * m];
                            acc[r * d + k] += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *weights, |acc| {
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for k in 0..d {
                            let xv = x.data()[r * d + k];
                            for (a, gv) in acc[k * m..(k + 1) * m].iter_mut().zip(grow) {
                                *a += xv * gv;
                            }
                        }
                    }
                });
                self.accumulate(grads, *bias, |acc| {
                    for grow in g.chunks_exact(m) {
                        add_into(acc, grow);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |acc| {
                    for ((a, &v), &gv) in acc.iter_mut().zip(xv).zip(g) {
                        if v > 0.0 {
                            *a += gv;
                        }
                    }
                });
            }
            Op::MaxPool2 { input, argmax } => {
                self.accumulate(grads, *input, |acc| {
                    for (&idx, &gv) in argmax.iter().zip(g) {
                        acc[idx] += gv;
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let s = self.value(*x).shape();
                let hw = s[2] * s[3];
                let inv = 1.0 / hw as f64;
                self.accumulate(grads, *x, |acc| {
                    for (plane, &gv) in acc.chunks_exact_mut(hw).zip(g) {
                        plane.iter_mut().for_each(|a| *a += gv * inv);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let m = node.value.shape()[1];
                self.accumulate(grads, *x, |acc| {
                    for ((arow, yrow), grow) in acc.chunks_exact_mut(m).zip(y.chunks_exact(m)).zip(g.chunks_exact(m)) {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for ((a, &yv), &gv) in arow.iter_mut().zip(yrow).zip(grow) {
                            *a += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::SliceCols { input, start } => {
                let m = self.value(*input).shape()[1];
                let width = node.value.shape()[1];
                self.accumulate(grads, *input, |acc| {
                    for (arow, grow) in acc.chunks_exact_mut(m).zip(g.chunks_exact(width)) {
                        add_into(&mut arow[*start..*start + width], grow);
                    }
                });
            }
            Op::SumCols(x) => {
                let m = self.value(*x).shape()[1];
                self.accumulate(grads, *x, |acc| {
                    for (arow, &gv) in acc.chunks_exact_mut(m).zip(g) {
                        arow.iter_mut().for_each(|a| *a += gv);
                    }
                });
            }
            Op::Gather { input, index } => {
                let m = self.value(*input).shape()[1];
                self.accumulate(grads, *input, |acc| {
                    for (row, (&col, &gv)) in index.iter().zip(g).enumerate() {
                        acc[row * m + col] += gv;
                    }
                });
            }
            Op::LogClamp(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |acc| {
                    for ((a, &v), &gv) in acc.iter_mut().zip(xv).zip(g) {
                        if v > LOG_CLAMP {
                            *a += gv / v;
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |acc| {
                    for ((s, &o), &gv) in acc.iter_mut().zip(bv).zip(g) {
                        *s += o * gv;
                    }
                });
                self.accumulate(grads, *b, |acc| {
                    for ((s, &o), &gv) in acc.iter_mut().zip(av).zip(g) {
                        *s += o * gv;
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |acc| add_into(acc, g));
                self.accumulate(grads, *b, |acc| add_into(acc, g));
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, |acc| {
                    for (a, &gv) in acc.iter_mut().zip(g) {
                        *a += c * gv;
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |acc| acc.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::Mean(x) => {
                let inv = g[0] / self.value(*x).numel() as f64;
                self.accumulate(grads, *x, |acc| acc.iter_mut().for_each(|a| *a += inv));
            }
        }
    }
}

fn add_into(acc: &mut [f64], src: &[f64]) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += s;
    }
}

/// Numerically stable softmax of one row. Outputs are floored at the
/// smallest positive normal so every probability stays strictly positive.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row
        .iter()
        .map(|&z| (z - max).exp().max(f64::MIN_POSITIVE))
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

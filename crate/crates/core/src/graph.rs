//! Reverse-mode automatic differentiation over a flat node arena.
//!
//! A [`Graph`] owns parameters (persistent leaves created up front) and
//! intermediates (appended by each forward pass, dropped by
//! [`Graph::reset_intermediates`]). Ops execute eagerly at creation, so node
//! indices are already in topological order and [`Graph::backward`] is a single
//! reverse sweep. Every op validates its output for NaN/Inf; a non-finite value
//! is an error, not a silent state.
//!
//! Multiply-accumulate counts for convolutions and matrix products accumulate
//! in a monotonic counter ([`Graph::macs`]); callers take deltas around the
//! region they want to attribute. Elementwise ops, pooling, and softmax count
//! zero MACs by convention.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: f64,
    },
    Relu {
        x: usize,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: usize,
        rows: usize,
        cols: usize,
    },
    Reshape {
        x: usize,
    },
    Conv2d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        x: usize,
        stride: usize,
        argmax: Vec<u32>,
    },
    AvgPool2d {
        x: usize,
        stride: usize,
    },
    Upsample2d {
        x: usize,
        factor: usize,
    },
    SoftmaxRows {
        x: usize,
    },
    SumAll {
        x: usize,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<i64>,
        ignore_index: i64,
        probs: Vec<f64>,
        valid: usize,
    },
    KlDiv {
        student: usize,
        p_student: Vec<f64>,
        p_teacher: Vec<f64>,
    },
    SliceChannels {
        x: usize,
        start: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
    name: Option<String>,
    momentum: Option<Vec<f64>>,
}

/// Computation graph: persistent parameter leaves plus per-pass intermediates.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<TensorId>,
    persist: usize,
    macs: u64,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a trainable leaf. Must be called before any intermediate node
    /// exists; parameters survive [`Graph::reset_intermediates`].
    pub fn parameter(&mut self, name: &str, init: Tensor) -> Result<TensorId> {
        if self.nodes.len() != self.persist {
            return Err(Error::InvalidArg {
                op: "parameter",
                msg: format!(
                    "parameter {name:?} registered after intermediates; \
                     create all parameters before running forward passes"
                ),
            });
        }
        let n = init.numel();
        self.nodes.push(Node {
            value: init,
            grad: vec![0.0; n],
            requires_grad: true,
            op: Op::Leaf,
            name: Some(name.to_string()),
            momentum: Some(vec![0.0; n]),
        });
        self.persist = self.nodes.len();
        let id = TensorId(self.nodes.len() - 1);
        self.params.push(id);
        Ok(id)
    }

    /// Non-trainable leaf holding input data. Dropped on reset.
    pub fn constant(&mut self, t: Tensor) -> TensorId {
        let n = t.numel();
        self.nodes.push(Node {
            value: t,
            grad: vec![0.0; n],
            requires_grad: false,
            op: Op::Leaf,
            name: None,
            momentum: None,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// Non-trainable leaf that participates in backward as a differentiable
    /// input (gradients are accumulated but it is not a parameter).
    pub fn input(&mut self, t: Tensor) -> TensorId {
        let id = self.constant(t);
        self.nodes[id.0].requires_grad = true;
        id
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn param_ids(&self) -> &[TensorId] {
        &self.params
    }

    pub fn param_name(&self, id: TensorId) -> &str {
        self.nodes[id.0].name.as_deref().unwrap_or("")
    }

    pub fn is_param(&self, id: TensorId) -> bool {
        self.params.contains(&id)
    }

    /// Total parameter coordinates (for capacity accounting).
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| self.nodes[p.0].value.numel()).sum()
    }

    /// Overwrite a parameter's value in place (checkpoint load, perturbation).
    pub fn set_param_value(&mut self, id: TensorId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if node.momentum.is_none() {
            return Err(Error::InvalidArg {
                op: "set_param_value",
                msg: "target node is not a parameter".into(),
            });
        }
        if node.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param_value",
                lhs: node.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        node.value = value;
        Ok(())
    }

    pub(crate) fn param_value_mut(&mut self, id: TensorId) -> &mut [f64] {
        self.nodes[id.0].value.data_mut()
    }

    pub(crate) fn param_state_mut(&mut self, id: TensorId) -> (&mut [f64], &[f64], &mut [f64]) {
        let node = &mut self.nodes[id.0];
        (
            node.value.data_mut(),
            &node.grad,
            node.momentum.as_mut().expect("not a parameter").as_mut_slice(),
        )
    }

    /// Drop every node created after the parameters. Parameter values, grads,
    /// and momentum buffers are untouched.
    pub fn reset_intermediates(&mut self) {
        self.nodes.truncate(self.persist);
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            for g in &mut n.grad {
                *g = 0.0;
            }
        }
    }

    /// Monotonic multiply-accumulate counter (forward ops only).
    pub fn macs(&self) -> u64 {
        self.macs
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<TensorId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let n = value.numel();
        self.nodes.push(Node {
            value,
            grad: vec![0.0; n],
            requires_grad,
            op,
            name: None,
            momentum: None,
        });
        Ok(TensorId(self.nodes.len() - 1))
    }

    fn rg(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ---- ops ----

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("add", value, Op::Add { a: a.0, b: b.0 }, rg)
    }

    /// Multiply every element by a compile-time constant.
    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let data: Vec<f64> = tx.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push("scale", value, Op::Scale { x: x.0, c }, rg)
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let data: Vec<f64> = tx.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push("relu", value, Op::Relu { x: x.0 }, rg)
    }

    /// Matrix product of `a: [M,K]` and `b: [K,N]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.ndim() != 2 || tb.ndim() != 2 {
            return Err(Error::InvalidArg {
                op: "matmul",
                msg: format!("expects 2-D operands, got {:?} and {:?}", ta.shape(), tb.shape()),
            });
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(Error::DimMismatch {
                op: "matmul",
                dim: "inner",
                expected: k,
                got: k2,
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::mm_nn(ta.data(), tb.data(), m, k, n, &mut out);
        self.macs += (m * k * n) as u64;
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", value, Op::MatMul { a: a.0, b: b.0, m, k, n }, rg)
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        if tx.ndim() != 2 {
            return Err(Error::InvalidArg {
                op: "transpose",
                msg: format!("expects 2-D operand, got {:?}", tx.shape()),
            });
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let src = tx.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        let rg = self.rg(x);
        self.push("transpose", value, Op::Transpose { x: x.0, rows: r, cols: c }, rg)
    }

    /// View with a new shape; element count must match.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let n: usize = shape.iter().product();
        if n != tx.numel() {
            return Err(Error::InvalidArg {
                op: "reshape",
                msg: format!("cannot view {:?} as {:?}", tx.shape(), shape),
            });
        }
        let value = Tensor::new(shape.to_vec(), tx.data().to_vec())?;
        let rg = self.rg(x);
        self.push("reshape", value, Op::Reshape { x: x.0 }, rg)
    }

    /// 2-D convolution of `input: [C_in,H,W]` with `weight: [C_out,C_in,k,k]`,
    /// zero padding, square stride. Output is `[C_out,H',W']` with
    /// `H' = (H + 2p - k)/stride + 1` (floor).
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let (ti, tw) = (&self.nodes[input.0].value, &self.nodes[weight.0].value);
        if ti.ndim() != 3 {
            return Err(Error::InvalidArg {
                op: "conv2d",
                msg: format!("input must be [C,H,W], got {:?}", ti.shape()),
            });
        }
        if tw.ndim() != 4 || tw.shape()[2] != tw.shape()[3] {
            return Err(Error::InvalidArg {
                op: "conv2d",
                msg: format!("weight must be [C_out,C_in,k,k], got {:?}", tw.shape()),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArg {
                op: "conv2d",
                msg: "stride must be >= 1".into(),
            });
        }
        let (c_in, h, w) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
        let (c_out, wc_in, k) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if wc_in != c_in {
            return Err(Error::DimMismatch {
                op: "conv2d",
                dim: "in_channels",
                expected: c_in,
                got: wc_in,
            });
        }
        if k > h + 2 * padding {
            return Err(Error::DimMismatch {
                op: "conv2d",
                dim: "kernel_vs_height",
                expected: h + 2 * padding,
                got: k,
            });
        }
        if k > w + 2 * padding {
            return Err(Error::DimMismatch {
                op: "conv2d",
                dim: "kernel_vs_width",
                expected: w + 2 * padding,
                got: k,
            });
        }
        if let Some(b) = bias {
            let tb = &self.nodes[b.0].value;
            if tb.numel() != c_out {
                return Err(Error::DimMismatch {
                    op: "conv2d",
                    dim: "bias",
                    expected: c_out,
                    got: tb.numel(),
                });
            }
        }
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        let l = oh * ow;
        let ckk = c_in * k * k;
        let mut col = vec![0.0; ckk * l];
        kernels::im2col(ti.data(), c_in, h, w, k, stride, padding, oh, ow, &mut col);
        let mut out = vec![0.0; c_out * l];
        kernels::mm_nn(tw.data(), &col, c_out, ckk, l, &mut out);
        if let Some(b) = bias {
            let tb = self.nodes[b.0].value.data();
            for co in 0..c_out {
                let bv = tb[co];
                for v in &mut out[co * l..(co + 1) * l] {
                    *v += bv;
                }
            }
        }
        self.macs += (c_out * l * ckk) as u64;
        let value = Tensor::new(vec![c_out, oh, ow], out)?;
        let rg = self.rg(input) || self.rg(weight) || bias.map(|b| self.rg(b)).unwrap_or(false);
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|b| b.0),
                stride,
                padding,
            },
            rg,
        )
    }

    /// Channel-wise max pooling with kernel = stride = `n`; trailing rows and
    /// columns that do not fill a window are discarded. Ties route the gradient
    /// to the first element in row-major order.
    pub fn maxpool2d(&mut self, x: TensorId, n: usize) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let (c, h, w) = pool_dims("maxpool2d", tx.shape(), n)?;
        let (oh, ow) = (h / n, w / n);
        let src = tx.data();
        let mut out = vec![0.0; c * oh * ow];
        let mut argmax = vec![0u32; c * oh * ow];
        for ci in 0..c {
            let plane = ci * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for wy in 0..n {
                        let row = plane + (oy * n + wy) * w + ox * n;
                        for wx in 0..n {
                            let v = src[row + wx];
                            if v > best {
                                best = v;
                                best_idx = row + wx;
                            }
                        }
                    }
                    let o = ci * oh * ow + oy * ow + ox;
                    out[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        let rg = self.rg(x);
        self.push("maxpool2d", value, Op::MaxPool2d { x: x.0, stride: n, argmax }, rg)
    }

    /// Channel-wise average pooling with kernel = stride = `n`.
    pub fn avgpool2d(&mut self, x: TensorId, n: usize) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let (c, h, w) = pool_dims("avgpool2d", tx.shape(), n)?;
        let (oh, ow) = (h / n, w / n);
        let src = tx.data();
        let inv = 1.0 / (n * n) as f64;
        let mut out = vec![0.0; c * oh * ow];
        for ci in 0..c {
            let plane = ci * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for wy in 0..n {
                        let row = plane + (oy * n + wy) * w + ox * n;
                        for wx in 0..n {
                            acc += src[row + wx];
                        }
                    }
                    out[ci * oh * ow + oy * ow + ox] = acc * inv;
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        let rg = self.rg(x);
        self.push("avgpool2d", value, Op::AvgPool2d { x: x.0, stride: n }, rg)
    }

    /// Nearest-neighbor upsampling of `[C,h,w]` by an integer factor.
    pub fn upsample_nearest2d(&mut self, x: TensorId, factor: usize) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        if tx.ndim() != 3 {
            return Err(Error::InvalidArg {
                op: "upsample_nearest2d",
                msg: format!("input must be [C,H,W], got {:?}", tx.shape()),
            });
        }
        if factor == 0 {
            return Err(Error::InvalidArg {
                op: "upsample_nearest2d",
                msg: "factor must be >= 1".into(),
            });
        }
        let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (oh, ow) = (h * factor, w * factor);
        let src = tx.data();
        let mut out = vec![0.0; c * oh * ow];
        for ci in 0..c {
            for y in 0..oh {
                let srow = ci * h * w + (y / factor) * w;
                let drow = ci * oh * ow + y * ow;
                for x_ in 0..ow {
                    out[drow + x_] = src[srow + x_ / factor];
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], out)?;
        let rg = self.rg(x);
        self.push("upsample_nearest2d", value, Op::Upsample2d { x: x.0, factor }, rg)
    }

    /// Row-wise softmax of a 2-D tensor with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        if tx.ndim() != 2 {
            return Err(Error::InvalidArg {
                op: "softmax_rows",
                msg: format!("expects 2-D operand, got {:?}", tx.shape()),
            });
        }
        if !tx.is_finite() {
            return Err(Error::NonFinite { op: "softmax_rows" });
        }
        let (m, n) = (tx.shape()[0], tx.shape()[1]);
        let src = tx.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            let inv = 1.0 / sum;
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(x);
        self.push("softmax_rows", value, Op::SoftmaxRows { x: x.0 }, rg)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        let s: f64 = tx.data().iter().sum();
        let rg = self.rg(x);
        self.push("sum_all", Tensor::scalar(s), Op::SumAll { x: x.0 }, rg)
    }

    /// Mean cross entropy of `logits: [K,H,W]` against integer labels of
    /// length `H*W`, skipping `ignore_index`. Zero non-ignored pixels yield a
    /// zero loss with zero gradient.
    pub fn cross_entropy(
        &mut self,
        logits: TensorId,
        labels: &[i64],
        ignore_index: i64,
    ) -> Result<TensorId> {
        let tl = &self.nodes[logits.0].value;
        if tl.ndim() != 3 {
            return Err(Error::InvalidArg {
                op: "cross_entropy",
                msg: format!("logits must be [K,H,W], got {:?}", tl.shape()),
            });
        }
        let (classes, h, w) = (tl.shape()[0], tl.shape()[1], tl.shape()[2]);
        let pixels = h * w;
        if labels.len() != pixels {
            return Err(Error::DimMismatch {
                op: "cross_entropy",
                dim: "labels",
                expected: pixels,
                got: labels.len(),
            });
        }
        for &lab in labels {
            if lab != ignore_index && (lab < 0 || lab as usize >= classes) {
                return Err(Error::LabelOutOfRange {
                    label: lab,
                    classes,
                });
            }
        }
        let src = tl.data();
        let mut probs = vec![0.0; classes * pixels];
        let mut loss = 0.0;
        let mut valid = 0usize;
        for p in 0..pixels {
            let mut max = f64::NEG_INFINITY;
            for k in 0..classes {
                max = max.max(src[k * pixels + p]);
            }
            let mut sum = 0.0;
            for k in 0..classes {
                let e = (src[k * pixels + p] - max).exp();
                probs[k * pixels + p] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for k in 0..classes {
                probs[k * pixels + p] *= inv;
            }
            let lab = labels[p];
            if lab != ignore_index {
                valid += 1;
                loss -= src[lab as usize * pixels + p] - max - sum.ln();
            }
        }
        let loss = if valid > 0 { loss / valid as f64 } else { 0.0 };
        let rg = self.rg(logits);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                ignore_index,
                probs,
                valid,
            },
            rg,
        )
    }

    /// Mean KL divergence `KL(p_teacher || p_student)` over pixels, with both
    /// distributions taken as channel softmax of `[K,H,W]` logits at
    /// temperature 1. The teacher side is detached: no gradient flows to it.
    pub fn kl_div(&mut self, student: TensorId, teacher: TensorId) -> Result<TensorId> {
        let (ts, tt) = (&self.nodes[student.0].value, &self.nodes[teacher.0].value);
        if ts.shape() != tt.shape() {
            return Err(Error::ShapeMismatch {
                op: "kl_div",
                lhs: ts.shape().to_vec(),
                rhs: tt.shape().to_vec(),
            });
        }
        if ts.ndim() != 3 {
            return Err(Error::InvalidArg {
                op: "kl_div",
                msg: format!("logits must be [K,H,W], got {:?}", ts.shape()),
            });
        }
        let (classes, h, w) = (ts.shape()[0], ts.shape()[1], ts.shape()[2]);
        let pixels = h * w;
        let p_student = channel_softmax(ts.data(), classes, pixels);
        let p_teacher = channel_softmax(tt.data(), classes, pixels);
        let mut loss = 0.0;
        for p in 0..pixels {
            for k in 0..classes {
                let pt = p_teacher[k * pixels + p];
                let ps = p_student[k * pixels + p];
                if pt > 0.0 {
                    loss += pt * (pt.ln() - ps.ln());
                }
            }
        }
        loss /= pixels as f64;
        let rg = self.rg(student);
        self.push(
            "kl_div",
            Tensor::scalar(loss),
            Op::KlDiv {
                student: student.0,
                p_student,
                p_teacher,
            },
            rg,
        )
    }

    /// Contiguous channel slice `[start, start+len)` of a `[C,H,W]` tensor.
    pub fn slice_channels(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let tx = &self.nodes[x.0].value;
        if tx.ndim() != 3 {
            return Err(Error::InvalidArg {
                op: "slice_channels",
                msg: format!("input must be [C,H,W], got {:?}", tx.shape()),
            });
        }
        let (c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        if start + len > c || len == 0 {
            return Err(Error::InvalidArg {
                op: "slice_channels",
                msg: format!("slice [{start}, {}) out of {c} channels", start + len),
            });
        }
        let plane = h * w;
        let data = tx.data()[start * plane..(start + len) * plane].to_vec();
        let value = Tensor::new(vec![len, h, w], data)?;
        let rg = self.rg(x);
        self.push("slice_channels", value, Op::SliceChannels { x: x.0, start }, rg)
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
    /// reachable node that requires grad; calling twice without
    /// [`Graph::zero_grad`] adds up.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::InvalidArg {
                op: "backward",
                msg: format!(
                    "loss must be scalar, got shape {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            });
        }
        // Intermediate grads belong to one sweep; only parameter grads
        // accumulate across backward calls.
        for n in &mut self.nodes {
            if n.momentum.is_none() {
                for g in &mut n.grad {
                    *g = 0.0;
                }
            }
        }
        self.nodes[loss.0].grad[0] += 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            backward_op(node, before)?;
        }
        for &p in &self.params {
            if self.nodes[p.0].grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(())
    }
}

fn pool_dims(op: &'static str, shape: &[usize], n: usize) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::InvalidArg {
            op,
            msg: format!("input must be [C,H,W], got {shape:?}"),
        });
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if n == 0 {
        return Err(Error::InvalidArg {
            op,
            msg: "stride must be >= 1".into(),
        });
    }
    if n > h {
        return Err(Error::DimMismatch {
            op,
            dim: "height",
            expected: n,
            got: h,
        });
    }
    if n > w {
        return Err(Error::DimMismatch {
            op,
            dim: "width",
            expected: n,
            got: w,
        });
    }
    Ok((c, h, w))
}

fn channel_softmax(src: &[f64], classes: usize, pixels: usize) -> Vec<f64> {
    let mut out = vec![0.0; classes * pixels];
    for p in 0..pixels {
        let mut max = f64::NEG_INFINITY;
        for k in 0..classes {
            max = max.max(src[k * pixels + p]);
        }
        let mut sum = 0.0;
        for k in 0..classes {
            let e = (src[k * pixels + p] - max).exp();
            out[k * pixels + p] = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for k in 0..classes {
            out[k * pixels + p] *= inv;
        }
    }
    out
}

/// Dispatch one node's vector-Jacobian product into its parents.
fn backward_op(node: &Node, before: &mut [Node]) -> Result<()> {
    let go = &node.grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            for &pid in &[*a, *b] {
                if before[pid].requires_grad {
                    for (g, &d) in before[pid].grad.iter_mut().zip(go) {
                        *g += d;
                    }
                }
            }
        }
        Op::Scale { x, c } => {
            if before[*x].requires_grad {
                for (g, &d) in before[*x].grad.iter_mut().zip(go) {
                    *g += c * d;
                }
            }
        }
        Op::Relu { x } => {
            if before[*x].requires_grad {
                let xv = before[*x].value.data().to_vec();
                for ((g, &d), &v) in before[*x].grad.iter_mut().zip(go).zip(&xv) {
                    if v > 0.0 {
                        *g += d;
                    }
                }
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if before[*a].requires_grad {
                // dA = dY * B^T
                let bv = before[*b].value.data().to_vec();
                let mut da = vec![0.0; m * k];
                kernels::mm_nt(go, &bv, m, n, k, &mut da);
                for (g, d) in before[*a].grad.iter_mut().zip(da) {
                    *g += d;
                }
            }
            if before[*b].requires_grad {
                // dB = A^T * dY
                let av = before[*a].value.data().to_vec();
                let mut db = vec![0.0; k * n];
                kernels::mm_tn(&av, go, m, k, n, &mut db);
                for (g, d) in before[*b].grad.iter_mut().zip(db) {
                    *g += d;
                }
            }
        }
        Op::Transpose { x, rows, cols } => {
            if before[*x].requires_grad {
                let (r, c) = (*rows, *cols);
                let g = &mut before[*x].grad;
                for i in 0..c {
                    for j in 0..r {
                        g[j * c + i] += go[i * r + j];
                    }
                }
            }
        }
        Op::Reshape { x } => {
            if before[*x].requires_grad {
                for (g, &d) in before[*x].grad.iter_mut().zip(go) {
                    *g += d;
                }
            }
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            padding,
        } => {
            let ti = &before[*input].value;
            let tw = &before[*weight].value;
            let (c_in, h, w) = (ti.shape()[0], ti.shape()[1], ti.shape()[2]);
            let (c_out, k) = (tw.shape()[0], tw.shape()[2]);
            let oh = (h + 2 * padding - k) / stride + 1;
            let ow = (w + 2 * padding - k) / stride + 1;
            let l = oh * ow;
            let ckk = c_in * k * k;
            if let Some(b) = bias {
                if before[*b].requires_grad {
                    let gb = &mut before[*b].grad;
                    for co in 0..c_out {
                        gb[co] += go[co * l..(co + 1) * l].iter().sum::<f64>();
                    }
                }
            }
            let need_dw = before[*weight].requires_grad;
            let need_dx = before[*input].requires_grad;
            if need_dw {
                let mut col = vec![0.0; ckk * l];
                kernels::im2col(
                    ti.data(),
                    c_in,
                    h,
                    w,
                    k,
                    *stride,
                    *padding,
                    oh,
                    ow,
                    &mut col,
                );
                let mut dw = vec![0.0; c_out * ckk];
                kernels::mm_nt(go, &col, c_out, l, ckk, &mut dw);
                for (g, d) in before[*weight].grad.iter_mut().zip(dw) {
                    *g += d;
                }
            }
            if need_dx {
                let wv = before[*weight].value.data().to_vec();
                let mut dcol = vec![0.0; ckk * l];
                kernels::mm_tn(&wv, go, c_out, ckk, l, &mut dcol);
                let gx = &mut before[*input].grad;
                kernels::col2im_add(&dcol, c_in, h, w, k, *stride, *padding, oh, ow, gx);
            }
        }
        Op::MaxPool2d { x, argmax, .. } => {
            if before[*x].requires_grad {
                let g = &mut before[*x].grad;
                for (o, &src_idx) in argmax.iter().enumerate() {
                    g[src_idx as usize] += go[o];
                }
            }
        }
        Op::AvgPool2d { x, stride } => {
            if before[*x].requires_grad {
                let n = *stride;
                let shape = before[*x].value.shape().to_vec();
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / n, w / n);
                let inv = 1.0 / (n * n) as f64;
                let g = &mut before[*x].grad;
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let d = go[ci * oh * ow + oy * ow + ox] * inv;
                            for wy in 0..n {
                                let row = ci * h * w + (oy * n + wy) * w + ox * n;
                                for wx in 0..n {
                                    g[row + wx] += d;
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::Upsample2d { x, factor } => {
            if before[*x].requires_grad {
                let f = *factor;
                let shape = before[*x].value.shape().to_vec();
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h * f, w * f);
                let g = &mut before[*x].grad;
                for ci in 0..c {
                    for y in 0..oh {
                        let srow = ci * h * w + (y / f) * w;
                        let drow = ci * oh * ow + y * ow;
                        for x_ in 0..ow {
                            g[srow + x_ / f] += go[drow + x_];
                        }
                    }
                }
            }
        }
        Op::SoftmaxRows { x } => {
            if before[*x].requires_grad {
                let y = node.value.data();
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let g = &mut before[*x].grad;
                for i in 0..m {
                    let yrow = &y[i * n..(i + 1) * n];
                    let grow = &go[i * n..(i + 1) * n];
                    let dot: f64 = yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..n {
                        g[i * n + j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
        }
        Op::SumAll { x } => {
            if before[*x].requires_grad {
                let d = go[0];
                for g in before[*x].grad.iter_mut() {
                    *g += d;
                }
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            ignore_index,
            probs,
            valid,
        } => {
            if before[*logits].requires_grad && *valid > 0 {
                let shape = before[*logits].value.shape().to_vec();
                let (classes, pixels) = (shape[0], shape[1] * shape[2]);
                let scale = go[0] / *valid as f64;
                let g = &mut before[*logits].grad;
                for (p, &lab) in labels.iter().enumerate() {
                    if lab == *ignore_index {
                        continue;
                    }
                    for k in 0..classes {
                        let ind = if k as i64 == lab { 1.0 } else { 0.0 };
                        g[k * pixels + p] += scale * (probs[k * pixels + p] - ind);
                    }
                }
            }
        }
        Op::KlDiv {
            student,
            p_student,
            p_teacher,
        } => {
            if before[*student].requires_grad {
                let shape = before[*student].value.shape().to_vec();
                let pixels = shape[1] * shape[2];
                let scale = go[0] / pixels as f64;
                let g = &mut before[*student].grad;
                for (i, g_i) in g.iter_mut().enumerate() {
                    *g_i += scale * (p_student[i] - p_teacher[i]);
                }
            }
        }
        Op::SliceChannels { x, start } => {
            if before[*x].requires_grad {
                let shape = node.value.shape();
                let plane = shape[1] * shape[2];
                let len = shape[0];
                let g = &mut before[*x].grad;
                let base = *start * plane;
                for (i, &d) in go.iter().enumerate().take(len * plane) {
                    g[base + i] += d;
                }
            }
        }
    }
    Ok(())
}

pub(crate) mod kernels {
    //! Flat f64 kernels shared by forward and backward paths.

    /// out += a(MxK) * b(KxN); `out` is M*N and caller-zeroed for a plain product.
    pub fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
    }

    /// out += a(MxK) * b(NxK)^T.
    pub fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b[j * k..(j + 1) * k];
                let dot: f64 = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                out[i * n + j] += dot;
            }
        }
    }

    /// out += a(KxM)^T * b(KxN).
    pub fn mm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
        for kk in 0..k {
            let arow = &a[kk * m..(kk + 1) * m];
            let brow = &b[kk * n..(kk + 1) * n];
            for (i, &aik) in arow.iter().enumerate() {
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
    }

    /// Unfold `[C,H,W]` into `[C*k*k, OH*OW]` with zero padding; `col` must be
    /// zero-initialized.
    #[allow(clippy::too_many_arguments)]
    pub fn im2col(
        x: &[f64],
        c: usize,
        h: usize,
        w: usize,
        k: usize,
        stride: usize,
        pad: usize,
        oh: usize,
        ow: usize,
        col: &mut [f64],
    ) {
        let l = oh * ow;
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let dst_row = ((ci * k + ki) * k + kj) * l;
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = ci * h * w + iy as usize * w;
                        let dst = dst_row + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                col[dst + ox] = x[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Fold gradients back: scatter-add of the im2col layout into `dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn col2im_add(
        col: &[f64],
        c: usize,
        h: usize,
        w: usize,
        k: usize,
        stride: usize,
        pad: usize,
        oh: usize,
        ow: usize,
        dx: &mut [f64],
    ) {
        let l = oh * ow;
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let src_row = ((ci * k + ki) * k + kj) * l;
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = ci * h * w + iy as usize * w;
                        let src = src_row + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dx[dst + ix as usize] += col[src + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

//! Knowledge distillation from a deep single-frame teacher.
//!
//! The teacher's 1x1 dimension-reduction layer is split along its input
//! channels into `m` groups by block matrix multiplication: the group outputs
//! sum (plus the shared bias, added once) to exactly the full reduction
//! output. Each feature path of the student is then supervised against the
//! teacher logits conditioned on its group, in addition to ground truth and
//! the whole-model distillation term.
//!
//! The teacher runs in its own graph; its logits cross into the student's
//! graph as plain tensors, so no gradient can reach teacher parameters.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::subnet::ConvLayer;
use crate::tensor::Tensor;

/// Deep single-frame baseline acting as the teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub in_channels: usize,
    /// Trunk feature channels C_T (split into m groups; must divide evenly).
    pub trunk_channels: usize,
    /// Trunk depth; around m times a student path's depth.
    pub depth: usize,
    pub downsample_factor: usize,
    /// Channels after dimension reduction (the student's C).
    pub reduced_channels: usize,
    pub num_classes: usize,
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.trunk_channels == 0 || self.reduced_channels == 0 {
            return Err(Error::InvalidArg {
                op: "TeacherConfig",
                msg: "depth and channel counts must be positive".into(),
            });
        }
        if !self.downsample_factor.is_power_of_two() {
            return Err(Error::InvalidArg {
                op: "TeacherConfig",
                msg: format!(
                    "downsample_factor must be a power of two, got {}",
                    self.downsample_factor
                ),
            });
        }
        let stages = self.downsample_factor.trailing_zeros() as usize;
        if self.depth < stages {
            return Err(Error::InvalidArg {
                op: "TeacherConfig",
                msg: format!(
                    "depth {} cannot realize downsample factor {}",
                    self.depth, self.downsample_factor
                ),
            });
        }
        Ok(())
    }
}

/// Teacher: deep trunk to C_T channels, 1x1 reduction to C, 1x1 head to K.
#[derive(Debug, Clone)]
pub struct TeacherModel {
    pub cfg: TeacherConfig,
    trunk: Vec<ConvLayer>,
    pub reduction: ConvLayer,
    pub head: ConvLayer,
}

impl TeacherModel {
    pub fn build(g: &mut Graph, cfg: &TeacherConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let stages = cfg.downsample_factor.trailing_zeros() as usize;
        let mut trunk = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let cin = if i == 0 {
                cfg.in_channels
            } else {
                cfg.trunk_channels
            };
            let stride = if i < stages { 2 } else { 1 };
            trunk.push(ConvLayer::build(
                g,
                &format!("teacher.trunk{i}"),
                seed,
                cfg.trunk_channels,
                cin,
                3,
                stride,
                1,
            )?);
        }
        let reduction = ConvLayer::build(
            g,
            "teacher.reduction",
            seed,
            cfg.reduced_channels,
            cfg.trunk_channels,
            1,
            1,
            0,
        )?;
        let head = ConvLayer::build(
            g,
            "teacher.head",
            seed,
            cfg.num_classes,
            cfg.reduced_channels,
            1,
            1,
            0,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            trunk,
            reduction,
            head,
        })
    }

    /// Trunk features `[C_T, H, W]` for a frame.
    pub fn forward_trunk(&self, g: &mut Graph, frame: TensorId) -> Result<TensorId> {
        let shape = g.shape(frame).to_vec();
        let f = self.cfg.downsample_factor;
        if shape.len() != 3 || shape[1] % f != 0 || shape[2] % f != 0 {
            return Err(Error::InvalidArg {
                op: "forward_trunk",
                msg: format!("frame shape {shape:?} incompatible with factor {f}"),
            });
        }
        let mut x = frame;
        for layer in &self.trunk {
            x = layer.apply(g, x)?;
            x = g.relu(x)?;
        }
        Ok(x)
    }

    /// Full-path logits `[K, H, W]` at feature resolution.
    pub fn forward_logits(&self, g: &mut Graph, frame: TensorId) -> Result<TensorId> {
        let x = self.forward_trunk(g, frame)?;
        let reduced = self.reduction.apply(g, x)?;
        self.head.apply(g, reduced)
    }
}

/// Block-matrix split of the teacher's reduction conv into `m` groups, the
/// i-th consuming input channels `[i*C_T/m, (i+1)*C_T/m)`.
#[derive(Debug, Clone)]
pub struct GroupSplit {
    pub m: usize,
    pub group_in: usize,
    pub out_channels: usize,
    weight: TensorId,
    bias: TensorId,
}

/// Split the reduction layer. Fails unless `m` divides C_T.
pub fn split_reduction_layer(
    g: &Graph,
    teacher: &TeacherModel,
    m: usize,
) -> Result<GroupSplit> {
    let c_t = teacher.cfg.trunk_channels;
    if m == 0 || c_t % m != 0 {
        return Err(Error::InvalidArg {
            op: "split_reduction_layer",
            msg: format!("m={m} does not evenly divide C_T={c_t}"),
        });
    }
    let _ = g;
    Ok(GroupSplit {
        m,
        group_in: c_t / m,
        out_channels: teacher.cfg.reduced_channels,
        weight: teacher.reduction.weight,
        bias: teacher.reduction.bias,
    })
}

impl GroupSplit {
    /// Bias-free group contributions `f_i = W_i x_i`, each `[C, H, W]`.
    /// Sub-weights are sliced from the live reduction weight at call time.
    pub fn apply(&self, g: &mut Graph, features: TensorId) -> Result<Vec<TensorId>> {
        let shape = g.shape(features).to_vec();
        if shape.len() != 3 || shape[0] != self.m * self.group_in {
            return Err(Error::DimMismatch {
                op: "GroupSplit::apply",
                dim: "channels",
                expected: self.m * self.group_in,
                got: if shape.is_empty() { 0 } else { shape[0] },
            });
        }
        let full_w = g.tensor(self.weight).clone();
        let c_t = self.m * self.group_in;
        let mut outs = Vec::with_capacity(self.m);
        for i in 0..self.m {
            let x_i = g.slice_channels(features, i * self.group_in, self.group_in)?;
            // Columns [i*g, (i+1)*g) of the [C, C_T] weight matrix.
            let mut wdata = Vec::with_capacity(self.out_channels * self.group_in);
            for co in 0..self.out_channels {
                let row = &full_w.data()[co * c_t..(co + 1) * c_t];
                wdata.extend_from_slice(&row[i * self.group_in..(i + 1) * self.group_in]);
            }
            let w_i = g.constant(Tensor::new(
                vec![self.out_channels, self.group_in, 1, 1],
                wdata,
            )?);
            outs.push(g.conv2d(x_i, w_i, None, 1, 0)?);
        }
        Ok(outs)
    }

    /// `sum_i f_i + bias`, which equals the full reduction output exactly.
    pub fn sum_with_bias(&self, g: &mut Graph, groups: &[TensorId]) -> Result<TensorId> {
        if groups.len() != self.m {
            return Err(Error::InvalidArg {
                op: "GroupSplit::sum_with_bias",
                msg: format!("expected {} groups, got {}", self.m, groups.len()),
            });
        }
        let mut acc = groups[0];
        for &gi in &groups[1..] {
            acc = g.add(acc, gi)?;
        }
        let bias = broadcast_channels(g, self.bias, g.shape(acc)[1], g.shape(acc)[2], 1.0)?;
        g.add(acc, bias)
    }

    /// Group contribution with its share of the bias: `f_i + bias/m`. Feeding
    /// these to the head keeps per-group logits well defined while their sum
    /// still reproduces the full reduction output.
    pub fn group_with_bias_share(&self, g: &mut Graph, group: TensorId) -> Result<TensorId> {
        let shape = g.shape(group).to_vec();
        let bias = broadcast_channels(g, self.bias, shape[1], shape[2], 1.0 / self.m as f64)?;
        g.add(group, bias)
    }
}

/// Constant `[C,H,W]` map holding `scale * per_channel[c]` everywhere.
fn broadcast_channels(
    g: &mut Graph,
    per_channel: TensorId,
    h: usize,
    w: usize,
    scale: f64,
) -> Result<TensorId> {
    let vals = g.data(per_channel).to_vec();
    let mut data = Vec::with_capacity(vals.len() * h * w);
    for v in &vals {
        data.extend(std::iter::repeat(v * scale).take(h * w));
    }
    Ok(g.constant(Tensor::new(vec![vals.len(), h, w], data)?))
}

/// Teacher logits for one frame: per-group logits `head(f_i + bias/m)` plus
/// the full logits, all detached into plain tensors at feature resolution.
pub fn teacher_group_logits(
    g: &mut Graph,
    teacher: &TeacherModel,
    split: &GroupSplit,
    frame: &Tensor,
) -> Result<(Vec<Tensor>, Tensor)> {
    let input = g.constant(frame.clone());
    let trunk = teacher.forward_trunk(g, input)?;
    let groups = split.apply(g, trunk)?;
    let mut group_logits = Vec::with_capacity(split.m);
    for &f_i in &groups {
        let with_bias = split.group_with_bias_share(g, f_i)?;
        let logits = teacher.head.apply(g, with_bias)?;
        group_logits.push(g.tensor(logits).clone());
    }
    let full_red = split.sum_with_bias(g, &groups)?;
    let full_logits = teacher.head.apply(g, full_red)?;
    Ok((group_logits, g.tensor(full_logits).clone()))
}

/// The three loss components and their weighted total.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub ce: TensorId,
    pub kd_overall: TensorId,
    pub kd_grouped: TensorId,
    pub total: TensorId,
    pub alpha: f64,
    pub beta: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> (f64, f64, f64, f64) {
        (
            g.data(self.ce)[0],
            g.data(self.kd_overall)[0],
            g.data(self.kd_grouped)[0],
            g.data(self.total)[0],
        )
    }
}

/// `CE(student_full, gt) + alpha*KL(student_full || teacher_full)
///  + beta*KL(student_path || teacher_group)`.
///
/// Teacher logits enter as plain tensors (already detached). A zero weight
/// drops its term entirely, so `alpha = beta = 0` makes `total` literally the
/// CE node.
#[allow(clippy::too_many_arguments)]
pub fn grouped_kd_loss(
    g: &mut Graph,
    student_full: TensorId,
    student_path: TensorId,
    teacher_full: Option<&Tensor>,
    teacher_group: Option<&Tensor>,
    labels: &[i64],
    ignore_index: i64,
    alpha: f64,
    beta: f64,
) -> Result<LossTerms> {
    let ce = g.cross_entropy(student_full, labels, ignore_index)?;
    let mut total = ce;
    let kd_overall = if alpha != 0.0 {
        let teacher = teacher_full.ok_or(Error::InvalidArg {
            op: "grouped_kd_loss",
            msg: "overall KD (alpha > 0) requires teacher logits".into(),
        })?;
        let t = g.constant(teacher.clone());
        let kl = g.kl_div(student_full, t)?;
        let scaled = g.scale(kl, alpha)?;
        total = g.add(total, scaled)?;
        kl
    } else {
        g.constant(Tensor::scalar(0.0))
    };
    let kd_grouped = if beta != 0.0 {
        let teacher = teacher_group.ok_or(Error::InvalidArg {
            op: "grouped_kd_loss",
            msg: "grouped KD (beta > 0) requires teacher group logits".into(),
        })?;
        let t = g.constant(teacher.clone());
        let kl = g.kl_div(student_path, t)?;
        let scaled = g.scale(kl, beta)?;
        total = g.add(total, scaled)?;
        kl
    } else {
        g.constant(Tensor::scalar(0.0))
    };
    Ok(LossTerms {
        ce,
        kd_overall,
        kd_grouped,
        total,
        alpha,
        beta,
    })
}

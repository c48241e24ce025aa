//! Training loop, streaming evaluation, and the ablation sweeps.
//!
//! A training sample is a window of `m` consecutive frames; the loss is taken
//! on the last frame only, so earlier frames run encode-only. The assignment
//! phase rotates every iteration so each path (and its teacher group) receives
//! supervision as the stream rotates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::apm::{self, Aggregation};
use crate::data::{self, SyntheticVideoConfig, VideoClip};
use crate::distill::{self, GroupSplit, TeacherConfig, TeacherModel};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::init::seed_stream;
use crate::metrics::{argmax_labels, EvalAccum, EvalReport};
use crate::optim::{sgd_step, OptimizerConfig};
use crate::scheduler::{
    step_encode_only, step_stream_with_options, Model, ModelConfig, ScheduleState,
};
use crate::tensor::Tensor;

pub const IGNORE_INDEX: i64 = 255;

/// Training-run parameters shared by every experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub optimizer: OptimizerConfig,
    /// Whole-model distillation weight.
    pub alpha: f64,
    /// Grouped distillation weight.
    pub beta: f64,
    pub flip: bool,
    pub crop: bool,
    /// Extra pixels generated per side pair for random cropping.
    pub crop_margin: usize,
    /// Seed for model init, augmentation, and the clip stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            optimizer: OptimizerConfig::default(),
            alpha: 0.0,
            beta: 0.0,
            flip: true,
            crop: true,
            crop_margin: 8,
            seed: 0,
        }
    }
}

/// One row of the loss curve CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub iter: usize,
    pub ce: f64,
    pub kd_overall: f64,
    pub kd_grouped: f64,
    pub total: f64,
    pub lr: f64,
}

pub fn loss_curve_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("iter,ce,kd_overall,kd_grouped,total,lr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.iter, r.ce, r.kd_overall, r.kd_grouped, r.total, r.lr
        ));
    }
    out
}

/// A frozen teacher: its own graph, model, and reduction-layer split.
pub struct Teacher {
    pub graph: Graph,
    pub model: TeacherModel,
    pub split: GroupSplit,
}

/// Train a deep single-frame teacher with plain cross entropy, then freeze it
/// and split its reduction layer into `m` groups.
pub fn train_teacher(
    cfg: &TeacherConfig,
    m: usize,
    data_cfg: &SyntheticVideoConfig,
    optimizer: &OptimizerConfig,
    iters: usize,
    seed: u64,
) -> Result<Teacher> {
    let mut g = Graph::new();
    let model = TeacherModel::build(&mut g, cfg, seed)?;
    let mut aug_rng = seed_stream(seed, "teacher.aug");
    let crop_margin = 8;
    for i in 0..iters {
        let clip_cfg = SyntheticVideoConfig {
            clip_length: 1,
            height: data_cfg.height + crop_margin,
            width: data_cfg.width + crop_margin,
            seed: derive_seed(seed, i as u64, "teacher.clip"),
            ..data_cfg.clone()
        };
        let clip = data::generate_clip(&clip_cfg)?;
        let (frame, labels) =
            augment_window(&clip, 0, 1, true, true, crop_margin, &mut aug_rng, data_cfg)?;
        let input = g.constant(frame[0].clone());
        let logits = model.forward_logits(&mut g, input)?;
        let logits_full = g.upsample_nearest2d(logits, cfg.downsample_factor)?;
        let loss = g.cross_entropy(logits_full, &labels, IGNORE_INDEX)?;
        g.backward(loss).map_err(|e| train_abort(e, i, clip_cfg.seed))?;
        sgd_step(&mut g, optimizer, i);
        g.zero_grad();
        g.reset_intermediates();
    }
    let split = distill::split_reduction_layer(&g, &model, m)?;
    Ok(Teacher {
        graph: g,
        model,
        split,
    })
}

/// A trained student ready for evaluation: graph, model, loss history.
pub struct TrainedStudent {
    pub graph: Graph,
    pub model: Model,
    pub loss_curve: Vec<LossRow>,
}

fn train_abort(e: Error, iter: usize, clip_seed: u64) -> Error {
    Error::InvalidArg {
        op: "train",
        msg: format!("aborted at iter {iter} (clip seed {clip_seed}): {e}"),
    }
}

fn derive_seed(base: u64, i: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ base;
    for b in stream.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ (i + 1).wrapping_mul(0x9E3779B97F4A7C15)
}

/// Generate the training window for iteration `i` and apply augmentation:
/// shared horizontal flip and shared crop offsets across the window's frames.
#[allow(clippy::too_many_arguments)]
fn augment_window(
    clip: &VideoClip,
    start: usize,
    len: usize,
    flip: bool,
    crop: bool,
    crop_margin: usize,
    rng: &mut ChaCha8Rng,
    target: &SyntheticVideoConfig,
) -> Result<(Vec<Tensor>, Vec<i64>)> {
    let do_flip = flip && rng.gen_bool(0.5);
    let (oy, ox) = if crop && crop_margin > 0 {
        (
            rng.gen_range(0..=crop_margin),
            rng.gen_range(0..=crop_margin),
        )
    } else {
        (0, 0)
    };
    let mut frames = Vec::with_capacity(len);
    let mut last_labels = Vec::new();
    for t in start..start + len {
        let (mut frame, mut labels) = (clip.frames[t].clone(), clip.labels[t].clone());
        if do_flip {
            let (f, l) = data::hflip(&frame, &labels);
            frame = f;
            labels = l;
        }
        if crop && crop_margin > 0 {
            let (f, l) = data::crop(&frame, &labels, oy, ox, target.height, target.width)?;
            frame = f;
            labels = l;
        }
        if t + 1 == start + len {
            last_labels = labels;
        }
        frames.push(frame);
    }
    Ok((frames, last_labels))
}

/// Train a student model on freshly sampled windows. Distillation terms use
/// the teacher frozen in its own graph; the supervised frame's path index
/// selects the teacher group.
pub fn train_student(
    model_cfg: &ModelConfig,
    data_cfg: &SyntheticVideoConfig,
    tcfg: &TrainConfig,
    mut teacher: Option<&mut Teacher>,
) -> Result<TrainedStudent> {
    if (tcfg.alpha != 0.0 || tcfg.beta != 0.0) && teacher.is_none() {
        return Err(Error::InvalidArg {
            op: "train_student",
            msg: "distillation weights are nonzero but no teacher was given".into(),
        });
    }
    tcfg.optimizer.validate()?;
    let mut g = Graph::new();
    let model = Model::build(&mut g, model_cfg, tcfg.seed)?;
    let m = model_cfg.m;
    let mut aug_rng = seed_stream(tcfg.seed, "student.aug");
    let mut loss_curve = Vec::with_capacity(tcfg.iters);

    for i in 0..tcfg.iters {
        let gen_cfg = SyntheticVideoConfig {
            clip_length: m,
            height: data_cfg.height + if tcfg.crop { tcfg.crop_margin } else { 0 },
            width: data_cfg.width + if tcfg.crop { tcfg.crop_margin } else { 0 },
            seed: derive_seed(tcfg.seed, i as u64, "student.clip"),
            ..data_cfg.clone()
        };
        let clip = data::generate_clip(&gen_cfg)?;
        let (frames, labels) = augment_window(
            &clip,
            0,
            m,
            tcfg.flip,
            tcfg.crop,
            if tcfg.crop { tcfg.crop_margin } else { 0 },
            &mut aug_rng,
            data_cfg,
        )?;

        let phase = i % m;
        let order: Vec<usize> = (0..m).map(|j| (j + phase) % m).collect();
        let mut state = ScheduleState::with_order(order)?;
        for frame in &frames[..m - 1] {
            step_encode_only(&mut g, &model, &mut state, frame)
                .map_err(|e| train_abort(e, i, gen_cfg.seed))?;
        }
        let out = step_stream_with_options(&mut g, &model, &mut state, &frames[m - 1], None)
            .map_err(|e| train_abort(e, i, gen_cfg.seed))?;

        let (teacher_full, teacher_group) = match (&mut teacher, tcfg.alpha != 0.0 || tcfg.beta != 0.0)
        {
            (Some(t), true) => {
                let (groups, full) = distill::teacher_group_logits(
                    &mut t.graph,
                    &t.model,
                    &t.split,
                    &frames[m - 1],
                )?;
                t.graph.reset_intermediates();
                let f = t.model.cfg.downsample_factor;
                (
                    Some(nearest_upsample(&full, f)),
                    Some(nearest_upsample(&groups[out.subnet_index], f)),
                )
            }
            _ => (None, None),
        };

        let student_path = if tcfg.beta != 0.0 {
            let path_logits =
                model.subnets[out.subnet_index].predict(&mut g, out.path_value)?;
            g.upsample_nearest2d(path_logits, model_cfg.subnet.downsample_factor)?
        } else {
            out.logits_full
        };
        let terms = distill::grouped_kd_loss(
            &mut g,
            out.logits_full,
            student_path,
            teacher_full.as_ref(),
            teacher_group.as_ref(),
            &labels,
            IGNORE_INDEX,
            tcfg.alpha,
            tcfg.beta,
        )
        .map_err(|e| train_abort(e, i, gen_cfg.seed))?;
        g.backward(terms.total)
            .map_err(|e| train_abort(e, i, gen_cfg.seed))?;
        let (ce, kd1, kd2, total) = terms.values(&g);
        sgd_step(&mut g, &tcfg.optimizer, i);
        g.zero_grad();
        g.reset_intermediates();
        loss_curve.push(LossRow {
            iter: i,
            ce,
            kd_overall: kd1,
            kd_grouped: kd2,
            total,
            lr: tcfg.optimizer.lr(i),
        });
    }
    Ok(TrainedStudent {
        graph: g,
        model,
        loss_curve,
    })
}

/// Nearest-neighbor upsampling of a plain `[C,h,w]` tensor.
fn nearest_upsample(t: &Tensor, factor: usize) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let (oh, ow) = (h * factor, w * factor);
    let src = t.data();
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            let srow = ci * h * w + (y / factor) * w;
            let drow = ci * oh * ow + y * ow;
            for x in 0..ow {
                out[drow + x] = src[srow + x / factor];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("shape is consistent")
}

/// Evaluation-time options.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Custom assignment order (defaults to identity).
    pub order: Option<Vec<usize>>,
    /// Restrict aggregation to the newest k paths including the current one.
    pub paths_keep: Option<usize>,
    /// Temporal subsampling stride over clip frames.
    pub frame_gap: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            order: None,
            paths_keep: None,
            frame_gap: 1,
        }
    }
}

/// Stream every clip and score each frame that completes a full window
/// (stream position >= m-1) against its ground truth at input resolution.
pub fn evaluate_clips(
    g: &mut Graph,
    model: &Model,
    clips: &[VideoClip],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if opts.frame_gap == 0 {
        return Err(Error::InvalidArg {
            op: "evaluate_clips",
            msg: "frame_gap must be >= 1".into(),
        });
    }
    let m = model.cfg.m;
    let mut accum = EvalAccum::new(model.cfg.subnet.num_classes);
    let mut scored = 0usize;
    for clip in clips {
        let mut state = match &opts.order {
            Some(o) => ScheduleState::with_order(o.clone())?,
            None => ScheduleState::new(m),
        };
        let indices: Vec<usize> = (0..clip.frames.len()).step_by(opts.frame_gap).collect();
        for (j, &t) in indices.iter().enumerate() {
            let out = step_stream_with_options(
                g,
                model,
                &mut state,
                &clip.frames[t],
                opts.paths_keep,
            )?;
            if j + 1 >= m {
                let pred = argmax_labels(g.tensor(out.logits_full));
                accum.update(&pred, &clip.labels[t], IGNORE_INDEX)?;
                scored += 1;
            }
        }
        g.reset_intermediates();
    }
    if scored == 0 {
        return Err(Error::Empty {
            op: "evaluate_clips",
        });
    }
    Ok(accum.report())
}

/// Deterministic evaluation set, disjoint from the training stream.
pub fn make_eval_clips(
    data_cfg: &SyntheticVideoConfig,
    count: usize,
    clip_length: usize,
    eval_seed: u64,
) -> Result<Vec<VideoClip>> {
    (0..count)
        .map(|i| {
            data::generate_clip(&SyntheticVideoConfig {
                clip_length,
                seed: derive_seed(eval_seed, i as u64, "eval.clip"),
                ..data_cfg.clone()
            })
        })
        .collect()
}

/// Assignment orders to sweep: the m circular phases, or every permutation
/// (exhaustive mode, m <= 4).
pub fn orders(m: usize, exhaustive: bool) -> Result<Vec<Vec<usize>>> {
    if !exhaustive {
        return Ok((0..m)
            .map(|phase| (0..m).map(|j| (j + phase) % m).collect())
            .collect());
    }
    if m > 4 {
        return Err(Error::InvalidArg {
            op: "orders",
            msg: format!("exhaustive order sweep is limited to m <= 4, got {m}"),
        });
    }
    let mut all = Vec::new();
    let mut current: Vec<usize> = (0..m).collect();
    permute(&mut current, 0, &mut all);
    all.sort();
    Ok(all)
}

fn permute(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == v.len() {
        out.push(v.clone());
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, out);
        v.swap(k, i);
    }
}

/// Per-order scores plus their spread.
#[derive(Debug, Clone)]
pub struct OrderSweep {
    pub rows: Vec<(Vec<usize>, EvalReport)>,
    pub mean_miou: f64,
    pub stddev_miou: f64,
}

pub fn evaluate_orders(
    g: &mut Graph,
    model: &Model,
    clips: &[VideoClip],
    exhaustive: bool,
    base: &EvalOptions,
) -> Result<OrderSweep> {
    let mut rows = Vec::new();
    for order in orders(model.cfg.m, exhaustive)? {
        let opts = EvalOptions {
            order: Some(order.clone()),
            ..base.clone()
        };
        let report = evaluate_clips(g, model, clips, &opts)?;
        rows.push((order, report));
    }
    let n = rows.len() as f64;
    let mean = rows.iter().map(|(_, r)| r.miou).sum::<f64>() / n;
    let var = rows
        .iter()
        .map(|(_, r)| (r.miou - mean) * (r.miou - mean))
        .sum::<f64>()
        / n;
    Ok(OrderSweep {
        rows,
        mean_miou: mean,
        stddev_miou: var.sqrt(),
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---- experiment bundle and ablations ----

/// Everything one training-plus-evaluation run needs.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: ModelConfig,
    pub data: SyntheticVideoConfig,
    pub train: TrainConfig,
    pub eval_clips: usize,
    pub eval_clip_length: usize,
    pub eval_seed: u64,
}

/// Train with `seed` and score on the experiment's evaluation set, averaging
/// over all circular phase orders (the reported mIoU is the phase mean).
pub fn run_experiment(
    exp: &Experiment,
    seed: u64,
    teacher: Option<&mut Teacher>,
) -> Result<(TrainedStudent, EvalReport)> {
    let tcfg = TrainConfig {
        seed,
        ..exp.train.clone()
    };
    let mut student = train_student(&exp.model, &exp.data, &tcfg, teacher)?;
    let clips = make_eval_clips(&exp.data, exp.eval_clips, exp.eval_clip_length, exp.eval_seed)?;
    let sweep = evaluate_orders(
        &mut student.graph,
        &student.model,
        &clips,
        false,
        &EvalOptions::default(),
    )?;
    // Phase-mean mIoU with the identity order's class detail.
    let mut report = sweep.rows[0].1.clone();
    report.miou = sweep.mean_miou;
    Ok((student, report))
}

fn attention_macs(model: &ModelConfig, data: &SyntheticVideoConfig) -> Result<u64> {
    let (h, w) = (
        data.height / model.subnet.downsample_factor,
        data.width / model.subnet.downsample_factor,
    );
    Ok(apm::count_macs(
        model.aggregation,
        model.m,
        model.stride_n,
        h,
        w,
        model.subnet.d_k(),
        model.subnet.channels,
    )?
    .total())
}

/// Aggregation-method ablation: retrain per method and seed.
pub fn ablate_aggregation(exp: &Experiment, seeds: &[u64]) -> Result<String> {
    let mut csv = String::from("method,seed,miou,attention_macs\n");
    for method in [Aggregation::Add, Aggregation::Sta, Aggregation::Apm] {
        let model = ModelConfig {
            aggregation: method,
            ..exp.model.clone()
        };
        let macs = attention_macs(&model, &exp.data)?;
        for &seed in seeds {
            let sub = Experiment {
                model: model.clone(),
                ..exp.clone()
            };
            let (_, report) = run_experiment(&sub, seed, None)?;
            csv.push_str(&format!(
                "{},{},{:.6},{}\n",
                method.name(),
                seed,
                report.miou,
                macs
            ));
        }
    }
    Ok(csv)
}

/// Downsampling-stride sweep: retrain per stride and seed.
pub fn sweep_stride(exp: &Experiment, strides: &[usize], seeds: &[u64]) -> Result<String> {
    let mut csv = String::from("n,seed,miou,attention_macs\n");
    for &n in strides {
        let model = ModelConfig {
            stride_n: n,
            aggregation: Aggregation::Apm,
            ..exp.model.clone()
        };
        let macs = attention_macs(&model, &exp.data)?;
        for &seed in seeds {
            let sub = Experiment {
                model: model.clone(),
                ..exp.clone()
            };
            let (_, report) = run_experiment(&sub, seed, None)?;
            csv.push_str(&format!("{},{},{:.6},{}\n", n, seed, report.miou, macs));
        }
    }
    Ok(csv)
}

/// Robustness to temporal stride: train once per method and seed, evaluate at
/// every frame gap.
pub fn sweep_motion_gap(exp: &Experiment, gaps: &[usize], seeds: &[u64]) -> Result<String> {
    let mut csv = String::from("gap,method,seed,miou\n");
    let max_gap = gaps.iter().copied().max().unwrap_or(1);
    let needed = (exp.model.m - 1) * max_gap + 1;
    let clip_len = exp.eval_clip_length.max(needed + 1);
    for method in [Aggregation::Add, Aggregation::Apm] {
        for &seed in seeds {
            let sub = Experiment {
                model: ModelConfig {
                    aggregation: method,
                    ..exp.model.clone()
                },
                ..exp.clone()
            };
            let (mut student, _) = run_experiment(&sub, seed, None)?;
            let clips = make_eval_clips(&exp.data, exp.eval_clips, clip_len, exp.eval_seed)?;
            for &gap in gaps {
                let report = evaluate_clips(
                    &mut student.graph,
                    &student.model,
                    &clips,
                    &EvalOptions {
                        frame_gap: gap,
                        ..Default::default()
                    },
                )?;
                csv.push_str(&format!(
                    "{},{},{},{:.6}\n",
                    gap,
                    method.name(),
                    seed,
                    report.miou
                ));
            }
        }
    }
    Ok(csv)
}

/// Progressive path removal on a trained model: keep the newest k paths.
pub fn ablate_paths(exp: &Experiment, seeds: &[u64]) -> Result<String> {
    let mut csv = String::from("paths_kept,seed,miou\n");
    for &seed in seeds {
        let (mut student, _) = run_experiment(exp, seed, None)?;
        let clips = make_eval_clips(&exp.data, exp.eval_clips, exp.eval_clip_length, exp.eval_seed)?;
        for keep in (1..=exp.model.m).rev() {
            let report = evaluate_clips(
                &mut student.graph,
                &student.model,
                &clips,
                &EvalOptions {
                    paths_keep: Some(keep),
                    ..Default::default()
                },
            )?;
            csv.push_str(&format!("{},{},{:.6}\n", keep, seed, report.miou));
        }
    }
    Ok(csv)
}

/// Loss-component ablation: pure supervision, plus overall distillation, plus
/// grouped distillation. One teacher is trained and shared across rows.
pub fn ablate_kd(
    exp: &Experiment,
    seeds: &[u64],
    teacher_cfg: &TeacherConfig,
    teacher_iters: usize,
    teacher_seed: u64,
) -> Result<String> {
    let mut teacher = train_teacher(
        teacher_cfg,
        exp.model.m,
        &exp.data,
        &exp.train.optimizer,
        teacher_iters,
        teacher_seed,
    )?;
    let mut csv = String::from("config,seed,miou\n");
    for (label, alpha, beta) in [
        ("ce", 0.0, 0.0),
        ("ce+overall", 0.5, 0.0),
        ("ce+overall+grouped", 0.5, 0.5),
    ] {
        for &seed in seeds {
            let sub = Experiment {
                train: TrainConfig {
                    alpha,
                    beta,
                    ..exp.train.clone()
                },
                ..exp.clone()
            };
            let teacher_opt = if alpha != 0.0 || beta != 0.0 {
                Some(&mut teacher)
            } else {
                None
            };
            let (_, report) = run_experiment(&sub, seed, teacher_opt)?;
            csv.push_str(&format!("{},{},{:.6}\n", label, seed, report.miou));
        }
    }
    Ok(csv)
}

/// Shared versus independent sub-networks versus the single-path baseline.
pub fn ablate_shared(exp: &Experiment, seeds: &[u64]) -> Result<String> {
    let mut csv = String::from("variant,seed,miou,param_count\n");
    let variants: [(&str, ModelConfig); 3] = [
        (
            "single_path",
            ModelConfig {
                m: 1,
                ..exp.model.clone()
            },
        ),
        (
            "shared",
            ModelConfig {
                shared: true,
                ..exp.model.clone()
            },
        ),
        (
            "independent",
            ModelConfig {
                shared: false,
                ..exp.model.clone()
            },
        ),
    ];
    for (label, model) in variants {
        for &seed in seeds {
            let sub = Experiment {
                model: model.clone(),
                ..exp.clone()
            };
            let (student, report) = run_experiment(&sub, seed, None)?;
            csv.push_str(&format!(
                "{},{},{:.6},{}\n",
                label,
                seed,
                report.miou,
                student.graph.param_count()
            ));
        }
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apm::PoolKind;
    use crate::subnet::SubNetConfig;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            m: 2,
            subnet: SubNetConfig {
                in_channels: 3,
                channels: 8,
                depth: 1,
                downsample_factor: 2,
                num_classes: 4,
            },
            stride_n: 2,
            aggregation: Aggregation::Apm,
            shared: false,
            pool: PoolKind::Max,
        }
    }

    fn tiny_data() -> SyntheticVideoConfig {
        SyntheticVideoConfig {
            height: 32,
            width: 32,
            num_classes: 4,
            shapes_per_clip: 3,
            motion_px_per_frame: 2.0,
            clip_length: 4,
            ..Default::default()
        }
    }

    fn tiny_train(iters: usize) -> TrainConfig {
        TrainConfig {
            iters,
            optimizer: OptimizerConfig {
                max_iter: iters.max(1),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_iters_returns_initialization() {
        let student = train_student(&tiny_model(), &tiny_data(), &tiny_train(0), None).unwrap();
        let mut g = Graph::new();
        let reference = Model::build(&mut g, &tiny_model(), 0).unwrap();
        let _ = reference;
        for (&a, &b) in student
            .graph
            .param_ids()
            .iter()
            .zip(g.param_ids().iter())
        {
            assert_eq!(student.graph.param_name(a), g.param_name(b));
            assert_eq!(student.graph.data(a), g.data(b));
        }
        assert!(student.loss_curve.is_empty());
    }

    #[test]
    fn short_training_reduces_ce() {
        let mut tcfg = tiny_train(60);
        tcfg.optimizer.lr0 = 0.05;
        let student = train_student(&tiny_model(), &tiny_data(), &tcfg, None).unwrap();
        let first: f64 = student.loss_curve[..10].iter().map(|r| r.ce).sum::<f64>() / 10.0;
        let last: f64 = student.loss_curve[50..].iter().map(|r| r.ce).sum::<f64>() / 10.0;
        assert!(
            last < first * 0.9,
            "CE did not drop: first {first:.4} last {last:.4}"
        );
    }

    #[test]
    fn nonzero_kd_without_teacher_is_rejected() {
        let mut tcfg = tiny_train(1);
        tcfg.beta = 0.5;
        assert!(train_student(&tiny_model(), &tiny_data(), &tcfg, None).is_err());
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let a = train_student(&tiny_model(), &tiny_data(), &tiny_train(8), None).unwrap();
        let b = train_student(&tiny_model(), &tiny_data(), &tiny_train(8), None).unwrap();
        for (&pa, &pb) in a.graph.param_ids().iter().zip(b.graph.param_ids()) {
            assert_eq!(a.graph.data(pa), b.graph.data(pb));
        }
        assert_eq!(a.loss_curve, b.loss_curve);
        let mut t2 = tiny_train(8);
        t2.seed = 1;
        let c = train_student(&tiny_model(), &tiny_data(), &t2, None).unwrap();
        assert_ne!(
            a.graph.data(a.graph.param_ids()[0]),
            c.graph.data(c.graph.param_ids()[0])
        );
    }

    #[test]
    fn evaluation_scores_only_full_windows() {
        let student = train_student(&tiny_model(), &tiny_data(), &tiny_train(0), None).unwrap();
        let mut g = student.graph;
        let clips = make_eval_clips(&tiny_data(), 2, 4, 99).unwrap();
        let report =
            evaluate_clips(&mut g, &student.model, &clips, &EvalOptions::default()).unwrap();
        assert!(report.miou >= 0.0 && report.miou <= 1.0);
        // A clip shorter than one full window scores nothing.
        let short = make_eval_clips(&tiny_data(), 1, 1, 99).unwrap();
        assert!(matches!(
            evaluate_clips(&mut g, &student.model, &short, &EvalOptions::default()),
            Err(Error::Empty { .. })
        ));
    }

    #[test]
    fn orders_rotations_and_permutations() {
        let rot = orders(4, false).unwrap();
        assert_eq!(rot.len(), 4);
        assert_eq!(rot[0], vec![0, 1, 2, 3]);
        assert_eq!(rot[1], vec![1, 2, 3, 0]);
        let all = orders(3, true).unwrap();
        assert_eq!(all.len(), 6);
        assert!(all.windows(2).all(|w| w[0] < w[1]), "sorted and unique");
        assert!(orders(5, true).is_err());
    }

    #[test]
    fn shared_model_order_sweep_has_zero_spread() {
        let mut cfg = tiny_model();
        cfg.shared = true;
        let tcfg = tiny_train(4);
        let student = train_student(&cfg, &tiny_data(), &tcfg, None).unwrap();
        let mut g = student.graph;
        let clips = make_eval_clips(&tiny_data(), 2, 4, 5).unwrap();
        let sweep =
            evaluate_orders(&mut g, &student.model, &clips, false, &EvalOptions::default())
                .unwrap();
        assert_eq!(sweep.rows.len(), 2);
        assert_eq!(sweep.stddev_miou, 0.0);
    }

    #[test]
    fn teacher_trains_and_splits() {
        let tc = TeacherConfig {
            in_channels: 3,
            trunk_channels: 8,
            depth: 2,
            downsample_factor: 2,
            reduced_channels: 8,
            num_classes: 4,
        };
        let teacher = train_teacher(
            &tc,
            2,
            &tiny_data(),
            &OptimizerConfig {
                max_iter: 10,
                ..Default::default()
            },
            10,
            3,
        )
        .unwrap();
        assert_eq!(teacher.split.m, 2);
        assert_eq!(teacher.split.group_in, 4);
    }

    #[test]
    fn median_of_odd_and_even_lists() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

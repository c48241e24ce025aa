//! One-seed sweep over the model variants the ablation suite compares.
//! Prints mIoU per variant; used to sanity-check the synthetic task.

use std::time::Instant;

use tdseg_core::apm::{Aggregation, PoolKind};
use tdseg_core::data::SyntheticVideoConfig;
use tdseg_core::distill::TeacherConfig;
use tdseg_core::harness::{
    evaluate_clips, make_eval_clips, run_experiment, train_teacher, EvalOptions, Experiment,
    TrainConfig,
};
use tdseg_core::optim::OptimizerConfig;
use tdseg_core::scheduler::ModelConfig;
use tdseg_core::subnet::SubNetConfig;

fn base_experiment(iters: usize) -> Experiment {
    Experiment {
        model: ModelConfig {
            m: 4,
            subnet: SubNetConfig {
                in_channels: 3,
                channels: 16,
                depth: 2,
                downsample_factor: 4,
                num_classes: 6,
            },
            stride_n: 4,
            aggregation: Aggregation::Apm,
            shared: false,
            pool: PoolKind::Max,
        },
        data: SyntheticVideoConfig::default(),
        train: TrainConfig {
            iters,
            optimizer: OptimizerConfig {
                max_iter: iters,
                ..Default::default()
            },
            ..Default::default()
        },
        eval_clips: 12,
        eval_clip_length: 12,
        eval_seed: 10_000,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let which = args.get(3).map(|s| s.as_str()).unwrap_or("all");
    let base = base_experiment(iters);

    let run = |label: &str, exp: &Experiment| {
        let t0 = Instant::now();
        let (_, report) = run_experiment(exp, seed, None).unwrap();
        println!(
            "{label:<18} miou {:.4}  mean_acc {:.4}  ({:.0}s)",
            report.miou,
            report.mean_acc,
            t0.elapsed().as_secs_f64()
        );
        report.miou
    };

    if which == "all" || which == "core" {
        let mut single = base.clone();
        single.model.m = 1;
        run("single_path", &single);

        let mut shared = base.clone();
        shared.model.shared = true;
        run("shared_m4", &shared);

        run("independent_m4", &base);

        let mut add = base.clone();
        add.model.aggregation = Aggregation::Add;
        run("add_m4", &add);

        let mut sta = base.clone();
        sta.model.aggregation = Aggregation::Sta;
        run("sta_m4", &sta);
    }

    if which == "all" || which == "stride" {
        for n in [1usize, 16] {
            let mut e = base.clone();
            e.model.stride_n = n;
            run(&format!("apm_n{n}"), &e);
        }
    }

    if which == "all" || which == "gap" {
        // Gap robustness for add vs apm on one trained model each.
        for method in [Aggregation::Add, Aggregation::Apm] {
            let mut e = base.clone();
            e.model.aggregation = method;
            let (mut student, _) = run_experiment(&e, seed, None).unwrap();
            let clips = make_eval_clips(&e.data, 6, 24, e.eval_seed).unwrap();
            for gap in [1usize, 6] {
                let r = evaluate_clips(
                    &mut student.graph,
                    &student.model,
                    &clips,
                    &EvalOptions {
                        frame_gap: gap,
                        ..Default::default()
                    },
                )
                .unwrap();
                println!("{}_gap{gap:<2}        miou {:.4}", method.name(), r.miou);
            }
        }
    }

    if which == "all" || which == "kd" {
        let tc = TeacherConfig {
            in_channels: 3,
            trunk_channels: 32,
            depth: 8,
            downsample_factor: 4,
            reduced_channels: 16,
            num_classes: 6,
        };
        let t0 = Instant::now();
        let mut teacher = train_teacher(
            &tc,
            4,
            &base.data,
            &OptimizerConfig {
                max_iter: iters + iters / 2,
                ..Default::default()
            },
            iters + iters / 2,
            777,
        )
        .unwrap();
        // Teacher quality check.
        {
            use tdseg_core::graph::Graph;
            use tdseg_core::metrics::{argmax_labels, EvalAccum};
            let clips = make_eval_clips(&base.data, 6, 4, base.eval_seed).unwrap();
            let mut acc = EvalAccum::new(6);
            let g: &mut Graph = &mut teacher.graph;
            for clip in &clips {
                for (f, lab) in clip.frames.iter().zip(&clip.labels) {
                    let input = g.constant(f.clone());
                    let logits = teacher.model.forward_logits(g, input).unwrap();
                    let up = g.upsample_nearest2d(logits, 4).unwrap();
                    let pred = argmax_labels(g.tensor(up));
                    acc.update(&pred, lab, 255).unwrap();
                    g.reset_intermediates();
                }
            }
            println!(
                "teacher            miou {:.4}  ({:.0}s train)",
                acc.report().miou,
                t0.elapsed().as_secs_f64()
            );
        }
        for (label, alpha, beta) in [("ce_only", 0.0, 0.0), ("ce+kd_full", 0.5, 0.5)] {
            let mut e = base.clone();
            e.train.alpha = alpha;
            e.train.beta = beta;
            let topt = if alpha != 0.0 || beta != 0.0 {
                Some(&mut teacher)
            } else {
                None
            };
            let t0 = Instant::now();
            let (_, report) = run_experiment(&e, seed, topt).unwrap();
            println!(
                "{label:<18} miou {:.4}  ({:.0}s)",
                report.miou,
                t0.elapsed().as_secs_f64()
            );
        }
    }
}

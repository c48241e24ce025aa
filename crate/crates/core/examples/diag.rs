//! Diagnostic: how much does history contribute per variant?

use tdseg_core::apm::{Aggregation, PoolKind};
use tdseg_core::data::SyntheticVideoConfig;
use tdseg_core::harness::{evaluate_clips, make_eval_clips, run_experiment, EvalOptions, Experiment, TrainConfig};
use tdseg_core::optim::OptimizerConfig;
use tdseg_core::scheduler::ModelConfig;
use tdseg_core::subnet::SubNetConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let base = Experiment {
        model: ModelConfig {
            m: 4,
            subnet: SubNetConfig { in_channels: 3, channels: 16, depth: 2, downsample_factor: 4, num_classes: 6 },
            stride_n: 4,
            aggregation: Aggregation::Apm,
            shared: false,
            pool: PoolKind::Max,
        },
        data: SyntheticVideoConfig::default(),
        train: TrainConfig { iters, optimizer: OptimizerConfig { max_iter: iters, ..Default::default() }, ..Default::default() },
        eval_clips: 12,
        eval_clip_length: 12,
        eval_seed: 10_000,
    };
    for shared in [false, true] {
        let mut e = base.clone();
        e.model.shared = shared;
        let (mut student, _) = run_experiment(&e, 0, None).unwrap();
        let clips = make_eval_clips(&e.data, 6, 12, e.eval_seed).unwrap();
        for keep in [4usize, 3, 2, 1] {
            let r = evaluate_clips(&mut student.graph, &student.model, &clips,
                &EvalOptions { paths_keep: Some(keep), ..Default::default() }).unwrap();
            println!("shared={shared} paths_keep={keep} miou {:.4}", r.miou);
        }
        // phi magnitude: how much does the final-merge phi weigh?
        let phi = &student.model.phis[e.model.m - 2];
        let wnorm: f64 = student.graph.data(phi.weight).iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("shared={shared} final phi |W|_F = {:.4}", wnorm);
    }
}

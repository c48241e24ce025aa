//! Probe: stride and motion sensitivity of independent vs shared paths.

use tdseg_core::apm::{Aggregation, PoolKind};
use tdseg_core::data::SyntheticVideoConfig;
use tdseg_core::harness::{run_experiment, Experiment, TrainConfig};
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
    // stride probe at default motion 8
    for n in [2usize, 1] {
        let mut e = base.clone();
        e.model.stride_n = n;
        let (_, r) = run_experiment(&e, 0, None).unwrap();
        println!("indep n={n} motion=8: miou {:.4}", r.miou);
    }
    // motion probe at n=4
    for motion in [4.0f64, 2.0] {
        for shared in [false, true] {
            let mut e = base.clone();
            e.data.motion_px_per_frame = motion;
            e.model.shared = shared;
            let (_, r) = run_experiment(&e, 0, None).unwrap();
            println!("shared={shared} n=4 motion={motion}: miou {:.4}", r.miou);
        }
        let mut e = base.clone();
        e.data.motion_px_per_frame = motion;
        e.model.m = 1;
        let (_, r) = run_experiment(&e, 0, None).unwrap();
        println!("single   n=4 motion={motion}: miou {:.4}", r.miou);
    }
}

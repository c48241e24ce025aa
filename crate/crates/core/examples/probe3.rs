//! Seed robustness of the capacity-bound task for the shared/indep ordering.

use tdseg_core::apm::{Aggregation, PoolKind};
use tdseg_core::data::SyntheticVideoConfig;
use tdseg_core::harness::{median, run_experiment, Experiment, TrainConfig};
use tdseg_core::optim::OptimizerConfig;
use tdseg_core::scheduler::ModelConfig;
use tdseg_core::subnet::SubNetConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let jitter: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60.0);
    let base = Experiment {
        model: ModelConfig {
            m: 4,
            subnet: SubNetConfig { in_channels: 3, channels: 16, depth: 2, downsample_factor: 4, num_classes: 6 },
            stride_n: 4,
            aggregation: Aggregation::Apm,
            shared: false,
            pool: PoolKind::Max,
        },
        data: SyntheticVideoConfig { hue_jitter: jitter, ..Default::default() },
        train: TrainConfig { iters, optimizer: OptimizerConfig { max_iter: iters, ..Default::default() }, ..Default::default() },
        eval_clips: 12,
        eval_clip_length: 12,
        eval_seed: 10_000,
    };
    for variant in ["single", "shared", "indep"] {
        let mut mious = Vec::new();
        for seed in [0u64, 1, 2] {
            let mut e = base.clone();
            match variant {
                "single" => e.model.m = 1,
                "shared" => e.model.shared = true,
                _ => {}
            }
            let (_, r) = run_experiment(&e, seed, None).unwrap();
            mious.push(r.miou);
        }
        println!(
            "{variant:<7} seeds {:?} median {:.4}",
            mious.iter().map(|m| (m * 1e4).round() / 1e4).collect::<Vec<_>>(),
            median(&mious)
        );
    }
}

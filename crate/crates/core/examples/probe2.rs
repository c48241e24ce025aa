//! Probe: capacity pressure via hue overlap and channel width.

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
    for (label, jitter, c) in [("jitter60_c16", 60.0, 16usize), ("jitter36_c8", 36.0, 8)] {
        for variant in ["single", "shared", "indep"] {
            let mut e = base.clone();
            e.data.hue_jitter = jitter;
            e.model.subnet.channels = c;
            match variant {
                "single" => e.model.m = 1,
                "shared" => e.model.shared = true,
                _ => {}
            }
            let (_, r) = run_experiment(&e, 0, None).unwrap();
            println!("{label} {variant:<7} miou {:.4}", r.miou);
        }
    }
}

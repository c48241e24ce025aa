use std::time::Instant;
use tdseg_core::apm::{Aggregation, PoolKind};
use tdseg_core::data::SyntheticVideoConfig;
use tdseg_core::harness::{train_student, TrainConfig};
use tdseg_core::optim::OptimizerConfig;
use tdseg_core::scheduler::ModelConfig;
use tdseg_core::subnet::SubNetConfig;

fn main() {
    let model = ModelConfig {
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
    };
    let data = SyntheticVideoConfig::default();
    let iters = 30;
    let tcfg = TrainConfig {
        iters,
        optimizer: OptimizerConfig { max_iter: iters, ..Default::default() },
        ..Default::default()
    };
    let t0 = Instant::now();
    let s = train_student(&model, &data, &tcfg, None).unwrap();
    let dt = t0.elapsed();
    println!(
        "{} iters in {:.2}s -> {:.1} ms/iter; 2000 iters ~ {:.0}s",
        iters,
        dt.as_secs_f64(),
        dt.as_secs_f64() * 1000.0 / iters as f64,
        dt.as_secs_f64() / iters as f64 * 2000.0
    );
    println!("first ce {:.4} last ce {:.4}", s.loss_curve[0].ce, s.loss_curve[iters-1].ce);
}

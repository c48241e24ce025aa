//! Seeded weight initialization.
//!
//! Conv weights draw from a zero-mean Gaussian with variance `2 / fan_in`;
//! biases start at zero. All randomness flows through a caller-owned ChaCha
//! stream so runs are reproducible bit-for-bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// Gaussian conv weight `[c_out, c_in, k, k]` with He scaling.
pub fn conv_weight(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, k: usize) -> Tensor {
    let fan_in = (c_in * k * k) as f64;
    let std = (2.0 / fan_in).sqrt();
    let normal = Normal::new(0.0, std).expect("std is finite and positive");
    let data: Vec<f64> = (0..c_out * c_in * k * k)
        .map(|_| normal.sample(rng))
        .collect();
    Tensor::new(vec![c_out, c_in, k, k], data).expect("shape matches data")
}

pub fn zeros_bias(c_out: usize) -> Tensor {
    Tensor::zeros(&[c_out])
}

/// Independent stream for a named component under a base seed, so adding a
/// component never shifts the draws of another.
pub fn seed_stream(base_seed: u64, component: &str) -> ChaCha8Rng {
    use rand::SeedableRng;
    // FNV-1a over the component name, mixed into the base seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in component.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&base_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&h.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    // Burn one draw so streams with zero hash still decorrelate from raw seed.
    let _: u64 = rng.gen();
    rng
}

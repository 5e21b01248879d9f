#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use restorer::data::{make_dataset, DegradationKind, PairedSample};
use restorer::model::{ModelConfig, StageConfig};
use restorer::Tensor;

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape.to_vec(), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Four-stage network on 16×16 inputs, small enough for finite differences.
pub fn micro_config() -> ModelConfig {
    let st = |width, p, d, heads| StageConfig {
        width,
        p,
        d,
        heads,
        layers: 1,
    };
    let mut c = ModelConfig::toy();
    c.image_size = 16;
    c.stem = 4;
    c.dim = 8;
    c.stages = vec![st(4, 2, 2, 2), st(8, 2, 4, 2), st(8, 1, 4, 2), st(8, 1, 4, 2)];
    c
}

pub fn micro_data(n: usize, kinds: &[DegradationKind], seed: u64) -> Vec<PairedSample> {
    make_dataset(n, 16, kinds, seed).unwrap()
}

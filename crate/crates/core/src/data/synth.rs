//! Procedural clean images and paired datasets.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::degrade::{degrade, DegradationKind, DegradationParams, DegradationSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A clean image, its degraded version and the prompt label.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub clean: Tensor,
    pub degraded: Tensor,
    pub label: String,
}

/// Generator seeded by `(seed, index)`, independent across indices.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A `[3, size, size]` image built from a linear colour gradient, a
/// sinusoidal texture and a few flat rectangles and discs.
pub fn synth_clean<R: Rng>(size: usize, rng: &mut R) -> Result<Tensor> {
    if size == 0 {
        return Err(Error::Usage("image size must be positive".into()));
    }
    let s = size as f64;
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (sn, cs) = theta.sin_cos();
    let freq = rng.random_range(2.0..6.0) * std::f64::consts::TAU / s;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = rng.random_range(0.03..0.1);
    let mut img = vec![0.0; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / s - 0.5, y as f64 / s - 0.5);
            let t = ((u * cs + v * sn) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            let tex = amp * (freq * (x as f64 * cs - y as f64 * sn) + phase).sin();
            for c in 0..3 {
                img[(c * size + y) * size + x] = c0[c] + (c1[c] - c0[c]) * t + tex;
            }
        }
    }
    let shapes = rng.random_range(3..=5);
    for _ in 0..shapes {
        let colour: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
        let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let (rx, ry) = (rng.random_range(0.08..0.25) * s, rng.random_range(0.08..0.25) * s);
        let disc = rng.random_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                let inside = if disc { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    for c in 0..3 {
                        img[(c * size + y) * size + x] = colour[c];
                    }
                }
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Tensor::new([3, size, size], img)
}

/// `n` pairs cycling through `kinds` with their default parameters.
pub fn make_dataset(n: usize, size: usize, kinds: &[DegradationKind], seed: u64) -> Result<Vec<PairedSample>> {
    let params: Vec<DegradationParams> = kinds.iter().map(|&k| DegradationParams::default_for(k)).collect();
    make_dataset_with(n, size, &params, seed)
}

/// `n` pairs cycling through explicit degradation parameters. Sample `i`
/// depends only on `(seed, i)`.
pub fn make_dataset_with(n: usize, size: usize, params: &[DegradationParams], seed: u64) -> Result<Vec<PairedSample>> {
    if n == 0 {
        return Err(Error::Usage("dataset size must be at least 1".into()));
    }
    if params.is_empty() {
        return Err(Error::Usage("at least one degradation kind is required".into()));
    }
    for p in params {
        p.validate()?;
    }
    (0..n)
        .map(|i| {
            let p = params[i % params.len()];
            let mut rng = sample_rng(seed, i as u64);
            let clean = synth_clean(size, &mut rng)?;
            let degraded = degrade(&clean, &DegradationSpec::new(p, rng.next_u64()))?;
            Ok(PairedSample {
                clean,
                degraded,
                label: p.kind().label().to_string(),
            })
        })
        .collect()
}

/// Distinct labels in first-appearance order.
pub fn labels(samples: &[PairedSample]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in samples {
        if !out.contains(&s.label) {
            out.push(s.label.clone());
        }
    }
    out
}

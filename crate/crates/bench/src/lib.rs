//! Inputs shared by the benchmarks.

use fcanet::features::CLIP_SAMPLES;
use fcanet::Tensor;

/// A one-second chirp with a little deterministic hash noise.
pub fn chirp() -> Vec<f32> {
    (0..CLIP_SAMPLES)
        .map(|i| {
            let t = i as f64 / CLIP_SAMPLES as f64;
            let hash = ((i.wrapping_mul(2_654_435_761)) % 1000) as f64 / 1000.0 - 0.5;
            (0.4 * (2.0 * std::f64::consts::PI * (300.0 + 900.0 * t) * t).sin() + 0.02 * hash) as f32
        })
        .collect()
}

/// Deterministic batch of inputs with the given dims.
pub fn input(dims: Vec<usize>) -> Tensor {
    Tensor::from_fn(dims, |i| ((i * 37) % 101) as f64 / 50.0 - 1.0)
}

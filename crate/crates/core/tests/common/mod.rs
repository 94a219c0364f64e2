#![allow(dead_code)]

use obsprune::tensorstore::GradientSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Gradient rows `g = (I + c·A) z` with Gaussian `A` and `z`, so the Fisher has
/// strong off-diagonal structure when `c` is large.
pub fn correlated_grads(rng: &mut ChaCha8Rng, n: usize, d: usize, c: f64) -> GradientSet {
    let mix: Vec<f64> = (0..d * d)
        .map(|k| {
            let eye = if k / d == k % d { 1.0 } else { 0.0 };
            eye + c * normal(rng) / (d as f64).sqrt()
        })
        .collect();
    let mut rows = Vec::with_capacity(n * d);
    for _ in 0..n {
        let z = normals(rng, d);
        for r in 0..d {
            rows.push((0..d).map(|k| mix[r * d + k] * z[k]).sum::<f64>());
        }
    }
    GradientSet::new("0", n, d, rows).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn uniform_usize(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Toy config on a 64-input dataset, small enough for many-seed tests.
pub fn small_toy(seed: u64, dims: Vec<usize>) -> obsprune::pipeline::ToyConfig {
    obsprune::pipeline::ToyConfig {
        inputs: 64,
        ..obsprune::pipeline::ToyConfig::new(seed, dims)
    }
}

//! Seeded synthetic inputs shared by the benchmarks.

use obsprune::layers::Layer;
use obsprune::tensorstore::GradientSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

/// One flat layer named `0` with `d` Gaussian weights and `n` Gaussian gradient rows.
pub fn problem(seed: u64, d: usize, n: usize) -> (Layer, GradientSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = normals(&mut rng, d);
    let rows = normals(&mut rng, n * d);
    (
        Layer::flat("0", w),
        GradientSet::new("0", n, d, rows).expect("valid gradient shape"),
    )
}

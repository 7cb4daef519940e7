//! Seeded fixtures shared by the benchmarks.

use deepcontrast_core::nn::Tensor;
use deepcontrast_core::rng::rng_for;
use deepcontrast_core::volume::Volume;
use rand::Rng;

/// NHWC batch of uniform values in `[0, 1)`.
pub fn random_batch(n: usize, size: usize, seed: u64) -> Tensor<f32> {
    let mut rng = rng_for(seed, &[]);
    let len = n * size * size * 3;
    Tensor::new(vec![n, size, size, 3], (0..len).map(|_| rng.random()).collect())
}

/// Noisy HU volume at the given spacing.
pub fn random_volume(dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Volume {
    let mut rng = rng_for(seed, &[]);
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1000.0f32..1500.0)).collect();
    Volume::new(dims, spacing, [0.0; 3], data).expect("valid geometry")
}

/// Scores with a moderate class separation and balanced labels.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = rng_for(seed, &[]);
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let scores = labels.iter().map(|&l| rng.random::<f64>() + if l { 0.3 } else { 0.0 }).collect();
    (scores, labels)
}

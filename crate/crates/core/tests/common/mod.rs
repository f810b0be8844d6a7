// Shared fixtures for the integration tests.
#![allow(dead_code)]

use ddrl_core::ingest::{self, DatasetPartition, LabeledImage};
use ddrl_core::pipeline::{LayerConfig, TrainConfig};
use ddrl_core::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three texture classes: horizontal stripes, vertical stripes, and blobs.
/// Random phase, frequency, tint and pixel noise.
pub fn toy_images(n: usize, side: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 3;
            let freq = rng.random_range(0.6..1.2);
            let phase = rng.random_range(0.0..6.28);
            let tint: [f64; 3] = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];
            let cy = rng.random_range(0.0..side as f64);
            let cx = rng.random_range(0.0..side as f64);
            let noise: Vec<f64> = (0..side * side * 3).map(|_| rng.random_range(-0.08..0.08)).collect();
            let pixels = Grid::from_fn(side, side, 3, |y, x, c| {
                let (yf, xf) = (y as f64, x as f64);
                let base = match label {
                    0 => (freq * yf + phase).sin(),
                    1 => (freq * xf + phase).sin(),
                    _ => (-((yf - cy).powi(2) + (xf - cx).powi(2)) / 8.0).exp() * 2.0 - 1.0,
                };
                (0.5 + 0.4 * base * tint[c] + noise[(y * side + x) * 3 + c]).clamp(0.0, 1.0)
            });
            LabeledImage::new(pixels, label)
        })
        .collect()
}

pub fn equal_fractions() -> [f64; 6] {
    [1.0 / 6.0; 6]
}

pub fn toy_partition(n: usize, side: usize, seed: u64) -> DatasetPartition {
    ingest::partition(toy_images(n, side, seed), &equal_fractions(), seed).unwrap()
}

/// A small two-layer configuration that trains in well under a second.
pub fn tiny_two_layer(seed: u64) -> TrainConfig {
    TrainConfig {
        layers: vec![
            LayerConfig {
                k: 16,
                rf_size: 3,
                group_t: Some(4),
                patches_per_image: 40,
                max_patches: 2000,
                ..Default::default()
            },
            LayerConfig {
                k: 8,
                rf_size: 3,
                patches_per_image: 40,
                max_patches: 2000,
                ..Default::default()
            },
        ],
        grouping_samples: 2000,
        seed,
        ..Default::default()
    }
}

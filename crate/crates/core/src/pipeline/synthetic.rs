//! Two-dimensional toy datasets.
//!
//! Both generators are pure functions of `(n, seed)`; the CLI and the tests
//! use seed `0` for training data and seed `1` for test data unless told
//! otherwise.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::LabeledDataset;
use crate::classifiers::Point;

/// Class centers for [`two_gaussian_clusters`].
pub const CLUSTER_CENTERS: [[f64; 2]; 2] = [[-1.0, 0.0], [1.0, 0.0]];
pub const CLUSTER_STD: f64 = 0.5;

/// Radial ranges of [`concentric_annuli`]: class 0 fills the inner disc,
/// class 1 the surrounding ring.
pub const INNER_RADII: (f64, f64) = (0.0, 1.0);
pub const OUTER_RADII: (f64, f64) = (1.6, 2.6);

/// `n` points alternating between two isotropic Gaussian clusters.
pub fn two_gaussian_clusters(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, CLUSTER_STD).expect("positive std");
    let rows = (0..n)
        .map(|i| {
            let label = i % 2;
            let [cx, cy] = CLUSTER_CENTERS[label];
            let p = vec![cx + noise.sample(&mut rng), cy + noise.sample(&mut rng)];
            (Point::new(p).expect("finite"), label)
        })
        .collect();
    LabeledDataset::new(rows).expect("constant dimension")
}

/// `n` points alternating between a disc and an enclosing ring, uniform in
/// angle and in squared radius (uniform by area).
pub fn concentric_annuli(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            let label = i % 2;
            let (lo, hi) = if label == 0 { INNER_RADII } else { OUTER_RADII };
            let r = rng.random_range(lo * lo..hi * hi).sqrt();
            let theta = rng.random_range(0.0..TAU);
            let p = vec![r * theta.cos(), r * theta.sin()];
            (Point::new(p).expect("finite"), label)
        })
        .collect();
    LabeledDataset::new(rows).expect("constant dimension")
}

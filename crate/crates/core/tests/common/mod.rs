#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadscan_core::{PointCloud, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Regular grid at z = 0 over [0, (n-1)h]², viewed from 10 m above.
pub fn flat_grid(n: usize, h: f64) -> PointCloud {
    let pts = (0..n)
        .flat_map(|i| (0..n).map(move |j| Vec3::new(i as f64 * h, j as f64 * h, 0.0)))
        .collect();
    let c = (n - 1) as f64 * h / 2.0;
    PointCloud::new(pts, Vec3::new(c, c, 10.0)).unwrap()
}

pub fn random_cloud(m: usize, seed: u64) -> PointCloud {
    let mut r = rng(seed);
    let pts = (0..m).map(|_| Vec3::new(r.random(), r.random(), r.random())).collect();
    PointCloud::new(pts, Vec3::new(0.5, 0.5, 5.0)).unwrap()
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("point cloud has no vertices")]
    Empty,
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("label count {labels} does not match vertex count {vertices}")]
    LabelCount { labels: usize, vertices: usize },
    #[error("downsample ratio {0} outside (0, 1]")]
    Ratio(f64),
    #[error("downsampling {m} vertices by {ratio} leaves none")]
    NothingLeft { m: usize, ratio: f64 },
}

/// Ordered vertices in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    vertices: Vec<Vec3>,
    pub frame_id: u32,
    pub sensor_origin: Vec3,
}

impl PointCloud {
    pub fn new(vertices: Vec<Vec3>, sensor_origin: Vec3) -> Result<Self, CloudError> {
        if vertices.is_empty() {
            return Err(CloudError::Empty);
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(CloudError::NonFinite(i));
        }
        if !sensor_origin.iter().all(|c| c.is_finite()) {
            return Err(CloudError::NonFinite(usize::MAX));
        }
        Ok(Self { vertices, frame_id: 0, sensor_origin })
    }

    pub fn with_frame_id(mut self, frame_id: u32) -> Self {
        self.frame_id = frame_id;
        self
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    /// Always false for a constructed cloud; present for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Applies `f` to every vertex and the sensor origin.
    pub fn map_points(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self, CloudError> {
        let vertices = self.vertices.iter().map(&f).collect();
        Ok(Self::new(vertices, f(&self.sensor_origin))?.with_frame_id(self.frame_id))
    }

    /// Keeps the vertices at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, CloudError> {
        let vertices = indices.iter().map(|&i| self.vertices[i]).collect();
        Ok(Self::new(vertices, self.sensor_origin)?.with_frame_id(self.frame_id))
    }

    /// Axis-aligned xy extent as (min, max).
    pub fn xy_bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for a in 0..2 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }
}

/// Cloud with a per-vertex pothole (true) / road (false) ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    labels: Vec<bool>,
}

impl LabeledCloud {
    pub fn new(cloud: PointCloud, labels: Vec<bool>) -> Result<Self, CloudError> {
        if labels.len() != cloud.len() {
            return Err(CloudError::LabelCount { labels: labels.len(), vertices: cloud.len() });
        }
        Ok(Self { cloud, labels })
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self, CloudError> {
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(self.cloud.select(indices)?, labels)
    }

    pub fn into_parts(self) -> (PointCloud, Vec<bool>) {
        (self.cloud, self.labels)
    }
}

/// Indices kept when downsampling `m` vertices by `ratio`: round(ratio·m) distinct indices drawn
/// uniformly with the given seed, returned in ascending order.
pub fn downsample_indices(m: usize, ratio: f64, seed: u64) -> Result<Vec<usize>, CloudError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(CloudError::Ratio(ratio));
    }
    if ratio == 1.0 {
        return Ok((0..m).collect());
    }
    let keep = (ratio * m as f64).round() as usize;
    if keep == 0 {
        return Err(CloudError::NothingLeft { m, ratio });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, m, keep).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub trait Downsample: Sized {
    fn downsample(&self, ratio: f64, seed: u64) -> Result<Self, CloudError>;
}

impl Downsample for PointCloud {
    fn downsample(&self, ratio: f64, seed: u64) -> Result<Self, CloudError> {
        self.select(&downsample_indices(self.len(), ratio, seed)?)
    }
}

impl Downsample for LabeledCloud {
    fn downsample(&self, ratio: f64, seed: u64) -> Result<Self, CloudError> {
        self.select(&downsample_indices(self.len(), ratio, seed)?)
    }
}

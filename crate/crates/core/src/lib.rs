//! Point-cloud obstacle detection: per-vertex saliency from a robust low-rank plus sparse
//! decomposition of stacked normals, road segmentation into hazard classes, synthetic pothole
//! scenes, evaluation metrics and class-overlay rendering.

pub mod cloud;
pub mod io;
pub mod keyvalue;
pub mod knn;
pub mod metrics;
pub mod normals;
pub mod pipeline;
pub mod projection;
pub mod rpca;
pub mod saliency;
pub mod segmentation;
pub mod synth;

pub use cloud::{CloudError, LabeledCloud, PointCloud};
pub use knn::{KdTree, NeighborGraph};
pub use normals::NormalField;

/// 3-vector in meters.
pub type Vec3 = nalgebra::Vector3<f64>;

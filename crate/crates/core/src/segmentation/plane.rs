use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RoadPlane, SegmentationError};
use crate::cloud::PointCloud;
use crate::normals::face_normal;
use crate::saliency::SaliencyMap;
use crate::Vec3;

const MIN_CANDIDATES: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFitConfig {
    /// Inlier distance to a hypothesis plane, meters.
    pub inlier_tol: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Fits whose inliers cover less than this share of the candidates are rejected.
    pub min_inlier_ratio: f64,
}

impl Default for PlaneFitConfig {
    fn default() -> Self {
        Self { inlier_tol: 0.02, iterations: 500, seed: 0, min_inlier_ratio: 0.3 }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Least-squares plane through `points`, normal oriented to +z.
fn refit(points: &[Vec3]) -> Option<RoadPlane> {
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let n: Vec3 = eig.eigenvectors.column(eig.eigenvalues.imin()).normalize();
    RoadPlane::through(n, &c)
}

/// Consensus plane over 3-point hypotheses drawn from the low-saliency half of the cloud,
/// refined by least squares on the winning inliers.
pub fn fit_road_plane(
    cloud: &PointCloud,
    saliency: &SaliencyMap,
    config: &PlaneFitConfig,
) -> Result<RoadPlane, SegmentationError> {
    if saliency.len() != cloud.len() {
        return Err(SegmentationError::Length { expected: cloud.len(), found: saliency.len() });
    }
    let cut = median(&saliency.fused);
    let cand: Vec<Vec3> = cloud
        .vertices()
        .iter()
        .zip(&saliency.fused)
        .filter(|(_, &s)| s <= cut)
        .map(|(v, _)| *v)
        .collect();
    if cand.len() < MIN_CANDIDATES {
        return Err(SegmentationError::NoRoad(format!(
            "{} low-saliency candidates, need {MIN_CANDIDATES}",
            cand.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(usize, RoadPlane)> = None;
    for _ in 0..config.iterations {
        let i = rng.random_range(0..cand.len());
        let j = rng.random_range(0..cand.len());
        let k = rng.random_range(0..cand.len());
        if i == j || j == k || i == k {
            continue;
        }
        let Ok(n) = face_normal(&cand[i], &cand[j], &cand[k]) else { continue };
        let Some(plane) = RoadPlane::through(n, &cand[i]) else { continue };
        let count = cand.iter().filter(|p| plane.distance(p).abs() <= config.inlier_tol).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, plane));
        }
    }
    let Some((_, hypothesis)) = best else {
        return Err(SegmentationError::NoRoad("no non-degenerate hypothesis".into()));
    };
    let inliers: Vec<Vec3> = cand
        .iter()
        .filter(|p| hypothesis.distance(p).abs() <= config.inlier_tol)
        .copied()
        .collect();
    let plane = refit(&inliers)
        .ok_or_else(|| SegmentationError::NoRoad("fitted plane is vertical".into()))?;
    let support = cand.iter().filter(|p| plane.distance(p).abs() <= config.inlier_tol).count();
    let ratio = support as f64 / cand.len() as f64;
    if ratio < config.min_inlier_ratio {
        return Err(SegmentationError::NoRoad(format!("inlier ratio {ratio:.3} too low")));
    }
    Ok(plane)
}

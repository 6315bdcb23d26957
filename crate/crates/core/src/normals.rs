use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::knn::NeighborGraph;
use crate::Vec3;

const DEGENERATE: f64 = 1e-12;
/// Neighbor pairs closer than this in angle form slivers whose normals are unreliable.
const MIN_FAN_GAP: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum NormalError {
    #[error("degenerate face: cross product norm {0:e}")]
    DegenerateFace(f64),
    #[error("no usable surface at vertex {0}: neighbors are collinear or coincident")]
    DegenerateNeighborhood(usize),
    #[error("neighbor graph has {graph} vertices but cloud has {cloud}")]
    GraphMismatch { graph: usize, cloud: usize },
    #[error("normal estimation needs k >= 2, got {0}")]
    TooFewNeighbors(usize),
}

/// Unit normal of the triangle (v1, v2, v3) by the right-hand rule.
pub fn face_normal(v1: &Vec3, v2: &Vec3, v3: &Vec3) -> Result<Vec3, NormalError> {
    let c = (v2 - v1).cross(&(v3 - v1));
    let n = c.norm();
    if n < DEGENERATE {
        return Err(NormalError::DegenerateFace(n));
    }
    Ok(c / n)
}

/// Per-vertex unit normals oriented toward the sensor origin.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    normals: Vec<Vec3>,
}

impl NormalField {
    pub fn new(normals: Vec<Vec3>) -> Self {
        Self { normals }
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }
}

/// Smallest-eigenvalue eigenvector of the neighborhood covariance, or `None` when the two
/// smallest eigenvalues are indistinguishable (collinear or coincident points).
fn covariance_normal(points: &[Vec3]) -> Option<Vec3> {
    let mean = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1, l2) =
        (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if l2 <= 0.0 || (l1 - l0) <= 1e-12 * l2 {
        return None;
    }
    Some(eig.eigenvectors.column(order[0]).normalize())
}

fn vertex_normal(
    j: usize,
    pts: &[Vec3],
    nbrs: &[usize],
    origin: &Vec3,
) -> Result<Vec3, NormalError> {
    let vj = pts[j];
    let mut local: Vec<Vec3> = Vec::with_capacity(nbrs.len() + 1);
    local.push(vj);
    local.extend(nbrs.iter().map(|&i| pts[i]));
    let axis = covariance_normal(&local).ok_or(NormalError::DegenerateNeighborhood(j))?;

    // Tangent basis and angular order of the neighbors around the covariance normal.
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = axis.cross(&helper).normalize();
    let t2 = axis.cross(&t1);
    let mut fan: Vec<(f64, usize)> = nbrs
        .iter()
        .map(|&i| {
            let d = pts[i] - vj;
            (d.dot(&t2).atan2(d.dot(&t1)), i)
        })
        .collect();
    fan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut sum = Vec3::zeros();
    let n = fan.len();
    for s in 0..n {
        let (ta, a) = fan[s];
        let (mut tb, b) = fan[(s + 1) % n];
        if s + 1 == n {
            tb += std::f64::consts::TAU;
        }
        // a gap of half a turn or more means vj sits on a boundary there
        if tb - ta >= std::f64::consts::PI || tb - ta < MIN_FAN_GAP || a == b {
            continue;
        }
        if let Ok(f) = face_normal(&vj, &pts[a], &pts[b]) {
            sum += if f.dot(&axis) < 0.0 { -f } else { f };
        }
    }
    let norm = sum.norm();
    let mut normal = if norm < DEGENERATE { axis } else { sum / norm };
    if normal.dot(&(origin - vj)) < 0.0 {
        normal = -normal;
    }
    Ok(normal)
}

/// Point normals as the normalized mean of the normals of fan triangles (v_j, v_a, v_b) over
/// angularly consecutive neighbor pairs, falling back to the covariance normal when no triangle
/// is usable.
pub fn estimate_point_normals(
    cloud: &PointCloud,
    graph: &NeighborGraph,
) -> Result<NormalField, NormalError> {
    if graph.len() != cloud.len() {
        return Err(NormalError::GraphMismatch { graph: graph.len(), cloud: cloud.len() });
    }
    if graph.k() < 2 {
        return Err(NormalError::TooFewNeighbors(graph.k()));
    }
    let pts = cloud.vertices();
    let origin = cloud.sensor_origin;
    let normals = (0..pts.len())
        .into_par_iter()
        .map(|j| vertex_normal(j, pts, graph.neighbors(j), &origin))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NormalField { normals })
}

//! Per-vertex saliency: geometric (sparse part of the stacked normals) and spectral (local
//! normal covariance), normalized and fused.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::knn::{KnnError, NeighborGraph};
use crate::normals::{estimate_point_normals, NormalError, NormalField};
use crate::rpca::{fast_pcp, RpcaConfig, RpcaError, RpcaResult};

#[derive(Debug, Error, PartialEq)]
pub enum SaliencyError {
    #[error("{what}: expected {expected}, found {found}")]
    Shape { what: &'static str, expected: String, found: String },
    #[error("vertex {0} has an all-zero normal block")]
    ZeroBlock(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("empty input")]
    Empty,
    #[error("invalid weights w1 = {w1}, w2 = {w2}")]
    Weights { w1: f64, w2: f64 },
    #[error("saliency needs k >= 2, got {0}")]
    BadK(usize),
    #[error("cloud has {m} vertices, needs more than k = {k}")]
    TooSmall { m: usize, k: usize },
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Normals(#[from] NormalError),
    #[error(transparent)]
    Rpca(#[from] RpcaError),
}

/// Stacked normals: vertex j owns rows 3j..3j+3; column 0 is its own normal, column c its
/// (c-1)-th neighbor's.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMatrix {
    data: DMatrix<f64>,
    k: usize,
}

impl NormalMatrix {
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn vertex_count(&self) -> usize {
        self.data.nrows() / 3
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The 3×(k+1) block of vertex `j`.
    pub fn block(&self, j: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.data.rows(3 * j, 3)
    }
}

pub fn assemble_normal_matrix(
    normals: &NormalField,
    graph: &NeighborGraph,
) -> Result<NormalMatrix, SaliencyError> {
    let m = normals.len();
    if graph.len() != m {
        return Err(SaliencyError::Shape {
            what: "neighbor graph vertex count",
            expected: m.to_string(),
            found: graph.len().to_string(),
        });
    }
    let k = graph.k();
    let n = normals.normals();
    let data = DMatrix::from_fn(3 * m, k + 1, |r, c| {
        let j = r / 3;
        let src = if c == 0 { j } else { graph.neighbors(j)[c - 1] };
        n[src][r % 3]
    });
    Ok(NormalMatrix { data, k })
}

/// Norm of each vertex's first-column block of the sparse matrix.
pub fn geometric_saliency(sparse: &DMatrix<f64>, m: usize) -> Result<Vec<f64>, SaliencyError> {
    if sparse.nrows() != 3 * m || sparse.ncols() < 1 {
        return Err(SaliencyError::Shape {
            what: "sparse matrix",
            expected: format!("{} rows", 3 * m),
            found: format!("{}x{}", sparse.nrows(), sparse.ncols()),
        });
    }
    Ok((0..m).map(|j| sparse.view((3 * j, 0), (3, 1)).norm()).collect())
}

/// Inverse l2 norm of the eigenvalues of R_j = E_j E_jᵀ.
pub fn spectral_saliency(e: &NormalMatrix) -> Result<Vec<f64>, SaliencyError> {
    (0..e.vertex_count())
        .into_par_iter()
        .map(|j| {
            let b = e.block(j);
            let r: Matrix3<f64> = (b * b.transpose()).fixed_view::<3, 3>(0, 0).into_owned();
            let eig = SymmetricEigen::new(r);
            let energy: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).powi(2)).sum();
            if energy == 0.0 {
                return Err(SaliencyError::ZeroBlock(j));
            }
            Ok(1.0 / energy.sqrt())
        })
        .collect()
}

/// Linear rescale to [0, 1]; a constant input maps to all zeros.
pub fn normalize_minmax(values: &[f64]) -> Result<Vec<f64>, SaliencyError> {
    if values.is_empty() {
        return Err(SaliencyError::Empty);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(SaliencyError::NonFinite(i));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

pub fn fuse(s1n: &[f64], s2n: &[f64], w1: f64, w2: f64) -> Result<Vec<f64>, SaliencyError> {
    if s1n.len() != s2n.len() {
        return Err(SaliencyError::Shape {
            what: "saliency lengths",
            expected: s1n.len().to_string(),
            found: s2n.len().to_string(),
        });
    }
    if !(w1 >= 0.0 && w2 >= 0.0 && w1 + w2 > 0.0 && (w1 + w2).is_finite()) {
        return Err(SaliencyError::Weights { w1, w2 });
    }
    Ok(s1n.iter().zip(s2n).map(|(a, b)| (w1 * a + w2 * b) / (w1 + w2)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyConfig {
    pub k: usize,
    pub w1: f64,
    pub w2: f64,
    pub rpca: RpcaConfig,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        Self { k: 16, w1: 1.0, w2: 1.0, rpca: RpcaConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub s1_raw: Vec<f64>,
    pub s2_raw: Vec<f64>,
    pub s1_norm: Vec<f64>,
    pub s2_norm: Vec<f64>,
    pub fused: Vec<f64>,
}

impl SaliencyMap {
    pub fn len(&self) -> usize {
        self.fused.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fused.is_empty()
    }
}

/// Everything computed on the way to a saliency map, for callers that reuse the graph.
#[derive(Debug, Clone)]
pub struct SaliencyAnalysis {
    pub graph: NeighborGraph,
    pub normals: NormalField,
    pub matrix: NormalMatrix,
    pub rpca: RpcaResult,
    pub map: SaliencyMap,
}

pub fn analyze(cloud: &PointCloud, config: &SaliencyConfig) -> Result<SaliencyAnalysis, SaliencyError> {
    if config.k < 2 {
        return Err(SaliencyError::BadK(config.k));
    }
    if cloud.len() <= config.k {
        return Err(SaliencyError::TooSmall { m: cloud.len(), k: config.k });
    }
    // fail on bad weights before the expensive stages
    fuse(&[], &[], config.w1, config.w2)?;
    let graph = NeighborGraph::build(cloud, config.k)?;
    let normals = estimate_point_normals(cloud, &graph)?;
    let matrix = assemble_normal_matrix(&normals, &graph)?;
    let rpca = fast_pcp(matrix.data(), &config.rpca)?;
    let s1_raw = geometric_saliency(&rpca.sparse, cloud.len())?;
    let s2_raw = spectral_saliency(&matrix)?;
    let s1_norm = normalize_minmax(&s1_raw)?;
    let s2_norm = normalize_minmax(&s2_raw)?;
    let fused = fuse(&s1_norm, &s2_norm, config.w1, config.w2)?;
    let map = SaliencyMap { s1_raw, s2_raw, s1_norm, s2_norm, fused };
    Ok(SaliencyAnalysis { graph, normals, matrix, rpca, map })
}

pub fn compute_saliency_map(
    cloud: &PointCloud,
    config: &SaliencyConfig,
) -> Result<SaliencyMap, SaliencyError> {
    analyze(cloud, config).map(|a| a.map)
}

//! Fast principal component pursuit: alternate a rank-K projection and soft-thresholding.

use nalgebra::{DMatrix, SVD};
use rayon::prelude::*;
use thiserror::Error;

/// Rows per block in the tall-skinny QR. Fixed so results do not depend on the thread count.
const QR_BLOCK: usize = 2048;
/// Singular values at or below this count as zero when reporting rank.
const RANK_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum RpcaError {
    #[error("input matrix is empty")]
    Empty,
    #[error("input matrix has a non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("rank {k} outside 1..={max}")]
    Rank { k: usize, max: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcaConfig {
    /// Sparsity weight; `None` uses 1/sqrt(max(rows, cols)).
    pub lambda: Option<f64>,
    /// Rank-increment threshold on u_K / sum(u_1..u_K).
    pub eps: f64,
    pub k0: usize,
    /// `None` means min(rows, cols).
    pub max_rank: Option<usize>,
    pub max_iter: usize,
    /// Stop when ||L_t - L_{t-1}||_F / max(1, ||L_{t-1}||_F) falls below this.
    pub tol: f64,
}

impl Default for RpcaConfig {
    fn default() -> Self {
        Self { lambda: None, eps: 0.01, k0: 1, max_rank: None, max_iter: 100, tol: 1e-6 }
    }
}

impl RpcaConfig {
    fn resolve(&self, rows: usize, cols: usize) -> Result<(f64, usize), RpcaError> {
        let lambda = self.lambda.unwrap_or(1.0 / (rows.max(cols) as f64).sqrt());
        let max_rank = self.max_rank.unwrap_or(rows.min(cols));
        let bad = |m: &str| Err(RpcaError::Config(m.to_string()));
        if !(lambda > 0.0 && lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad("eps must lie in (0, 1)");
        }
        if self.k0 == 0 || self.k0 > max_rank || max_rank > rows.min(cols) {
            return bad("need 1 <= k0 <= max_rank <= min(rows, cols)");
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return bad("tol and max_iter must be positive");
        }
        Ok((lambda, max_rank))
    }
}

#[derive(Debug, Clone)]
pub struct RpcaResult {
    pub low_rank: DMatrix<f64>,
    pub sparse: DMatrix<f64>,
    /// Numerical rank of `low_rank`.
    pub rank: usize,
    pub iterations: usize,
    /// ||L + S - E||_F / ||E||_F, zero for a zero input.
    pub residual: f64,
    pub converged: bool,
    /// 0.5·||L + S - E||_F² + λ·||S||_1 after each iteration.
    pub objective: Vec<f64>,
    /// Singular values from the last rank-K projection, descending.
    pub singular_values: Vec<f64>,
}

/// Elementwise soft threshold sign(x)·max(0, |x| − λ).
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    x.signum() * (x.abs() - lambda).max(0.0)
}

pub fn shrink(x: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    assert!(lambda >= 0.0, "shrink threshold must be non-negative");
    x.map(|v| soft_threshold(v, lambda))
}

#[derive(Debug, Clone)]
pub struct LowRank {
    pub matrix: DMatrix<f64>,
    /// All min(rows, cols) singular values of the input, descending.
    pub singular_values: Vec<f64>,
}

/// R factor of a tall matrix, computed blockwise.
fn tall_r(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let block = QR_BLOCK.max(2 * cols);
    let starts: Vec<usize> = (0..rows).step_by(block).collect();
    let factors: Vec<DMatrix<f64>> = starts
        .par_iter()
        .map(|&s| {
            let n = block.min(rows - s);
            let rows_block = m.rows(s, n).into_owned();
            if n >= cols {
                rows_block.qr().r()
            } else {
                rows_block
            }
        })
        .collect();
    let mut acc = factors[0].clone();
    for f in &factors[1..] {
        let mut stacked = DMatrix::zeros(acc.nrows() + f.nrows(), cols);
        stacked.rows_mut(0, acc.nrows()).copy_from(&acc);
        stacked.rows_mut(acc.nrows(), f.nrows()).copy_from(f);
        acc = if stacked.nrows() >= cols { stacked.qr().r() } else { stacked };
    }
    acc
}

/// Right singular vectors (as columns, descending order) and singular values of a tall matrix.
fn tall_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let r = tall_r(m);
    let svd = SVD::new(r, false, true);
    let vt = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();
    let v = DMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    (v, values)
}

/// Best rank-`k` approximation of `m`. Components with singular value at or below 1e-10 are
/// dropped so the result's numerical rank is well defined.
pub fn partial_low_rank(m: &DMatrix<f64>, k: usize) -> Result<LowRank, RpcaError> {
    let (rows, cols) = m.shape();
    let max = rows.min(cols);
    if k == 0 || k > max {
        return Err(RpcaError::Rank { k, max });
    }
    if rows < cols {
        let t = partial_low_rank(&m.transpose(), k)?;
        return Ok(LowRank { matrix: t.matrix.transpose(), singular_values: t.singular_values });
    }
    let (v, values) = tall_svd(m);
    let keep = values.iter().take(k).filter(|&&s| s > RANK_FLOOR).count();
    let matrix = if keep == 0 {
        DMatrix::zeros(rows, cols)
    } else {
        let vk = v.columns(0, keep);
        (m * vk) * vk.transpose()
    };
    Ok(LowRank { matrix, singular_values: values })
}

fn objective(e: &DMatrix<f64>, l: &DMatrix<f64>, s: &DMatrix<f64>, lambda: f64) -> f64 {
    let r = l + s - e;
    0.5 * r.norm_squared() + lambda * s.iter().map(|v| v.abs()).sum::<f64>()
}

/// Decomposes `e` into low-rank `L` plus sparse `S`.
///
/// Starting from rank `k0`, the rank grows by one after an L-update while the smallest kept
/// singular value carries more than `eps` of the kept spectrum; the first time it does not, the
/// rank is frozen for the rest of the solve.
pub fn fast_pcp(e: &DMatrix<f64>, config: &RpcaConfig) -> Result<RpcaResult, RpcaError> {
    let (rows, cols) = e.shape();
    if rows == 0 || cols == 0 {
        return Err(RpcaError::Empty);
    }
    if let Some(i) = e.iter().position(|v| !v.is_finite()) {
        return Err(RpcaError::NonFinite(i % rows, i / rows));
    }
    let (lambda, max_rank) = config.resolve(rows, cols)?;
    let e_norm = e.norm();

    let mut k = config.k0;
    let mut growing = true;
    let mut low = DMatrix::zeros(rows, cols);
    let mut sparse = DMatrix::zeros(rows, cols);
    let mut trace = Vec::new();
    let mut singular_values = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let lr = partial_low_rank(&(e - &sparse), k)?;
        let change = (&lr.matrix - &low).norm() / low.norm().max(1.0);
        low = lr.matrix;
        if growing && k < max_rank {
            let kept: f64 = lr.singular_values[..k].iter().sum();
            if kept > 0.0 && lr.singular_values[k - 1] / kept > config.eps {
                k += 1;
            } else {
                growing = false;
            }
        }
        singular_values = lr.singular_values;
        sparse = shrink(&(e - &low), lambda);
        trace.push(objective(e, &low, &sparse, lambda));
        if change < config.tol {
            converged = true;
            break;
        }
    }

    let rank = singular_values.iter().take(k).filter(|&&s| s > RANK_FLOOR).count();
    let rank = rank.min(numerical_rank(&low));
    let residual = if e_norm > 0.0 { (&low + &sparse - e).norm() / e_norm } else { 0.0 };
    Ok(RpcaResult {
        low_rank: low,
        sparse,
        rank,
        iterations,
        residual,
        converged,
        objective: trace,
        singular_values,
    })
}

/// Count of singular values above 1e-10.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let t;
    let tall = if m.nrows() >= m.ncols() {
        m
    } else {
        t = m.transpose();
        &t
    };
    tall_svd(tall).1.iter().filter(|&&s| s > RANK_FLOOR).count()
}

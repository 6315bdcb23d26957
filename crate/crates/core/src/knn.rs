use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KnnError {
    #[error("k = {k} must satisfy 1 <= k < m = {m}")]
    BadK { k: usize, m: usize },
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Exact k-d tree over 3-D points. Equal distances are ordered by lower point index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

/// Bounded candidate list ordered by (squared distance, index).
struct Best {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl Best {
    fn worst(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    fn offer(&mut self, d2: f64, i: usize) {
        if self.items.len() == self.k {
            let last = self.items[self.k - 1];
            if (d2, i) >= last {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|&(d, j)| (d, j) < (d2, i));
        self.items.insert(pos, (d2, i));
    }
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut tree = Self { perm: (0..points.len()).collect(), points, nodes: Vec::new() };
        if !tree.points.is_empty() {
            tree.build(0, tree.points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.perm[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.perm[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// The `k` nearest points to `q` as (squared distance, index), nearest first, skipping
    /// `exclude`.
    pub fn nearest(&self, q: &Vec3, k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let mut best = Best { k, items: Vec::with_capacity(k + 1) };
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, q, exclude, &mut best);
        }
        best.items
    }

    fn search(&self, node: usize, q: &Vec3, exclude: Option<usize>, best: &mut Best) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    if Some(i) != exclude {
                        best.offer((self.points[i] - q).norm_squared(), i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, exclude, best);
                if diff * diff <= best.worst() {
                    self.search(far, q, exclude, best);
                }
            }
        }
    }

    /// Indices of all points within distance `r` of `q` (inclusive), ascending.
    pub fn within_radius(&self, q: &Vec3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.collect_radius(0, q, r * r, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn collect_radius(&self, node: usize, q: &Vec3, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => out.extend(
                self.perm[start..end]
                    .iter()
                    .copied()
                    .filter(|&i| (self.points[i] - q).norm_squared() <= r2),
            ),
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.collect_radius(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.collect_radius(right, q, r2, out);
                }
            }
        }
    }
}

/// For each vertex, its `k` nearest other vertices in ascending distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    k: usize,
    flat: Vec<usize>,
}

impl NeighborGraph {
    pub fn build(cloud: &PointCloud, k: usize) -> Result<Self, KnnError> {
        let m = cloud.len();
        if k == 0 || k >= m {
            return Err(KnnError::BadK { k, m });
        }
        let tree = KdTree::new(cloud.vertices().to_vec());
        let lists: Vec<Vec<usize>> = cloud
            .vertices()
            .par_iter()
            .enumerate()
            .map(|(j, v)| tree.nearest(v, k, Some(j)).into_iter().map(|(_, i)| i).collect())
            .collect();
        Ok(Self { k, flat: lists.concat() })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.flat[j * self.k..(j + 1) * self.k]
    }
}

pub fn build_neighbor_graph(cloud: &PointCloud, k: usize) -> Result<NeighborGraph, KnnError> {
    NeighborGraph::build(cloud, k)
}

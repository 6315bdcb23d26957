//! Road plane, driving corridor, per-vertex region classes and obstacle extraction.
//!
//! Heights are signed distances to the fitted road plane, averaged over each vertex and its
//! `smooth_k` nearest neighbors. Inside the corridor a vertex is BeAwareNegative below
//! `-h_neg`, HazardPositive above `h_pos`, and salient vertices (fused ≥ `t_s`) already count as
//! hazardous beyond `±h_flat`. Everything else inside is SafeRoad and everything outside is
//! OffRoad.
//!
//! Extraction clusters hazardous vertices of each sign (single linkage, `cluster_radius`), keeps
//! clusters of at least `min_points`, then grows each kept cluster along the neighbor graph into
//! corridor vertices whose height stays beyond `h_flat` with the same sign. Claimed vertices
//! become RecognizedObstacle.

mod plane;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

pub use plane::{fit_road_plane, PlaneFitConfig};

use crate::cloud::PointCloud;
use crate::knn::{KdTree, NeighborGraph};
use crate::saliency::SaliencyMap;
use crate::Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentationError {
    #[error("no road plane: {0}")]
    NoRoad(String),
    #[error("per-vertex input has length {found}, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("invalid vehicle state: {0}")]
    Vehicle(String),
    #[error("invalid segmentation setting: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionClass {
    SafeRoad,
    BeAwareNegative,
    HazardPositive,
    OffRoad,
    RecognizedObstacle,
}

impl RegionClass {
    pub const ALL: [RegionClass; 5] = [
        RegionClass::SafeRoad,
        RegionClass::BeAwareNegative,
        RegionClass::HazardPositive,
        RegionClass::OffRoad,
        RegionClass::RecognizedObstacle,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: Vec3,
    heading: Vector2<f64>,
    steering_angle: f64,
}

impl VehicleState {
    pub fn new(position: Vec3, heading: Vector2<f64>, steering_angle: f64) -> Result<Self, SegmentationError> {
        if (heading.norm() - 1.0).abs() > 1e-9 {
            return Err(SegmentationError::Vehicle("heading must be a unit vector".into()));
        }
        if !(steering_angle.abs() <= std::f64::consts::FRAC_PI_2) {
            return Err(SegmentationError::Vehicle("|steering angle| must be at most pi/2".into()));
        }
        if !position.iter().all(|c| c.is_finite()) {
            return Err(SegmentationError::Vehicle("position must be finite".into()));
        }
        Ok(Self { position, heading, steering_angle })
    }

    /// Vehicle heading at `yaw` radians from +x.
    pub fn from_yaw(position: Vec3, yaw: f64, steering_angle: f64) -> Result<Self, SegmentationError> {
        Self::new(position, Vector2::new(yaw.cos(), yaw.sin()), steering_angle)
    }

    pub fn heading(&self) -> Vector2<f64> {
        self.heading
    }

    pub fn steering_angle(&self) -> f64 {
        self.steering_angle
    }
}

/// Plane n·p + offset = 0 with unit normal, n.z > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadPlane {
    pub normal: Vec3,
    pub offset: f64,
}

impl RoadPlane {
    /// Plane with normal `n` through `p`, flipped to +z. `None` for a vertical plane.
    pub fn through(n: Vec3, p: &Vec3) -> Option<Self> {
        let n = if n.z < 0.0 { -n } else { n };
        if n.z <= 1e-9 {
            return None;
        }
        Some(Self { normal: n, offset: -n.dot(p) })
    }

    /// Signed distance, positive above the road.
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

/// Simple polygon in the ground plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub vertices: Vec<[f64; 2]>,
}

impl Corridor {
    /// Even-odd containment test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (xi, yi) = (v[i][0], v[i][1]);
            let (xj, yj) = (v[j][0], v[j][1]);
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadModel {
    pub plane: RoadPlane,
    pub corridor: Corridor,
}

/// Rectangle of `length` × `width` starting at the vehicle, along the heading turned by the
/// steering angle.
pub fn driving_corridor(state: &VehicleState, length: f64, width: f64) -> Corridor {
    let (s, c) = state.steering_angle.sin_cos();
    let h = state.heading;
    let dir = Vector2::new(c * h.x - s * h.y, s * h.x + c * h.y);
    let side = Vector2::new(-dir.y, dir.x) * (width / 2.0);
    let o = state.position.xy();
    let ahead = dir * length;
    let corners = [o - side, o + ahead - side, o + ahead + side, o + side];
    Corridor { vertices: corners.iter().map(|p| [p.x, p.y]).collect() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationConfig {
    /// Fused-saliency level above which a vertex counts as salient.
    pub t_s: f64,
    pub h_neg: f64,
    pub h_pos: f64,
    pub h_flat: f64,
    /// Neighbors averaged into each vertex height.
    pub smooth_k: usize,
    pub cluster_radius: f64,
    pub min_points: usize,
    pub corridor_length: f64,
    pub corridor_width: f64,
    pub plane: PlaneFitConfig,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            t_s: 0.5,
            h_neg: 0.015,
            h_pos: 0.015,
            h_flat: 0.005,
            smooth_k: 8,
            cluster_radius: 0.3,
            min_points: 10,
            corridor_length: 30.0,
            corridor_width: 3.5,
            plane: PlaneFitConfig::default(),
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        let positive = [
            ("h_neg", self.h_neg),
            ("h_pos", self.h_pos),
            ("h_flat", self.h_flat),
            ("cluster_radius", self.cluster_radius),
            ("corridor_length", self.corridor_length),
            ("corridor_width", self.corridor_width),
            ("inlier_tol", self.plane.inlier_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SegmentationError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.t_s) || !(0.0..=1.0).contains(&self.plane.min_inlier_ratio) {
            return Err(SegmentationError::Config("t_s and min_inlier_ratio lie in [0, 1]".into()));
        }
        if self.min_points == 0 || self.plane.iterations == 0 {
            return Err(SegmentationError::Config("min_points and iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedCloud {
    pub classes: Vec<RegionClass>,
    /// Signed plane distance per vertex.
    pub heights: Vec<f64>,
    /// Neighbor-averaged signed plane distance per vertex.
    pub mean_heights: Vec<f64>,
    pub in_corridor: Vec<bool>,
    pub plane: RoadPlane,
}

impl SegmentedCloud {
    pub fn class_ids(&self) -> Vec<u8> {
        self.classes.iter().map(|c| c.id()).collect()
    }
}

fn smoothing_neighbors(graph: &NeighborGraph, j: usize, smooth_k: usize) -> &[usize] {
    &graph.neighbors(j)[..smooth_k.min(graph.k())]
}

pub fn classify_points(
    cloud: &PointCloud,
    saliency: &SaliencyMap,
    plane: &RoadPlane,
    corridor: &Corridor,
    graph: &NeighborGraph,
    config: &SegmentationConfig,
) -> Result<SegmentedCloud, SegmentationError> {
    let m = cloud.len();
    for found in [saliency.len(), graph.len()] {
        if found != m {
            return Err(SegmentationError::Length { expected: m, found });
        }
    }
    let pts = cloud.vertices();
    let heights: Vec<f64> = pts.iter().map(|p| plane.distance(p)).collect();
    let mean_heights: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|j| {
            let nb = smoothing_neighbors(graph, j, config.smooth_k);
            (heights[j] + nb.iter().map(|&i| heights[i]).sum::<f64>()) / (1 + nb.len()) as f64
        })
        .collect();
    let in_corridor: Vec<bool> = pts.iter().map(|p| corridor.contains(p.x, p.y)).collect();
    let classes = (0..m)
        .map(|j| {
            if !in_corridor[j] {
                return RegionClass::OffRoad;
            }
            let h = mean_heights[j];
            let salient = saliency.fused[j] >= config.t_s;
            if h < -config.h_neg || (salient && h < -config.h_flat) {
                RegionClass::BeAwareNegative
            } else if h > config.h_pos || (salient && h > config.h_flat) {
                RegionClass::HazardPositive
            } else {
                RegionClass::SafeRoad
            }
        })
        .collect();
    Ok(SegmentedCloud { classes, heights, mean_heights, in_corridor, plane: *plane })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObstacleKind {
    Negative,
    Positive,
}

impl fmt::Display for ObstacleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObstacleKind::Negative => "negative",
            ObstacleKind::Positive => "positive",
        })
    }
}

impl FromStr for ObstacleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "negative" => Ok(Self::Negative),
            "positive" => Ok(Self::Positive),
            _ => Err(format!("unknown obstacle kind '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        Some(it.fold(Self { min: first, max: first }, |b, p| Self { min: b.min.inf(p), max: b.max.sup(p) }))
    }

    pub fn dims(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn footprint_area(&self) -> f64 {
        let d = self.dims();
        d.x * d.y
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }
}

pub const HISTOGRAM_BINS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub bbox_dims: Vec3,
    pub point_count: usize,
    /// Mean signed distance below the road plane; negative for raised obstacles.
    pub mean_depth: f64,
    /// Fused saliency counts over 8 equal bins of [0, 1].
    pub saliency_histogram: [usize; HISTOGRAM_BINS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    /// Ascending vertex indices.
    pub vertex_indices: Vec<usize>,
    pub bbox: Aabb,
    pub centroid: Vec3,
    pub kind: ObstacleKind,
    pub descriptor: Descriptor,
}

fn histogram_bin(s: f64) -> usize {
    ((s * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

/// Descriptor of the vertex set `indices`. Order of `indices` does not matter.
pub fn obstacle_descriptor(
    indices: &[usize],
    cloud: &PointCloud,
    saliency: &SaliencyMap,
    plane: &RoadPlane,
) -> Descriptor {
    let mut idx = indices.to_vec();
    idx.sort_unstable();
    idx.dedup();
    let pts = cloud.vertices();
    let bbox = Aabb::from_points(idx.iter().map(|&i| &pts[i]));
    let mut saliency_histogram = [0; HISTOGRAM_BINS];
    let mut depth = 0.0;
    for &i in &idx {
        saliency_histogram[histogram_bin(saliency.fused[i])] += 1;
        depth -= plane.distance(&pts[i]);
    }
    Descriptor {
        bbox_dims: bbox.map_or(Vec3::zeros(), |b| b.dims()),
        point_count: idx.len(),
        mean_depth: if idx.is_empty() { 0.0 } else { depth / idx.len() as f64 },
        saliency_histogram,
    }
}

/// Single-linkage clusters of `members` (indices into `pts`) at distance `radius`, each sorted,
/// ordered by smallest member.
fn clusters(pts: &[Vec3], members: &[usize], radius: f64) -> Vec<Vec<usize>> {
    let tree = KdTree::new(members.iter().map(|&i| pts[i]).collect());
    let mut label = vec![usize::MAX; members.len()];
    let mut out = Vec::new();
    for start in 0..members.len() {
        if label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        label[start] = id;
        let mut queue = VecDeque::from([start]);
        let mut group = Vec::new();
        while let Some(u) = queue.pop_front() {
            group.push(members[u]);
            for v in tree.within_radius(&tree.points()[u], radius) {
                if label[v] == usize::MAX {
                    label[v] = id;
                    queue.push_back(v);
                }
            }
        }
        group.sort_unstable();
        out.push(group);
    }
    out
}

/// Clusters hazardous vertices into obstacles and promotes their (grown) members to
/// RecognizedObstacle. Returned obstacles have pairwise disjoint vertex sets.
pub fn extract_obstacles(
    segmented: &mut SegmentedCloud,
    cloud: &PointCloud,
    saliency: &SaliencyMap,
    graph: &NeighborGraph,
    config: &SegmentationConfig,
) -> Vec<Obstacle> {
    let pts = cloud.vertices();
    let m = pts.len();
    let mut claimed = vec![false; m];
    let mut found = Vec::new();
    for (kind, class, sign) in [
        (ObstacleKind::Negative, RegionClass::BeAwareNegative, -1.0),
        (ObstacleKind::Positive, RegionClass::HazardPositive, 1.0),
    ] {
        let members: Vec<usize> = (0..m).filter(|&j| segmented.classes[j] == class).collect();
        for seed in clusters(pts, &members, config.cluster_radius) {
            if seed.len() < config.min_points || seed.iter().any(|&j| claimed[j]) {
                continue;
            }
            let mut region = Vec::new();
            let mut queue = VecDeque::new();
            for &j in &seed {
                claimed[j] = true;
                queue.push_back(j);
            }
            while let Some(u) = queue.pop_front() {
                region.push(u);
                for &v in smoothing_neighbors(graph, u, config.smooth_k) {
                    if !claimed[v]
                        && segmented.in_corridor[v]
                        && sign * segmented.mean_heights[v] > config.h_flat
                    {
                        claimed[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            region.sort_unstable();
            found.push((kind, region));
        }
    }
    found
        .into_iter()
        .map(|(kind, vertex_indices)| {
            for &j in &vertex_indices {
                segmented.classes[j] = RegionClass::RecognizedObstacle;
            }
            let bbox = Aabb::from_points(vertex_indices.iter().map(|&i| &pts[i])).expect("non-empty");
            let centroid =
                vertex_indices.iter().map(|&i| pts[i]).sum::<Vec3>() / vertex_indices.len() as f64;
            let descriptor = obstacle_descriptor(&vertex_indices, cloud, saliency, &segmented.plane);
            Obstacle { vertex_indices, bbox, centroid, kind, descriptor }
        })
        .collect()
}

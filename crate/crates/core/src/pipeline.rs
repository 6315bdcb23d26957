//! Single-frame detection: saliency, road plane, corridor, classes and obstacles.

use std::fmt::Write as _;

use nalgebra::Rotation3;
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::io::format_sig9;
use crate::knn::NeighborGraph;
use crate::Vec3;
use crate::saliency::{analyze, SaliencyConfig, SaliencyError, SaliencyMap};
use crate::segmentation::{
    classify_points, driving_corridor, extract_obstacles, fit_road_plane, Corridor, Obstacle,
    ObstacleKind, RegionClass, RoadPlane, SegmentationConfig, SegmentationError, SegmentedCloud,
    VehicleState,
};

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineConfig {
    pub saliency: SaliencyConfig,
    pub segmentation: SegmentationConfig,
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub saliency: SaliencyMap,
    pub graph: NeighborGraph,
    pub plane: RoadPlane,
    pub corridor: Corridor,
    pub segmented: SegmentedCloud,
    pub obstacles: Vec<Obstacle>,
    pub rpca_rank: usize,
    pub rpca_iterations: usize,
    pub rpca_converged: bool,
}

impl Detection {
    /// Per-vertex pothole prediction: BeAwareNegative or a member of a negative obstacle.
    pub fn predicted_potholes(&self) -> Vec<bool> {
        let mut pred: Vec<bool> =
            self.segmented.classes.iter().map(|&c| c == RegionClass::BeAwareNegative).collect();
        for o in self.obstacles.iter().filter(|o| o.kind == ObstacleKind::Negative) {
            for &i in &o.vertex_indices {
                pred[i] = true;
            }
        }
        pred
    }
}

/// The cloud expressed relative to the vehicle, heading along +x. The sparse/low-rank split is
/// not rotation invariant, so saliency is computed here to keep results tied to the vehicle.
pub fn vehicle_frame(cloud: &PointCloud, vehicle: &VehicleState) -> PointCloud {
    let h = vehicle.heading();
    let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), -h.y.atan2(h.x));
    let origin = vehicle.position;
    cloud.map_points(|p| rot * (p - origin)).expect("rigid motion keeps coordinates finite")
}

pub fn detect(cloud: &PointCloud, vehicle: &VehicleState, config: &PipelineConfig) -> Result<Detection, PipelineError> {
    let seg = &config.segmentation;
    seg.validate()?;
    let analysis = analyze(&vehicle_frame(cloud, vehicle), &config.saliency)?;
    let plane = fit_road_plane(cloud, &analysis.map, &seg.plane)?;
    let corridor = driving_corridor(vehicle, seg.corridor_length, seg.corridor_width);
    let mut segmented = classify_points(cloud, &analysis.map, &plane, &corridor, &analysis.graph, seg)?;
    let obstacles = extract_obstacles(&mut segmented, cloud, &analysis.map, &analysis.graph, seg);
    Ok(Detection {
        saliency: analysis.map,
        graph: analysis.graph,
        plane,
        corridor,
        segmented,
        obstacles,
        rpca_rank: analysis.rpca.rank,
        rpca_iterations: analysis.rpca.iterations,
        rpca_converged: analysis.rpca.converged,
    })
}

/// Obstacle manifest: one line per obstacle,
/// "id kind cx cy cz xmin ymin zmin xmax ymax zmax count mean_depth h0 .. h7".
pub fn format_obstacles(obstacles: &[Obstacle]) -> String {
    let mut s = String::from(
        "# id kind cx cy cz xmin ymin zmin xmax ymax zmax count mean_depth h0 h1 h2 h3 h4 h5 h6 h7\n",
    );
    for (id, o) in obstacles.iter().enumerate() {
        let _ = write!(s, "{id} {}", o.kind);
        for v in [o.centroid, o.bbox.min, o.bbox.max] {
            for c in v.iter() {
                let _ = write!(s, " {}", format_sig9(*c));
            }
        }
        let _ = write!(s, " {} {}", o.descriptor.point_count, format_sig9(o.descriptor.mean_depth));
        for h in o.descriptor.saliency_histogram {
            let _ = write!(s, " {h}");
        }
        s.push('\n');
    }
    s
}

//! Synthetic road patches with bowl-shaped potholes z -= d·(1 − r²)^p.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::cloud::{CloudError, LabeledCloud, PointCloud};
use crate::io::format_sig9;
use crate::segmentation::{Aabb, SegmentationError, VehicleState};
use crate::Vec3;

/// Minimum xy gap between pothole footprints in a scene, meters.
pub const POTHOLE_GAP: f64 = 0.2;
const PLACEMENT_ATTEMPTS: usize = 20;
const PLACEMENT_MARGIN: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("pothole footprint leaves the patch")]
    OutsidePatch,
    #[error("could not place pothole {0} without overlap")]
    Placement(usize),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Vehicle(#[from] SegmentationError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadPatchParams {
    pub length: f64,
    pub width: f64,
    pub spacing: f64,
    pub noise_sigma: f64,
    /// Uniform xy jitter as a fraction of the spacing, in [0, 0.5).
    pub jitter: f64,
    pub seed: u64,
}

impl Default for RoadPatchParams {
    fn default() -> Self {
        Self { length: 5.0, width: 5.0, spacing: 0.025, noise_sigma: 0.005, jitter: 0.25, seed: 0 }
    }
}

impl RoadPatchParams {
    /// Grid counts along x and y.
    pub fn grid(&self) -> (usize, usize) {
        let n = |extent: f64| (extent / self.spacing).round() as usize + 1;
        (n(self.length), n(self.width))
    }

    fn validate(&self) -> Result<(), SynthError> {
        let finite = [self.length, self.width, self.spacing, self.noise_sigma, self.jitter]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.spacing <= 0.0 || self.length <= 0.0 || self.width <= 0.0 {
            return Err(SynthError::Params("extent and spacing must be positive".into()));
        }
        if self.noise_sigma < 0.0 || !(0.0..0.5).contains(&self.jitter) {
            return Err(SynthError::Params("need noise_sigma >= 0 and jitter in [0, 0.5)".into()));
        }
        let (nx, ny) = self.grid();
        if nx.saturating_mul(ny) < 100 {
            return Err(SynthError::Params(format!("{nx}x{ny} grid has fewer than 100 points")));
        }
        Ok(())
    }

    /// Vertical label threshold max(0.01, 2σ).
    pub fn label_threshold(&self) -> f64 {
        label_threshold(self.noise_sigma)
    }
}

pub fn label_threshold(noise_sigma: f64) -> f64 {
    (2.0 * noise_sigma).max(0.01)
}

fn patch_points(params: &RoadPatchParams, origin: [f64; 2]) -> Vec<Vec3> {
    let (nx, ny) = params.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let j = params.jitter * params.spacing;
    let mut pts = Vec::with_capacity(nx * ny);
    for ix in 0..nx {
        for iy in 0..ny {
            let jx: f64 = rng.random_range(-1.0..1.0);
            let jy: f64 = rng.random_range(-1.0..1.0);
            let n: f64 = rng.sample(StandardNormal);
            let z = if params.noise_sigma == 0.0 { 0.0 } else { params.noise_sigma * n };
            pts.push(Vec3::new(
                origin[0] + ix as f64 * params.spacing + j * jx,
                origin[1] - params.width / 2.0 + iy as f64 * params.spacing + j * jy,
                z,
            ));
        }
    }
    pts
}

/// Jittered grid over x ∈ [0, length], y ∈ [−width/2, width/2] with Gaussian heights, viewed
/// from 10 m above the patch center. All vertices are labeled road.
pub fn generate_road_patch(params: &RoadPatchParams) -> Result<LabeledCloud, SynthError> {
    params.validate()?;
    let pts = patch_points(params, [0.0, 0.0]);
    let m = pts.len();
    let cloud = PointCloud::new(pts, Vec3::new(params.length / 2.0, 0.0, 10.0))?;
    Ok(LabeledCloud::new(cloud, vec![false; m])?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotholeParams {
    pub depth: f64,
    pub semi_axis_a: f64,
    pub semi_axis_b: f64,
    pub power: f64,
    pub center: [f64; 2],
    pub yaw: f64,
}

impl PotholeParams {
    fn validate(&self) -> Result<(), SynthError> {
        let ok = self.depth > 0.0
            && self.semi_axis_a > 0.0
            && self.semi_axis_b > 0.0
            && self.power >= 1.0
            && [self.depth, self.semi_axis_a, self.semi_axis_b, self.power, self.yaw]
                .iter()
                .chain(&self.center)
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SynthError::Params("pothole needs d, a, b > 0 and p >= 1".into()))
        }
    }

    /// Elliptic radius of (x, y) in the pothole frame.
    pub fn radius(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let u = (c * dx + s * dy) / self.semi_axis_a;
        let v = (-s * dx + c * dy) / self.semi_axis_b;
        (u * u + v * v).sqrt()
    }

    /// Downward displacement at (x, y).
    pub fn displacement(&self, x: f64, y: f64) -> f64 {
        let r = self.radius(x, y);
        if r >= 1.0 {
            0.0
        } else {
            self.depth * (1.0 - r * r).powf(self.power)
        }
    }

    /// Axis-aligned half extents of the elliptic footprint.
    pub fn half_extents(&self) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let (a, b) = (self.semi_axis_a, self.semi_axis_b);
        [(a * a * c * c + b * b * s * s).sqrt(), (a * a * s * s + b * b * c * c).sqrt()]
    }

    /// Footprint box as ([xmin, ymin], [xmax, ymax]).
    pub fn footprint(&self) -> ([f64; 2], [f64; 2]) {
        let e = self.half_extents();
        let c = self.center;
        ([c[0] - e[0], c[1] - e[1]], [c[0] + e[0], c[1] + e[1]])
    }
}

/// Lowers vertices inside the footprint and labels those displaced beyond `threshold`. Returns
/// the newly labeled indices.
fn carve(pts: &mut [Vec3], labels: &mut [bool], ph: &PotholeParams, threshold: f64) -> Vec<usize> {
    let mut hit = Vec::new();
    for (i, p) in pts.iter_mut().enumerate() {
        let d = ph.displacement(p.x, p.y);
        if d > 0.0 {
            p.z -= d;
        }
        if d > threshold {
            labels[i] = true;
            hit.push(i);
        }
    }
    hit
}

pub fn carve_pothole(
    patch: &LabeledCloud,
    ph: &PotholeParams,
    noise_sigma: f64,
) -> Result<LabeledCloud, SynthError> {
    ph.validate()?;
    let (lo, hi) = patch.cloud.xy_bounds();
    let (flo, fhi) = ph.footprint();
    if flo[0] < lo[0] || flo[1] < lo[1] || fhi[0] > hi[0] || fhi[1] > hi[1] {
        return Err(SynthError::OutsidePatch);
    }
    let mut pts = patch.cloud.vertices().to_vec();
    let mut labels = patch.labels().to_vec();
    carve(&mut pts, &mut labels, ph, label_threshold(noise_sigma));
    let cloud = PointCloud::new(pts, patch.cloud.sensor_origin)?.with_frame_id(patch.cloud.frame_id);
    Ok(LabeledCloud::new(cloud, labels)?)
}

/// Sampling ranges (inclusive) for scene potholes.
#[derive(Debug, Clone, PartialEq)]
pub struct PotholeRanges {
    pub depth: (f64, f64),
    pub semi_axis: (f64, f64),
    pub power: (f64, f64),
    pub yaw: (f64, f64),
}

impl Default for PotholeRanges {
    fn default() -> Self {
        Self {
            depth: (0.05, 0.3),
            semi_axis: (0.3, 1.0),
            power: (1.5, 1.5),
            yaw: (0.0, std::f64::consts::PI),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub patch: RoadPatchParams,
    pub n_potholes: usize,
    pub ranges: PotholeRanges,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthPothole {
    pub params: PotholeParams,
    /// Ascending indices of vertices displaced beyond the label threshold.
    pub vertex_indices: Vec<usize>,
    pub bbox: Aabb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: LabeledCloud,
    pub potholes: Vec<GroundTruthPothole>,
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn separated(a: &([f64; 2], [f64; 2]), b: &([f64; 2], [f64; 2])) -> bool {
    (0..2).any(|k| a.1[k] + POTHOLE_GAP <= b.0[k] || b.1[k] + POTHOLE_GAP <= a.0[k])
}

/// A road patch with `n_potholes` non-overlapping potholes, everything derived from
/// `spec.patch.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    let r = &spec.ranges;
    for (lo, hi) in [r.depth, r.semi_axis, r.power, r.yaw] {
        if !(lo <= hi) {
            return Err(SynthError::Params("empty sampling range".into()));
        }
    }
    let patch = generate_road_patch(&spec.patch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.patch.seed);
    rng.set_stream(1);
    let (length, half_w) = (spec.patch.length, spec.patch.width / 2.0);
    let mut placed: Vec<PotholeParams> = Vec::new();
    for index in 0..spec.n_potholes {
        let mut ok = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let mut ph = PotholeParams {
                depth: draw(&mut rng, r.depth),
                semi_axis_a: draw(&mut rng, r.semi_axis),
                semi_axis_b: draw(&mut rng, r.semi_axis),
                power: draw(&mut rng, r.power),
                center: [0.0, 0.0],
                yaw: draw(&mut rng, r.yaw),
            };
            let e = ph.half_extents();
            let (x0, x1) = (e[0] + PLACEMENT_MARGIN, length - e[0] - PLACEMENT_MARGIN);
            let (y0, y1) = (-half_w + e[1] + PLACEMENT_MARGIN, half_w - e[1] - PLACEMENT_MARGIN);
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            if x0 > x1 || y0 > y1 {
                continue;
            }
            ph.center = [x0 + u * (x1 - x0), y0 + v * (y1 - y0)];
            ph.validate()?;
            let fp = ph.footprint();
            if placed.iter().all(|q| separated(&q.footprint(), &fp)) {
                ok = Some(ph);
                break;
            }
        }
        placed.push(ok.ok_or(SynthError::Placement(index))?);
    }

    let (cloud, mut labels) = patch.into_parts();
    let origin = cloud.sensor_origin;
    let mut pts = cloud.vertices().to_vec();
    let threshold = spec.patch.label_threshold();
    let mut hits = Vec::new();
    for ph in &placed {
        hits.push(carve(&mut pts, &mut labels, ph, threshold));
    }
    let potholes = placed
        .into_iter()
        .zip(hits)
        .map(|(params, vertex_indices)| {
            let bbox = Aabb::from_points(vertex_indices.iter().map(|&i| &pts[i])).unwrap_or_else(|| {
                let (lo, hi) = params.footprint();
                Aabb { min: Vec3::new(lo[0], lo[1], -params.depth), max: Vec3::new(hi[0], hi[1], 0.0) }
            });
            GroundTruthPothole { params, vertex_indices, bbox }
        })
        .collect();
    let cloud = PointCloud::new(pts, origin)?;
    Ok(Scene { cloud: LabeledCloud::new(cloud, labels)?, potholes })
}

/// Manifest lines "id d a b p cx cy yaw xmin ymin zmin xmax ymax zmax".
pub fn format_manifest(potholes: &[GroundTruthPothole]) -> String {
    let mut s = String::from("# id d a b p cx cy yaw xmin ymin zmin xmax ymax zmax\n");
    for (id, gt) in potholes.iter().enumerate() {
        let p = &gt.params;
        let fields = [
            p.depth,
            p.semi_axis_a,
            p.semi_axis_b,
            p.power,
            p.center[0],
            p.center[1],
            p.yaw,
            gt.bbox.min.x,
            gt.bbox.min.y,
            gt.bbox.min.z,
            gt.bbox.max.x,
            gt.bbox.max.y,
            gt.bbox.max.z,
        ];
        let _ = write!(s, "{id}");
        for f in fields {
            let _ = write!(s, " {}", format_sig9(f));
        }
        s.push('\n');
    }
    s
}

/// A straight drive along +x, one frame per `step` meters.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteParams {
    pub route_length: f64,
    pub step: f64,
    pub frame_length: f64,
    pub frame_width: f64,
    pub spacing: f64,
    pub noise_sigma: f64,
    pub sensor_height: f64,
    pub seed: u64,
    pub potholes: Vec<PotholeParams>,
}

impl Default for RouteParams {
    fn default() -> Self {
        Self {
            route_length: 60.0,
            step: 5.0,
            frame_length: 10.0,
            frame_width: 4.0,
            spacing: 0.1,
            noise_sigma: 0.002,
            sensor_height: 2.0,
            seed: 0,
            potholes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteFrame {
    pub cloud: LabeledCloud,
    pub vehicle: VehicleState,
}

/// Frames in world coordinates; frame i starts at x = i·step and covers `frame_length` ahead.
/// Potholes are carved wherever they intersect a frame.
pub fn generate_route(params: &RouteParams) -> Result<Vec<RouteFrame>, SynthError> {
    if !(params.step > 0.0 && params.route_length >= 0.0) {
        return Err(SynthError::Params("route needs a positive step".into()));
    }
    for ph in &params.potholes {
        ph.validate()?;
    }
    let count = (params.route_length / params.step).floor() as usize + 1;
    let threshold = label_threshold(params.noise_sigma);
    (0..count)
        .map(|i| {
            let x0 = i as f64 * params.step;
            let patch = RoadPatchParams {
                length: params.frame_length,
                width: params.frame_width,
                spacing: params.spacing,
                noise_sigma: params.noise_sigma,
                jitter: 0.25,
                seed: params.seed.wrapping_add(i as u64),
            };
            patch.validate()?;
            let mut pts = patch_points(&patch, [x0, 0.0]);
            let mut labels = vec![false; pts.len()];
            for ph in &params.potholes {
                carve(&mut pts, &mut labels, ph, threshold);
            }
            let cloud = PointCloud::new(pts, Vec3::new(x0, 0.0, params.sensor_height))?
                .with_frame_id(i as u32);
            let vehicle = VehicleState::from_yaw(Vec3::new(x0, 0.0, 0.0), 0.0, 0.0)?;
            Ok(RouteFrame { cloud: LabeledCloud::new(cloud, labels)?, vehicle })
        })
        .collect()
}

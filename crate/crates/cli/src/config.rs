//! Run settings: one flat key namespace read from `--config`, with flags written over it.

use std::path::Path;

use roadscan_core::keyvalue::{KeyValues, KvError};
use roadscan_core::pipeline::PipelineConfig;
use roadscan_core::projection::{CameraModel, Connectivity, Palette, PpmFormat, CAMERA_KEYS};
use roadscan_core::segmentation::VehicleState;
use roadscan_core::synth::{PotholeParams, PotholeRanges, RoadPatchParams, RouteParams, SceneSpec};
use roadscan_core::Vec3;
use roadscan_registry::server::SERVER_KEYS;
use roadscan_registry::{ReplayOptions, ServerConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("{0}")]
    Invalid(String),
}

const PLAIN_KEYS: &[&str] = &[
    "seed",
    "ratio",
    // saliency
    "k",
    "w1",
    "w2",
    "lambda",
    "eps",
    "k0",
    "max_rank",
    "max_iter",
    "tol",
    // segmentation
    "t_s",
    "h_neg",
    "h_pos",
    "h_flat",
    "smooth_k",
    "cluster_radius",
    "min_points",
    "corridor_length",
    "corridor_width",
    "inlier_tol",
    "ransac_iterations",
    "min_inlier_ratio",
    // vehicle
    "vehicle_x",
    "vehicle_y",
    "vehicle_z",
    "vehicle_yaw",
    "steering",
    // synth
    "synth.length",
    "synth.width",
    "synth.spacing",
    "synth.noise_sigma",
    "synth.jitter",
    "synth.potholes",
    "synth.depth_min",
    "synth.depth_max",
    "synth.axis_min",
    "synth.axis_max",
    "synth.power_min",
    "synth.power_max",
    "route.length",
    "route.step",
    "route.frame_length",
    "route.frame_width",
    "route.spacing",
    "route.sensor_height",
    // render
    "fill",
    "connectivity",
    "ppm",
    // replay
    "agent",
    "query_radius",
    "report_absences",
    "start_time",
    "frame_interval",
];

fn known(key: &str) -> bool {
    PLAIN_KEYS.contains(&key)
        || SERVER_KEYS.contains(&key)
        || key.strip_prefix("camera.").is_some_and(|k| CAMERA_KEYS.contains(&k))
        || key.strip_prefix("palette.").is_some_and(|k| k == "empty" || k.starts_with("class."))
        || key.strip_prefix("route.pothole.").is_some_and(|n| n.parse::<usize>().is_ok())
}

/// Keys starting with `prefix`, with the prefix removed.
fn section(kv: &KeyValues, prefix: &str) -> KeyValues {
    let mut out = KeyValues::default();
    for k in kv.keys() {
        if let Some(rest) = k.strip_prefix(prefix) {
            out.set(rest, kv.get(k).unwrap_or_default());
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub ratio: f64,
    pub pipeline: PipelineConfig,
    pub vehicle: VehicleState,
    pub scene: SceneSpec,
    pub route: RouteParams,
    pub camera: Option<CameraModel>,
    pub palette: Palette,
    pub fill: usize,
    pub connectivity: Connectivity,
    pub ppm: PpmFormat,
    pub server: ServerConfig,
    pub agent: String,
    pub replay: ReplayOptions,
}

impl RunConfig {
    /// Reads `path` (if any) and applies `overrides` on top.
    pub fn load(path: Option<&Path>, overrides: &KeyValues) -> Result<Self, ConfigError> {
        let mut kv = match path {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        for k in overrides.keys() {
            kv.set(k, overrides.get(k).unwrap_or_default());
        }
        Self::from_keyvalues(&kv)
    }

    pub fn from_keyvalues(kv: &KeyValues) -> Result<Self, ConfigError> {
        if let Some(k) = kv.keys().find(|k| !known(k)) {
            return Err(KvError::Unknown(k.to_string()).into());
        }
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let seed = kv.parsed("seed")?.unwrap_or(0);
        let ratio = kv.parsed("ratio")?.unwrap_or(1.0);
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(ConfigError::Invalid("ratio must lie in (0, 1]".into()));
        }

        let mut pipeline = PipelineConfig::default();
        let sal = &mut pipeline.saliency;
        set(kv, "k", &mut sal.k)?;
        set(kv, "w1", &mut sal.w1)?;
        set(kv, "w2", &mut sal.w2)?;
        sal.rpca.lambda = kv.parsed("lambda")?.or(sal.rpca.lambda);
        set(kv, "eps", &mut sal.rpca.eps)?;
        set(kv, "k0", &mut sal.rpca.k0)?;
        sal.rpca.max_rank = kv.parsed("max_rank")?.or(sal.rpca.max_rank);
        set(kv, "max_iter", &mut sal.rpca.max_iter)?;
        set(kv, "tol", &mut sal.rpca.tol)?;
        if sal.k < 2 || !(sal.w1 >= 0.0 && sal.w2 >= 0.0 && sal.w1 + sal.w2 > 0.0) {
            return Err(ConfigError::Invalid("need k >= 2, w1, w2 >= 0 and w1 + w2 > 0".into()));
        }
        let seg = &mut pipeline.segmentation;
        set(kv, "t_s", &mut seg.t_s)?;
        set(kv, "h_neg", &mut seg.h_neg)?;
        set(kv, "h_pos", &mut seg.h_pos)?;
        set(kv, "h_flat", &mut seg.h_flat)?;
        set(kv, "smooth_k", &mut seg.smooth_k)?;
        set(kv, "cluster_radius", &mut seg.cluster_radius)?;
        set(kv, "min_points", &mut seg.min_points)?;
        set(kv, "corridor_length", &mut seg.corridor_length)?;
        set(kv, "corridor_width", &mut seg.corridor_width)?;
        set(kv, "inlier_tol", &mut seg.plane.inlier_tol)?;
        set(kv, "ransac_iterations", &mut seg.plane.iterations)?;
        set(kv, "min_inlier_ratio", &mut seg.plane.min_inlier_ratio)?;
        seg.plane.seed = seed;
        seg.validate().map_err(|e| invalid(&e))?;

        let num = |key: &str| -> Result<f64, ConfigError> { Ok(kv.parsed(key)?.unwrap_or(0.0)) };
        let vehicle = VehicleState::from_yaw(
            Vec3::new(num("vehicle_x")?, num("vehicle_y")?, num("vehicle_z")?),
            num("vehicle_yaw")?,
            num("steering")?,
        )
        .map_err(|e| invalid(&e))?;

        let mut patch = RoadPatchParams { seed, ..RoadPatchParams::default() };
        set(kv, "synth.length", &mut patch.length)?;
        set(kv, "synth.width", &mut patch.width)?;
        set(kv, "synth.spacing", &mut patch.spacing)?;
        set(kv, "synth.noise_sigma", &mut patch.noise_sigma)?;
        set(kv, "synth.jitter", &mut patch.jitter)?;
        let mut ranges = PotholeRanges::default();
        set(kv, "synth.depth_min", &mut ranges.depth.0)?;
        set(kv, "synth.depth_max", &mut ranges.depth.1)?;
        set(kv, "synth.axis_min", &mut ranges.semi_axis.0)?;
        set(kv, "synth.axis_max", &mut ranges.semi_axis.1)?;
        set(kv, "synth.power_min", &mut ranges.power.0)?;
        set(kv, "synth.power_max", &mut ranges.power.1)?;
        let scene = SceneSpec { patch, n_potholes: kv.parsed("synth.potholes")?.unwrap_or(1), ranges };

        let mut route = RouteParams { seed, ..RouteParams::default() };
        set(kv, "route.length", &mut route.route_length)?;
        set(kv, "route.step", &mut route.step)?;
        set(kv, "route.frame_length", &mut route.frame_length)?;
        set(kv, "route.frame_width", &mut route.frame_width)?;
        set(kv, "route.spacing", &mut route.spacing)?;
        set(kv, "route.sensor_height", &mut route.sensor_height)?;
        let holes = section(kv, "route.pothole.");
        let mut numbered: Vec<(usize, &str)> =
            holes.keys().map(|k| (k.parse().unwrap_or(usize::MAX), k)).collect();
        numbered.sort();
        for (_, k) in numbered {
            route.potholes.push(parse_pothole(k, holes.get(k).unwrap_or_default())?);
        }

        let camera_kv = section(kv, "camera.");
        let camera = if camera_kv.is_empty() {
            None
        } else {
            Some(CameraModel::from_keyvalues(&camera_kv).map_err(|e| invalid(&e))?)
        };
        let palette = Palette::from_keyvalues(&section(kv, "palette.")).map_err(|e| invalid(&e))?;
        let connectivity = Connectivity::try_from(kv.parsed::<u32>("connectivity")?.unwrap_or(4))
            .map_err(|e| invalid(&e))?;
        let ppm = match kv.get("ppm").unwrap_or("ascii") {
            "ascii" => PpmFormat::Ascii,
            "binary" => PpmFormat::Binary,
            other => return Err(ConfigError::Invalid(format!("ppm must be ascii or binary, got '{other}'"))),
        };

        let mut server_kv = KeyValues::default();
        for k in SERVER_KEYS {
            if let Some(v) = kv.get(k) {
                server_kv.set(k, v);
            }
        }
        let server = ServerConfig::from_keyvalues(&server_kv).map_err(|e| invalid(&e))?;

        let mut replay = ReplayOptions { pipeline: pipeline.clone(), ..ReplayOptions::default() };
        set(kv, "query_radius", &mut replay.query_radius)?;
        set(kv, "report_absences", &mut replay.report_absences)?;
        set(kv, "start_time", &mut replay.start_time)?;
        set(kv, "frame_interval", &mut replay.frame_interval)?;
        if !(replay.query_radius >= 0.0 && replay.frame_interval >= 0.0) {
            return Err(ConfigError::Invalid("query_radius and frame_interval must be non-negative".into()));
        }

        Ok(Self {
            seed,
            ratio,
            pipeline,
            vehicle,
            scene,
            route,
            camera,
            palette,
            fill: kv.parsed("fill")?.unwrap_or(0),
            connectivity,
            ppm,
            server,
            agent: kv.get("agent").unwrap_or("agent").to_string(),
            replay,
        })
    }
}

fn set<T: std::str::FromStr>(kv: &KeyValues, key: &str, slot: &mut T) -> Result<(), KvError>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = kv.parsed(key)? {
        *slot = v;
    }
    Ok(())
}

/// "cx cy depth a b power yaw".
fn parse_pothole(key: &str, value: &str) -> Result<PotholeParams, ConfigError> {
    let bad = || ConfigError::Invalid(format!("route.pothole.{key}: expected 'cx cy depth a b power yaw'"));
    let v: Vec<f64> = value.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [cx, cy, depth, a, b, power, yaw] = v[..] else {
        return Err(bad());
    };
    Ok(PotholeParams { depth, semi_axis_a: a, semi_axis_b: b, power, center: [cx, cy], yaw })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_sections() {
        let kv = KeyValues::parse(
            "k = 8\ncamera.fx = 100\ncamera.fy = 100\ncamera.width = 8\ncamera.height = 6\n\
             palette.class.1 = 1,2,3\nroute.pothole.1 = 9 0 0.1 0.5 0.4 1.5 0\n\
             route.pothole.0 = 4 0 0.1 0.5 0.4 1.5 0\nendpoint = 127.0.0.1:0\n",
        )
        .unwrap();
        let c = RunConfig::from_keyvalues(&kv).unwrap();
        assert_eq!(c.pipeline.saliency.k, 8);
        assert_eq!(c.camera.unwrap().width, 8);
        assert_eq!(c.route.potholes.len(), 2);
        assert_eq!(c.route.potholes[0].center, [4.0, 0.0]);
        assert_eq!(c.server.endpoint, "127.0.0.1:0");
        assert_eq!(c.replay.pipeline, c.pipeline);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        for text in ["bogus = 1", "camera.zoom = 2", "k = -1", "ratio = 0", "t_s = 2", "ppm = jpeg", "route.pothole.0 = 1 2"] {
            assert!(RunConfig::from_keyvalues(&KeyValues::parse(text).unwrap()).is_err(), "{text}");
        }
    }

    #[test]
    fn overrides_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "k = 8\nw1 = 0.5\n").unwrap();
        let mut flags = KeyValues::default();
        flags.set("k", "12");
        let c = RunConfig::load(Some(&path), &flags).unwrap();
        assert_eq!((c.pipeline.saliency.k, c.pipeline.saliency.w1), (12, 0.5));
    }
}

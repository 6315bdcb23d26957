//! Pinhole projection of classified points into a class image, gap filling and PPM output.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::keyvalue::{KeyValues, KvError};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("{points} points but {classes} class ids")]
    Length { points: usize, classes: usize },
    #[error("palette: {0}")]
    Palette(String),
    #[error(transparent)]
    Config(#[from] KvError),
    #[error("{path}: {source}")]
    Write { path: String, source: std::io::Error },
}

/// How sensor axes map to the optical frame (x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AxisConvention {
    /// Sensor axes already are optical axes.
    #[default]
    Aligned,
    /// Sensor x forward, y left, z up.
    Lidar,
}

impl FromStr for AxisConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aligned" => Ok(Self::Aligned),
            "lidar" => Ok(Self::Lidar),
            _ => Err(format!("unknown axes '{s}' (aligned or lidar)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub x0: f64,
    pub y0: f64,
    pub width: u32,
    pub height: u32,
    /// Camera position in the sensor frame, meters.
    pub lidar_to_camera: Vec3,
    pub axes: AxisConvention,
}

pub const CAMERA_KEYS: [&str; 10] = ["fx", "fy", "x0", "y0", "width", "height", "tx", "ty", "tz", "axes"];

impl CameraModel {
    pub fn new(fx: f64, fy: f64, x0: f64, y0: f64, width: u32, height: u32) -> Result<Self, ProjectionError> {
        let cam = Self { fx, fy, x0, y0, width, height, lidar_to_camera: Vec3::zeros(), axes: AxisConvention::Aligned };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(ProjectionError::Camera("focal lengths must be positive".into()));
        }
        if !(self.x0 >= 0.0 && self.x0 < self.width as f64 && self.y0 >= 0.0 && self.y0 < self.height as f64) {
            return Err(ProjectionError::Camera("principal point must lie inside the image".into()));
        }
        if !self.lidar_to_camera.iter().all(|c| c.is_finite()) {
            return Err(ProjectionError::Camera("translation must be finite".into()));
        }
        Ok(())
    }

    /// Builds a camera from keys fx, fy, x0, y0, width, height, tx, ty, tz and axes; x0 and y0
    /// default to the image center, translation to zero.
    pub fn from_keyvalues(kv: &KeyValues) -> Result<Self, ProjectionError> {
        kv.check_known(&CAMERA_KEYS)?;
        let need = |k: &str| kv.parsed::<f64>(k)?.ok_or_else(|| ProjectionError::Camera(format!("missing '{k}'")));
        let width = kv.parsed::<u32>("width")?.ok_or_else(|| ProjectionError::Camera("missing 'width'".into()))?;
        let height = kv.parsed::<u32>("height")?.ok_or_else(|| ProjectionError::Camera("missing 'height'".into()))?;
        let t = |k: &str| kv.parsed::<f64>(k).map(|v| v.unwrap_or(0.0));
        let cam = Self {
            fx: need("fx")?,
            fy: need("fy")?,
            x0: kv.parsed("x0")?.unwrap_or(width as f64 / 2.0),
            y0: kv.parsed("y0")?.unwrap_or(height as f64 / 2.0),
            width,
            height,
            lidar_to_camera: Vec3::new(t("tx")?, t("ty")?, t("tz")?),
            axes: kv.parsed("axes")?.unwrap_or_default(),
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// Sensor-frame points to the camera frame: translate by −lidar_to_camera, then relabel axes.
pub fn transform_to_camera(points: &[Vec3], camera: &CameraModel) -> Vec<Vec3> {
    points
        .iter()
        .map(|p| {
            let q = p - camera.lidar_to_camera;
            match camera.axes {
                AxisConvention::Aligned => q,
                AxisConvention::Lidar => Vec3::new(-q.y, -q.z, q.x),
            }
        })
        .collect()
}

/// Inverse of [`transform_to_camera`].
pub fn transform_from_camera(points: &[Vec3], camera: &CameraModel) -> Vec<Vec3> {
    points
        .iter()
        .map(|q| {
            let p = match camera.axes {
                AxisConvention::Aligned => *q,
                AxisConvention::Lidar => Vec3::new(q.z, -q.x, -q.y),
            };
            p + camera.lidar_to_camera
        })
        .collect()
}

/// Pixel of a camera-frame point, or `None` when behind the camera or outside the image.
pub fn project(p: &Vec3, camera: &CameraModel) -> Option<(u32, u32)> {
    if !(p.z > 0.0) {
        return None;
    }
    let u = (camera.fx * p.x / p.z + camera.x0 + 0.5).floor();
    let v = (camera.fy * p.y / p.z + camera.y0 + 0.5).floor();
    if u >= 0.0 && v >= 0.0 && u < camera.width as f64 && v < camera.height as f64 {
        Some((u as u32, v as u32))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub class_id: u8,
    pub depth: f64,
}

impl Pixel {
    /// True when `self` should win over `other` at the same pixel.
    fn beats(&self, other: &Pixel) -> bool {
        (self.depth, self.class_id) < (other.depth, other.class_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassImage {
    pub width: u32,
    pub height: u32,
    pixels: Vec<Option<Pixel>>,
}

impl ClassImage {
    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, pixels: vec![None; width as usize * height as usize] }
    }

    pub fn get(&self, u: u32, v: u32) -> Option<Pixel> {
        self.pixels[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, px: Option<Pixel>) {
        self.pixels[(v * self.width + u) as usize] = px;
    }

    pub fn painted(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }

    pub fn pixels(&self) -> &[Option<Pixel>] {
        &self.pixels
    }
}

/// Paints each visible point's class at its pixel; the nearest depth wins, then the smaller
/// class id.
pub fn render_classes(points: &[Vec3], class_ids: &[u8], camera: &CameraModel) -> Result<ClassImage, ProjectionError> {
    if points.len() != class_ids.len() {
        return Err(ProjectionError::Length { points: points.len(), classes: class_ids.len() });
    }
    camera.validate()?;
    let mut img = ClassImage::empty(camera.width, camera.height);
    for (p, &class_id) in transform_to_camera(points, camera).iter().zip(class_ids) {
        if let Some((u, v)) = project(p, camera) {
            let px = Pixel { class_id, depth: p.z };
            if img.get(u, v).is_none_or(|old| px.beats(&old)) {
                img.set(u, v, Some(px));
            }
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u32> for Connectivity {
    type Error = String;

    fn try_from(n: u32) -> Result<Self, Self::Error> {
        match n {
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            _ => Err(format!("connectivity must be 4 or 8, got {n}")),
        }
    }
}

/// Synchronous rounds in which every empty pixel next to a painted one copies its nearest
/// painted neighbor (orthogonal before diagonal, then smaller depth, then smaller class id).
pub fn fill_gaps(image: &ClassImage, iterations: usize, connectivity: Connectivity) -> ClassImage {
    const ORTHO: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    const DIAG: [(i64, i64); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];
    let (w, h) = (image.width as i64, image.height as i64);
    let mut cur = image.clone();
    for _ in 0..iterations {
        let mut next = cur.clone();
        let mut changed = false;
        for v in 0..h {
            for u in 0..w {
                if cur.get(u as u32, v as u32).is_some() {
                    continue;
                }
                let ring = |offs: &[(i64, i64)]| {
                    offs.iter()
                        .filter_map(|&(du, dv)| {
                            let (a, b) = (u + du, v + dv);
                            (a >= 0 && b >= 0 && a < w && b < h).then(|| cur.get(a as u32, b as u32)).flatten()
                        })
                        .reduce(|best, px| if px.beats(&best) { px } else { best })
                };
                let pick = ring(&ORTHO).or_else(|| match connectivity {
                    Connectivity::Eight => ring(&DIAG),
                    Connectivity::Four => None,
                });
                if pick.is_some() {
                    next.set(u as u32, v as u32, pick);
                    changed = true;
                }
            }
        }
        cur = next;
        if !changed {
            break;
        }
    }
    cur
}

/// RGB per class id plus the empty-pixel color.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    pub classes: Vec<[u8; 3]>,
    pub empty: [u8; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            classes: vec![[0, 0, 255], [255, 255, 0], [0, 255, 255], [128, 0, 128], [255, 0, 0]],
            empty: [0, 0, 0],
        }
    }
}

fn parse_rgb(key: &str, v: &str) -> Result<[u8; 3], ProjectionError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    let err = || ProjectionError::Palette(format!("'{key}' needs r,g,b in 0..=255, got '{v}'"));
    if parts.len() != 3 {
        return Err(err());
    }
    let mut rgb = [0u8; 3];
    for (c, p) in rgb.iter_mut().zip(parts) {
        *c = p.parse().map_err(|_| err())?;
    }
    Ok(rgb)
}

impl Palette {
    /// Overrides the default palette with `class.N = r,g,b` and `empty = r,g,b` entries.
    pub fn from_keyvalues(kv: &KeyValues) -> Result<Self, ProjectionError> {
        let mut p = Self::default();
        for key in kv.keys() {
            let value = kv.get(key).unwrap_or_default();
            if key == "empty" {
                p.empty = parse_rgb(key, value)?;
            } else if let Some(n) = key.strip_prefix("class.").and_then(|n| n.parse::<usize>().ok()) {
                if n > 255 {
                    return Err(ProjectionError::Palette(format!("class id {n} out of range")));
                }
                if p.classes.len() <= n {
                    p.classes.resize(n + 1, p.empty);
                }
                p.classes[n] = parse_rgb(key, value)?;
            } else {
                return Err(ProjectionError::Palette(format!("unknown key '{key}'")));
            }
        }
        Ok(p)
    }

    fn color(&self, px: Option<Pixel>) -> Result<[u8; 3], ProjectionError> {
        match px {
            None => Ok(self.empty),
            Some(px) => self
                .classes
                .get(px.class_id as usize)
                .copied()
                .ok_or_else(|| ProjectionError::Palette(format!("no color for class {}", px.class_id))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PpmFormat {
    /// P3
    #[default]
    Ascii,
    /// P6
    Binary,
}

pub fn encode_ppm(image: &ClassImage, palette: &Palette, format: PpmFormat) -> Result<Vec<u8>, ProjectionError> {
    let magic = match format {
        PpmFormat::Ascii => "P3",
        PpmFormat::Binary => "P6",
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    for row in image.pixels.chunks(image.width.max(1) as usize) {
        let colors = row.iter().map(|&px| palette.color(px)).collect::<Result<Vec<_>, _>>()?;
        match format {
            PpmFormat::Binary => colors.iter().for_each(|c| out.extend_from_slice(c)),
            PpmFormat::Ascii => {
                let mut line = String::new();
                for (i, c) in colors.iter().enumerate() {
                    let sep = if i == 0 { "" } else { " " };
                    let _ = write!(line, "{sep}{} {} {}", c[0], c[1], c[2]);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_image(image: &ClassImage, palette: &Palette, path: &Path, format: PpmFormat) -> Result<(), ProjectionError> {
    let bytes = encode_ppm(image, palette, format)?;
    std::fs::write(path, bytes).map_err(|source| ProjectionError::Write { path: path.display().to_string(), source })
}

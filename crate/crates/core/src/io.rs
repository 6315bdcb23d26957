//! Ascii point-cloud formats.
//!
//! `xyz` holds one `x y z` record per line and `labeled-xyz` one `x y z L` with `L` in {0, 1}.
//! Lines starting with `#` are comments, except `# sensor_origin x y z` and `# frame_id n`
//! which carry cloud metadata. `ply` reads the x, y and z properties of an ascii vertex element.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::cloud::{CloudError, LabeledCloud, PointCloud};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no records in input")]
    Empty,
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("value count {values} does not match vertex count {vertices}")]
    ColumnLength { values: usize, vertices: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
    LabeledXyz,
}

impl FromStr for CloudFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xyz" | "xyz-ascii" => Ok(Self::Xyz),
            "ply" | "ply-ascii" => Ok(Self::Ply),
            "labeled-xyz" => Ok(Self::LabeledXyz),
            _ => Err(format!("unknown cloud format '{s}'")),
        }
    }
}

impl CloudFormat {
    /// Guesses the format from the file extension; `.xyzl` and `.lxyz` mean labeled.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ply") => Self::Ply,
            Some("xyzl" | "lxyz") => Self::LabeledXyz,
            _ => Self::Xyz,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Plain(PointCloud),
    Labeled(LabeledCloud),
}

impl Loaded {
    pub fn into_cloud(self) -> PointCloud {
        match self {
            Loaded::Plain(c) => c,
            Loaded::Labeled(l) => l.cloud,
        }
    }
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_owned(), source })
}

fn write(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::Io { path: path.to_owned(), source })
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<Loaded, IoError> {
    parse_cloud(&read(path)?, format)
}

pub fn parse_cloud(text: &str, format: CloudFormat) -> Result<Loaded, IoError> {
    match format {
        CloudFormat::Xyz => Ok(Loaded::Plain(parse_xyz(text)?)),
        CloudFormat::LabeledXyz => Ok(Loaded::Labeled(parse_labeled(text)?)),
        CloudFormat::Ply => Ok(Loaded::Plain(parse_ply(text)?)),
    }
}

pub fn load_labeled(path: &Path) -> Result<LabeledCloud, IoError> {
    parse_labeled(&read(path)?)
}

/// Loads `x y z v` records, returning the cloud and the fourth column.
pub fn load_xyz_value(path: &Path) -> Result<(PointCloud, Vec<f64>), IoError> {
    let table = parse_table(&read(path)?, 4)?;
    let values = table.rows.iter().map(|r| r[3]).collect();
    Ok((table.into_cloud()?, values))
}

struct Table {
    rows: Vec<Vec<f64>>,
    sensor_origin: Vec3,
    frame_id: u32,
}

impl Table {
    fn into_cloud(self) -> Result<PointCloud, IoError> {
        let v = self.rows.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect();
        Ok(PointCloud::new(v, self.sensor_origin)?.with_frame_id(self.frame_id))
    }
}

fn parse_floats(line: &str, lineno: usize, n: usize) -> Result<Vec<f64>, IoError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != n {
        return Err(IoError::Parse {
            line: lineno,
            msg: format!("expected {n} fields, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| IoError::Parse { line: lineno, msg: format!("invalid number '{f}'") })
        })
        .collect()
}

fn parse_table(text: &str, columns: usize) -> Result<Table, IoError> {
    let mut table = Table { rows: Vec::new(), sensor_origin: Vec3::zeros(), frame_id: 0 };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut words = comment.split_whitespace();
            match words.next() {
                Some("sensor_origin") => {
                    let rest: Vec<&str> = words.collect();
                    let v = parse_floats(&rest.join(" "), lineno, 3)?;
                    table.sensor_origin = Vec3::new(v[0], v[1], v[2]);
                }
                Some("frame_id") => {
                    table.frame_id = words.next().and_then(|w| w.parse().ok()).ok_or_else(|| {
                        IoError::Parse { line: lineno, msg: "invalid frame_id".into() }
                    })?;
                }
                _ => {}
            }
            continue;
        }
        table.rows.push(parse_floats(line, lineno, columns)?);
    }
    if table.rows.is_empty() {
        return Err(IoError::Empty);
    }
    Ok(table)
}

pub fn parse_xyz(text: &str) -> Result<PointCloud, IoError> {
    parse_table(text, 3)?.into_cloud()
}

pub fn parse_labeled(text: &str) -> Result<LabeledCloud, IoError> {
    let mut labels = Vec::new();
    let mut line_of_row = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            line_of_row.push(i + 1);
        }
    }
    let table = parse_table(text, 4)?;
    for (row, lineno) in table.rows.iter().zip(&line_of_row) {
        labels.push(match row[3] {
            0.0 => false,
            1.0 => true,
            _ => return Err(IoError::Parse { line: *lineno, msg: "label must be 0 or 1".into() }),
        });
    }
    Ok(LabeledCloud::new(table.into_cloud()?, labels)?)
}

pub fn parse_ply(text: &str) -> Result<PointCloud, IoError> {
    let err = |line: usize, msg: &str| IoError::Parse { line, msg: msg.to_string() };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing 'ply' magic")),
    }
    // (name, count, property names)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut ascii = false;
    let mut ended = false;
    for (n, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => ascii = true,
            ["format", ..] => return Err(err(n, "only ascii ply is supported")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| err(n, "invalid element count"))?;
                elements.push((name.to_string(), count, Vec::new()));
            }
            ["property", "list", ..] => {
                let el = elements.last_mut().ok_or_else(|| err(n, "property before element"))?;
                if el.0 == "vertex" {
                    return Err(err(n, "list properties on vertices are not supported"));
                }
                el.2.push(String::new());
            }
            ["property", _ty, name] => {
                let el = elements.last_mut().ok_or_else(|| err(n, "property before element"))?;
                el.2.push(name.to_string());
            }
            ["end_header"] => {
                ended = true;
                break;
            }
            _ => return Err(err(n, "unrecognized header line")),
        }
    }
    if !ended || !ascii {
        return Err(err(1, "incomplete ply header"));
    }
    let mut vertices = Vec::new();
    for (name, count, props) in &elements {
        if name != "vertex" {
            for _ in 0..*count {
                lines.next().ok_or(IoError::Empty)?;
            }
            continue;
        }
        let col = |axis: &str| {
            props.iter().position(|p| p == axis).ok_or_else(|| err(1, "vertex lacks x, y or z"))
        };
        let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);
        for _ in 0..*count {
            let (n, line) = lines.next().ok_or_else(|| err(0, "truncated vertex data"))?;
            let v = parse_floats(line, n, props.len())?;
            vertices.push(Vec3::new(v[cx], v[cy], v[cz]));
        }
        break;
    }
    if vertices.is_empty() {
        return Err(IoError::Empty);
    }
    Ok(PointCloud::new(vertices, Vec3::zeros())?)
}

/// Formats `v` with 9 significant digits, trimming trailing zeros.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{v:.8e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    let mut s = if (-5..=9).contains(&exp) {
        format!("{:.*}", (8 - exp).max(0) as usize, v)
    } else {
        sci.clone()
    };
    if s.contains('.') && !s.contains('e') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

fn header(cloud: &PointCloud) -> String {
    let o = cloud.sensor_origin;
    let mut s = format!(
        "# sensor_origin {} {} {}\n",
        format_sig9(o.x),
        format_sig9(o.y),
        format_sig9(o.z)
    );
    if cloud.frame_id != 0 {
        let _ = writeln!(s, "# frame_id {}", cloud.frame_id);
    }
    s
}

fn render_rows(cloud: &PointCloud, extra: impl Fn(usize) -> Option<String>) -> String {
    let mut s = header(cloud);
    for (i, v) in cloud.vertices().iter().enumerate() {
        let _ = write!(s, "{} {} {}", format_sig9(v.x), format_sig9(v.y), format_sig9(v.z));
        if let Some(e) = extra(i) {
            s.push(' ');
            s.push_str(&e);
        }
        s.push('\n');
    }
    s
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    render_rows(cloud, |_| None)
}

pub fn format_labeled(lc: &LabeledCloud) -> String {
    render_rows(&lc.cloud, |i| Some(if lc.labels()[i] { "1" } else { "0" }.to_string()))
}

/// `x y z v` rows with a real-valued fourth column.
pub fn format_xyz_value(cloud: &PointCloud, values: &[f64]) -> Result<String, IoError> {
    if values.len() != cloud.len() {
        return Err(IoError::ColumnLength { values: values.len(), vertices: cloud.len() });
    }
    Ok(render_rows(cloud, |i| Some(format_sig9(values[i]))))
}

/// `x y z id` rows with an integer fourth column.
pub fn format_xyz_id(cloud: &PointCloud, ids: &[u8]) -> Result<String, IoError> {
    if ids.len() != cloud.len() {
        return Err(IoError::ColumnLength { values: ids.len(), vertices: cloud.len() });
    }
    Ok(render_rows(cloud, |i| Some(ids[i].to_string())))
}

pub fn save_xyz(cloud: &PointCloud, path: &Path) -> Result<(), IoError> {
    write(path, &format_xyz(cloud))
}

pub fn save_labeled(lc: &LabeledCloud, path: &Path) -> Result<(), IoError> {
    write(path, &format_labeled(lc))
}

pub fn save_xyz_value(cloud: &PointCloud, values: &[f64], path: &Path) -> Result<(), IoError> {
    write(path, &format_xyz_value(cloud, values)?)
}

pub fn save_xyz_id(cloud: &PointCloud, ids: &[u8], path: &Path) -> Result<(), IoError> {
    write(path, &format_xyz_id(cloud, ids)?)
}

pub fn save_text(path: &Path, text: &str) -> Result<(), IoError> {
    write(path, text)
}

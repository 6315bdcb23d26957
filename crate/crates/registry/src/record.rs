//! Registry entries, agent reports and the keep/replace/delete rule.

use std::fmt;
use std::str::FromStr;

use roadscan_core::segmentation::{Aabb, Descriptor, ObstacleKind};

/// Relative change in footprint area or any box dimension beyond which a report replaces the
/// stored record.
pub const RESHAPE_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleRecord {
    pub id: u64,
    pub position: [f64; 2],
    pub bbox: Aabb,
    pub descriptor: Descriptor,
    pub kind: ObstacleKind,
    pub timestamp: f64,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub agent_id: String,
    pub position: [f64; 2],
    pub bbox: Aabb,
    pub descriptor: Descriptor,
    pub kind: ObstacleKind,
    pub timestamp: f64,
    /// False when the agent revisited the location and found nothing.
    pub observed: bool,
}

impl Report {
    /// Checks the field constraints a parsed report can still violate.
    pub fn validate(&self) -> Result<(), String> {
        if !valid_agent_id(&self.agent_id) {
            return Err(format!("bad agent id '{}'", self.agent_id));
        }
        let b = &self.bbox;
        let d = &self.descriptor;
        let finite = self.position.iter().chain(b.min.iter()).chain(b.max.iter()).chain(d.bbox_dims.iter())
            .chain([&self.timestamp, &d.mean_depth])
            .all(|v| v.is_finite());
        if !finite {
            return Err("non-finite field".into());
        }
        if !(b.max.x > b.min.x && b.max.y > b.min.y && b.max.z >= b.min.z) {
            return Err("degenerate bounding box".into());
        }
        Ok(())
    }
}

/// Agent ids are single tokens of ASCII letters, digits, '_', '-' and '.'.
pub fn valid_agent_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|c| c.is_ascii_alphanumeric() || b"_-.".contains(&c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Replace,
    Delete,
}

pub fn decide_update(old: &ObstacleRecord, report: &Report) -> Decision {
    if !report.observed {
        return Decision::Delete;
    }
    let limit = 1.0 + RESHAPE_THRESHOLD;
    let ratio = report.bbox.footprint_area() / old.bbox.footprint_area();
    if ratio > limit || ratio < 1.0 / limit {
        return Decision::Replace;
    }
    let (a, b) = (old.bbox.dims(), report.bbox.dims());
    if (0..3).any(|i| (b[i] - a[i]).abs() > RESHAPE_THRESHOLD * a[i]) {
        return Decision::Replace;
    }
    Decision::Keep
}

/// Outcome of applying a report, as acknowledged to the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdateAction {
    Created,
    Kept,
    Replaced,
    Deleted,
}

impl fmt::Display for UpdateAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Created => "created",
            Self::Kept => "kept",
            Self::Replaced => "replaced",
            Self::Deleted => "deleted",
        })
    }
}

impl FromStr for UpdateAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "created" => Ok(Self::Created),
            "kept" => Ok(Self::Kept),
            "replaced" => Ok(Self::Replaced),
            "deleted" => Ok(Self::Deleted),
            _ => Err(format!("unknown action '{s}'")),
        }
    }
}

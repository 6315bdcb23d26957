//! Line protocol between agents and the registry.
//!
//! Every message is one line of space-separated tokens; the first token names the kind.
//! Floats are written in shortest round-trip decimal form.
//!
//! | kind      | fields |
//! |-----------|--------|
//! | `HELLO`   | `<version> [agent_id]` (agent sends its id, server answers without) |
//! | `REPORT`  | `<agent_id> <x> <y> <kind> <xmin> <ymin> <zmin> <xmax> <ymax> <zmax> <observed:0\|1> <timestamp> <descriptor>` |
//! | `QUERY`   | `<x> <y> <radius>` |
//! | `RECORDS` | `<n>`, followed by n `RECORD` lines |
//! | `RECORD`  | `<id> <x> <y> <kind> <bbox:6> <revision> <timestamp> <descriptor>` |
//! | `ALERT`   | `<id> <x> <y> <kind> <bbox:6> <revision>` |
//! | `ACK`     | `<id> <created\|kept\|replaced\|deleted>` |
//! | `ERR`     | free text |
//! | `BYE`     | (none) |
//!
//! `<descriptor>` is 13 fields: box dims (3), point count, mean depth, 8 histogram counts.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use roadscan_core::segmentation::{Aabb, Descriptor, ObstacleKind, HISTOGRAM_BINS};
use roadscan_core::Vec3;
use thiserror::Error;

use crate::record::{ObstacleRecord, Report, UpdateAction};

pub const PROTOCOL_VERSION: u32 = 1;

const DESCRIPTOR_FIELDS: usize = 5 + HISTOGRAM_BINS;
pub(crate) const REPORT_FIELDS: usize = 12 + DESCRIPTOR_FIELDS;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("empty line")]
    Empty,
    #[error("unknown message kind '{0}'")]
    UnknownKind(String),
    #[error("{kind} takes {expected} fields, got {found}")]
    Arity { kind: &'static str, expected: String, found: usize },
    #[error("bad {field} '{value}'")]
    Field { field: &'static str, value: String },
}

/// Pushed to agents near a created or replaced record.
#[derive(Debug, Clone, PartialEq)]
pub struct Alert {
    pub id: u64,
    pub position: [f64; 2],
    pub kind: ObstacleKind,
    pub bbox: Aabb,
    pub revision: u64,
}

impl From<&ObstacleRecord> for Alert {
    fn from(r: &ObstacleRecord) -> Self {
        Self { id: r.id, position: r.position, kind: r.kind, bbox: r.bbox, revision: r.revision }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { version: u32, agent_id: Option<String> },
    Report(Report),
    Query { position: [f64; 2], radius: f64 },
    Records(usize),
    Record(ObstacleRecord),
    Alert(Alert),
    Ack { id: u64, action: UpdateAction },
    Err(String),
    Bye,
}

struct Fields<'a> {
    tokens: std::slice::Iter<'a, &'a str>,
}

impl<'a> Fields<'a> {
    fn next<T: FromStr>(&mut self, field: &'static str) -> Result<T, ProtocolError> {
        let tok = self.tokens.next().copied().unwrap_or_default();
        tok.parse().map_err(|_| ProtocolError::Field { field, value: tok.to_string() })
    }

    fn vec3(&mut self, field: &'static str) -> Result<Vec3, ProtocolError> {
        Ok(Vec3::new(self.next(field)?, self.next(field)?, self.next(field)?))
    }

    fn bbox(&mut self) -> Result<Aabb, ProtocolError> {
        Ok(Aabb { min: self.vec3("bbox")?, max: self.vec3("bbox")? })
    }

    fn descriptor(&mut self) -> Result<Descriptor, ProtocolError> {
        let bbox_dims = self.vec3("descriptor dims")?;
        let point_count = self.next("point count")?;
        let mean_depth = self.next("mean depth")?;
        let mut saliency_histogram = [0; HISTOGRAM_BINS];
        for h in &mut saliency_histogram {
            *h = self.next("histogram count")?;
        }
        Ok(Descriptor { bbox_dims, point_count, mean_depth, saliency_histogram })
    }

    fn observed(&mut self) -> Result<bool, ProtocolError> {
        match self.tokens.next().copied() {
            Some("1") => Ok(true),
            Some("0") => Ok(false),
            other => Err(ProtocolError::Field { field: "observed flag", value: other.unwrap_or_default().into() }),
        }
    }
}

fn arity(kind: &'static str, args: &[&str], expected: usize) -> Result<(), ProtocolError> {
    if args.len() == expected {
        Ok(())
    } else {
        Err(ProtocolError::Arity { kind, expected: expected.to_string(), found: args.len() })
    }
}

/// Parses the report fields that follow the `REPORT` keyword (also used by the event log).
pub(crate) fn parse_report_fields(args: &[&str]) -> Result<Report, ProtocolError> {
    arity("REPORT", args, REPORT_FIELDS)?;
    let mut f = Fields { tokens: args.iter() };
    let agent_id: String = f.next("agent id")?;
    let position = [f.next("x")?, f.next("y")?];
    let kind = f.next("kind")?;
    let bbox = f.bbox()?;
    let observed = f.observed()?;
    let timestamp = f.next("timestamp")?;
    let descriptor = f.descriptor()?;
    Ok(Report { agent_id, position, bbox, descriptor, kind, timestamp, observed })
}

fn push_bbox(s: &mut String, b: &Aabb) {
    for v in b.min.iter().chain(b.max.iter()) {
        let _ = write!(s, " {v}");
    }
}

fn push_descriptor(s: &mut String, d: &Descriptor) {
    let _ = write!(s, " {} {} {} {} {}", d.bbox_dims.x, d.bbox_dims.y, d.bbox_dims.z, d.point_count, d.mean_depth);
    for h in d.saliency_histogram {
        let _ = write!(s, " {h}");
    }
}

pub(crate) fn format_report_fields(r: &Report) -> String {
    let mut s = format!("{} {} {} {}", r.agent_id, r.position[0], r.position[1], r.kind);
    push_bbox(&mut s, &r.bbox);
    let _ = write!(s, " {} {}", u8::from(r.observed), r.timestamp);
    push_descriptor(&mut s, &r.descriptor);
    s
}

impl Message {
    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let (&kind, args) = tokens.split_first().ok_or(ProtocolError::Empty)?;
        let mut f = Fields { tokens: args.iter() };
        Ok(match kind {
            "HELLO" => {
                if !(1..=2).contains(&args.len()) {
                    return Err(ProtocolError::Arity { kind: "HELLO", expected: "1 or 2".into(), found: args.len() });
                }
                Self::Hello { version: f.next("version")?, agent_id: args.get(1).map(|s| s.to_string()) }
            }
            "REPORT" => Self::Report(parse_report_fields(args)?),
            "QUERY" => {
                arity("QUERY", args, 3)?;
                Self::Query { position: [f.next("x")?, f.next("y")?], radius: f.next("radius")? }
            }
            "RECORDS" => {
                arity("RECORDS", args, 1)?;
                Self::Records(f.next("count")?)
            }
            "RECORD" => {
                arity("RECORD", args, 12 + DESCRIPTOR_FIELDS)?;
                Self::Record(ObstacleRecord {
                    id: f.next("id")?,
                    position: [f.next("x")?, f.next("y")?],
                    kind: f.next("kind")?,
                    bbox: f.bbox()?,
                    revision: f.next("revision")?,
                    timestamp: f.next("timestamp")?,
                    descriptor: f.descriptor()?,
                })
            }
            "ALERT" => {
                arity("ALERT", args, 11)?;
                Self::Alert(Alert {
                    id: f.next("id")?,
                    position: [f.next("x")?, f.next("y")?],
                    kind: f.next("kind")?,
                    bbox: f.bbox()?,
                    revision: f.next("revision")?,
                })
            }
            "ACK" => {
                arity("ACK", args, 2)?;
                Self::Ack { id: f.next("id")?, action: f.next("action")? }
            }
            "ERR" => Self::Err(args.join(" ")),
            "BYE" => {
                arity("BYE", args, 0)?;
                Self::Bye
            }
            other => return Err(ProtocolError::UnknownKind(other.to_string())),
        })
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hello { version, agent_id: Some(a) } => write!(f, "HELLO {version} {a}"),
            Self::Hello { version, agent_id: None } => write!(f, "HELLO {version}"),
            Self::Report(r) => write!(f, "REPORT {}", format_report_fields(r)),
            Self::Query { position, radius } => write!(f, "QUERY {} {} {radius}", position[0], position[1]),
            Self::Records(n) => write!(f, "RECORDS {n}"),
            Self::Record(r) => {
                let mut s = format!("RECORD {} {} {} {}", r.id, r.position[0], r.position[1], r.kind);
                push_bbox(&mut s, &r.bbox);
                let _ = write!(s, " {} {}", r.revision, r.timestamp);
                push_descriptor(&mut s, &r.descriptor);
                f.write_str(&s)
            }
            Self::Alert(a) => {
                let mut s = format!("ALERT {} {} {} {}", a.id, a.position[0], a.position[1], a.kind);
                push_bbox(&mut s, &a.bbox);
                let _ = write!(s, " {}", a.revision);
                f.write_str(&s)
            }
            Self::Ack { id, action } => write!(f, "ACK {id} {action}"),
            // keep the reply on one line
            Self::Err(text) => write!(f, "ERR {}", text.split_whitespace().collect::<Vec<_>>().join(" ")),
            Self::Bye => f.write_str("BYE"),
        }
    }
}

//! Registry contents, spatial index and the append-only event log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::protocol::{format_report_fields, parse_report_fields};
use crate::record::{decide_update, Decision, ObstacleRecord, Report, UpdateAction};

#[derive(Debug, Error)]
pub enum StateError {
    #[error("malformed report: {0}")]
    Invalid(String),
    #[error("no record to remove near ({0}, {1})")]
    NoMatch(f64, f64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("event log line {line}: {msg}")]
    Log { line: usize, msg: String },
    #[error("event {seq} does not replay: {msg}")]
    Replay { seq: u64, msg: String },
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistryConfig {
    /// Reports within this distance of a same-kind record refer to it.
    pub match_radius: f64,
    /// Agents within this distance of a created or replaced record are alerted.
    pub alert_radius: f64,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self { match_radius: 3.0, alert_radius: 150.0 }
    }
}

impl RegistryConfig {
    pub fn validate(&self) -> Result<(), StateError> {
        for (name, v) in [("match_radius", self.match_radius), ("alert_radius", self.alert_radius)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(StateError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One applied report.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub seq: u64,
    pub action: UpdateAction,
    pub id: u64,
    /// Revision after the event (of the removed record for deletions).
    pub revision: u64,
    pub report: Report,
}

impl Event {
    pub fn to_line(&self) -> String {
        format!("EVENT {} {} {} {} {}", self.seq, self.action, self.id, self.revision, format_report_fields(&self.report))
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 5 || tokens[0] != "EVENT" {
            return Err("expected 'EVENT <seq> <action> <id> <revision> <report>'".into());
        }
        let num = |i: usize, what: &str| tokens[i].parse::<u64>().map_err(|_| format!("bad {what} '{}'", tokens[i]));
        Ok(Self {
            seq: num(1, "sequence number")?,
            action: tokens[2].parse()?,
            id: num(3, "id")?,
            revision: num(4, "revision")?,
            report: parse_report_fields(&tokens[5..]).map_err(|e| e.to_string())?,
        })
    }
}

pub fn load_events(path: &Path) -> Result<Vec<Event>, StateError> {
    let file = File::open(path).map_err(|source| StateError::Io { path: path.into(), source })?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| StateError::Io { path: path.into(), source })?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        events.push(Event::parse(&line).map_err(|msg| StateError::Log { line: i + 1, msg })?);
    }
    Ok(events)
}

/// Appends event lines to a file, flushing after each one.
#[derive(Debug)]
pub struct EventLog {
    file: File,
    path: PathBuf,
}

impl EventLog {
    pub fn open(path: &Path) -> Result<Self, StateError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| StateError::Io { path: path.into(), source })?;
        Ok(Self { file, path: path.into() })
    }

    pub fn append(&mut self, event: &Event) -> Result<(), StateError> {
        writeln!(self.file, "{}", event.to_line())
            .and_then(|()| self.file.flush())
            .map_err(|source| StateError::Io { path: self.path.clone(), source })
    }
}

type Cell = (i64, i64);

/// Uniform grid over record positions.
#[derive(Debug, Clone, PartialEq)]
struct Grid {
    cell: f64,
    cells: BTreeMap<Cell, BTreeSet<u64>>,
}

impl Grid {
    fn key(&self, p: [f64; 2]) -> Cell {
        ((p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64)
    }

    fn insert(&mut self, id: u64, p: [f64; 2]) {
        let k = self.key(p);
        self.cells.entry(k).or_default().insert(id);
    }

    fn remove(&mut self, id: u64, p: [f64; 2]) {
        let k = self.key(p);
        if let Some(set) = self.cells.get_mut(&k) {
            set.remove(&id);
            if set.is_empty() {
                self.cells.remove(&k);
            }
        }
    }

    /// Ids in cells overlapping the square of half-side `r` around `p`.
    fn candidates(&self, p: [f64; 2], r: f64) -> Vec<u64> {
        let lo = self.key([p[0] - r, p[1] - r]);
        let hi = self.key([p[0] + r, p[1] + r]);
        let span = (hi.0 - lo.0 + 1) as f64 * (hi.1 - lo.1 + 1) as f64;
        let hit = |c: &Cell| lo.0 <= c.0 && c.0 <= hi.0 && lo.1 <= c.1 && c.1 <= hi.1;
        if span > self.cells.len() as f64 {
            self.cells.iter().filter(|(c, _)| hit(c)).flat_map(|(_, s)| s.iter().copied()).collect()
        } else {
            let mut out = Vec::new();
            for cx in lo.0..=hi.0 {
                for cy in lo.1..=hi.1 {
                    if let Some(s) = self.cells.get(&(cx, cy)) {
                        out.extend(s.iter().copied());
                    }
                }
            }
            out
        }
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Result of [`RegistryState::apply_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub action: UpdateAction,
    pub id: u64,
    /// The record after the update; for deletions, the removed record.
    pub record: ObstacleRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryState {
    config: RegistryConfig,
    records: BTreeMap<u64, ObstacleRecord>,
    index: Grid,
    log: Vec<Event>,
    next_id: u64,
}

impl RegistryState {
    pub fn new(config: RegistryConfig) -> Result<Self, StateError> {
        config.validate()?;
        let index = Grid { cell: config.match_radius, cells: BTreeMap::new() };
        Ok(Self { config, records: BTreeMap::new(), index, log: Vec::new(), next_id: 1 })
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&ObstacleRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &ObstacleRecord> {
        self.records.values()
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    /// Records within `radius` of `position` (inclusive), nearest first, ties by id.
    pub fn query_vicinity(&self, position: [f64; 2], radius: f64) -> Vec<&ObstacleRecord> {
        if !(radius >= 0.0) {
            return Vec::new();
        }
        let mut hits: Vec<(f64, &ObstacleRecord)> = self
            .index
            .candidates(position, radius)
            .into_iter()
            .map(|id| &self.records[&id])
            .map(|r| (distance(r.position, position), r))
            .filter(|(d, _)| *d <= radius)
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
        hits.into_iter().map(|(_, r)| r).collect()
    }

    /// Nearest record of the report's kind within `radius`, ties by smallest id.
    pub fn match_record(&self, report: &Report, radius: f64) -> Option<&ObstacleRecord> {
        self.query_vicinity(report.position, radius).into_iter().find(|r| r.kind == report.kind)
    }

    /// Applies one report and appends it to the in-memory log. Invalid reports leave the state
    /// untouched.
    pub fn apply_report(&mut self, report: &Report) -> Result<Applied, StateError> {
        report.validate().map_err(StateError::Invalid)?;
        let matched = self.match_record(report, self.config.match_radius).cloned();
        let (action, record) = match matched {
            None if !report.observed => return Err(StateError::NoMatch(report.position[0], report.position[1])),
            None => {
                let record = ObstacleRecord {
                    id: self.next_id,
                    position: report.position,
                    bbox: report.bbox,
                    descriptor: report.descriptor.clone(),
                    kind: report.kind,
                    timestamp: report.timestamp,
                    revision: 0,
                };
                self.next_id += 1;
                self.insert(record.clone());
                (UpdateAction::Created, record)
            }
            Some(old) => match decide_update(&old, report) {
                Decision::Keep => (UpdateAction::Kept, old),
                Decision::Delete => {
                    self.index.remove(old.id, old.position);
                    self.records.remove(&old.id);
                    (UpdateAction::Deleted, old)
                }
                Decision::Replace => {
                    self.index.remove(old.id, old.position);
                    let record = ObstacleRecord {
                        position: report.position,
                        bbox: report.bbox,
                        descriptor: report.descriptor.clone(),
                        timestamp: report.timestamp,
                        revision: old.revision + 1,
                        ..old
                    };
                    self.insert(record.clone());
                    (UpdateAction::Replaced, record)
                }
            },
        };
        self.log.push(Event {
            seq: self.log.len() as u64 + 1,
            action,
            id: record.id,
            revision: record.revision,
            report: report.clone(),
        });
        Ok(Applied { action, id: record.id, record })
    }

    fn insert(&mut self, record: ObstacleRecord) {
        self.index.insert(record.id, record.position);
        self.records.insert(record.id, record);
    }

    /// Rebuilds a state by re-applying logged reports, checking each outcome against the log.
    pub fn replay(config: RegistryConfig, events: &[Event]) -> Result<Self, StateError> {
        let mut state = Self::new(config)?;
        for ev in events {
            let expect_seq = state.log.len() as u64 + 1;
            if ev.seq != expect_seq {
                return Err(StateError::Replay { seq: ev.seq, msg: format!("expected sequence number {expect_seq}") });
            }
            let got = state
                .apply_report(&ev.report)
                .map_err(|e| StateError::Replay { seq: ev.seq, msg: e.to_string() })?;
            if (got.action, got.id, got.record.revision) != (ev.action, ev.id, ev.revision) {
                return Err(StateError::Replay {
                    seq: ev.seq,
                    msg: format!("got {} {} rev {}, logged {} {} rev {}", got.action, got.id, got.record.revision, ev.action, ev.id, ev.revision),
                });
            }
        }
        Ok(state)
    }

    /// True when the spatial index holds exactly the ids and positions of the records.
    pub fn index_consistent(&self) -> bool {
        let mut indexed = 0;
        for (cell, ids) in &self.index.cells {
            for id in ids {
                match self.records.get(id) {
                    Some(r) if self.index.key(r.position) == *cell => indexed += 1,
                    _ => return false,
                }
            }
        }
        indexed == self.records.len()
    }
}

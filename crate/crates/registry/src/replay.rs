//! Drives the detection pipeline over a sequence of frames and exchanges results with the
//! registry, recording which alerts arrived before the agent saw the obstacle itself.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use roadscan_core::pipeline::{detect, PipelineConfig};
use roadscan_core::segmentation::VehicleState;
use roadscan_core::PointCloud;

use crate::client::{Client, ClientError};
use crate::protocol::Alert;
use crate::record::{Report, UpdateAction};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOptions {
    pub pipeline: PipelineConfig,
    /// Radius of the per-frame QUERY around the vehicle.
    pub query_radius: f64,
    /// Timestamp of frame 0 and spacing between frames, seconds.
    pub start_time: f64,
    pub frame_interval: f64,
    /// Send observed=0 for known records that lie in the corridor but were not detected.
    pub report_absences: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            query_radius: 150.0,
            start_time: 0.0,
            frame_interval: 1.0,
            report_absences: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cloud: PointCloud,
    pub vehicle: VehicleState,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameOutcome {
    pub obstacles: usize,
    pub acks: Vec<(u64, UpdateAction)>,
    /// ERR replies to this frame's reports.
    pub rejected: Vec<String>,
    /// Pipeline failure on this frame, if any.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedAlert {
    pub frame: usize,
    pub alert: Alert,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyWarning {
    pub record_id: u64,
    pub alert_frame: usize,
    /// First frame in which this agent's own report matched the record, if ever.
    pub first_detection: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayReport {
    pub frames: Vec<FrameOutcome>,
    pub alerts: Vec<ReceivedAlert>,
    pub first_detection: BTreeMap<u64, usize>,
    pub early_warnings: Vec<EarlyWarning>,
    /// Set when the connection failed; the report then covers the frames before it.
    pub aborted: Option<String>,
}

impl ReplayReport {
    pub fn reports_sent(&self) -> usize {
        self.frames.iter().map(|f| f.acks.len() + f.rejected.len()).sum()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames {}", self.frames.len());
        let _ = writeln!(s, "reports {}", self.reports_sent());
        let _ = writeln!(s, "alerts {}", self.alerts.len());
        for w in &self.early_warnings {
            let seen = w.first_detection.map_or_else(|| "never".to_string(), |f| f.to_string());
            let _ = writeln!(s, "early_warning record {} alert_frame {} own_detection {seen}", w.record_id, w.alert_frame);
        }
        if let Some(e) = &self.aborted {
            let _ = writeln!(s, "aborted {e}");
        }
        s
    }

    fn finish(mut self) -> Self {
        let mut first_alert: BTreeMap<u64, usize> = BTreeMap::new();
        for a in &self.alerts {
            first_alert.entry(a.alert.id).or_insert(a.frame);
        }
        self.early_warnings = first_alert
            .into_iter()
            .map(|(record_id, alert_frame)| EarlyWarning {
                record_id,
                alert_frame,
                first_detection: self.first_detection.get(&record_id).copied(),
            })
            .filter(|w| w.first_detection.is_none_or(|d| w.alert_frame < d))
            .collect();
        self
    }
}

fn is_connection_error(e: &ClientError) -> bool {
    !matches!(e, ClientError::Rejected(_))
}

pub fn agent_replay(frames: &[Frame], client: &mut Client, options: &ReplayOptions) -> ReplayReport {
    let mut out = ReplayReport::default();
    for (i, frame) in frames.iter().enumerate() {
        let timestamp = options.start_time + i as f64 * options.frame_interval;
        let mut outcome = FrameOutcome::default();
        let result = replay_frame(frame, i, timestamp, client, options, &mut outcome, &mut out);
        out.alerts.extend(client.drain_alerts().into_iter().map(|alert| ReceivedAlert { frame: i, alert }));
        out.frames.push(outcome);
        if let Err(e) = result {
            out.aborted = Some(format!("frame {i}: {e}"));
            break;
        }
    }
    out.finish()
}

fn replay_frame(
    frame: &Frame,
    index: usize,
    timestamp: f64,
    client: &mut Client,
    options: &ReplayOptions,
    outcome: &mut FrameOutcome,
    out: &mut ReplayReport,
) -> Result<(), ClientError> {
    let here = [frame.vehicle.position.x, frame.vehicle.position.y];
    let known = client.query(here, options.query_radius)?;
    out.alerts.extend(client.drain_alerts().into_iter().map(|alert| ReceivedAlert { frame: index, alert }));

    let det = match detect(&frame.cloud, &frame.vehicle, &options.pipeline) {
        Ok(d) => d,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return Ok(());
        }
    };
    outcome.obstacles = det.obstacles.len();
    let agent_id = client.agent_id().to_string();
    let mut send = |report: Report, outcome: &mut FrameOutcome| -> Result<(), ClientError> {
        match client.report(&report) {
            Ok((id, action)) => {
                if report.observed {
                    out.first_detection.entry(id).or_insert(index);
                }
                outcome.acks.push((id, action));
                Ok(())
            }
            Err(e) if !is_connection_error(&e) => {
                outcome.rejected.push(e.to_string());
                Ok(())
            }
            Err(e) => Err(e),
        }
    };
    for ob in &det.obstacles {
        let report = Report {
            agent_id: agent_id.clone(),
            position: [ob.centroid.x, ob.centroid.y],
            bbox: ob.bbox,
            descriptor: ob.descriptor.clone(),
            kind: ob.kind,
            timestamp,
            observed: true,
        };
        send(report, outcome)?;
    }

    if options.report_absences {
        let (lo, hi) = frame.cloud.xy_bounds();
        let seen: Vec<u64> = outcome.acks.iter().map(|a| a.0).collect();
        for r in known {
            let (bmin, bmax) = (r.bbox.min, r.bbox.max);
            let covered = lo[0] <= bmin.x && lo[1] <= bmin.y && bmax.x <= hi[0] && bmax.y <= hi[1];
            if covered && det.corridor.contains(r.position[0], r.position[1]) && !seen.contains(&r.id) {
                let report = Report {
                    agent_id: agent_id.clone(),
                    position: r.position,
                    bbox: r.bbox,
                    descriptor: r.descriptor.clone(),
                    kind: r.kind,
                    timestamp,
                    observed: false,
                };
                send(report, outcome)?;
            }
        }
    }
    Ok(())
}

#![allow(dead_code)]

use roadscan_core::segmentation::{Aabb, Descriptor, ObstacleKind};
use roadscan_core::Vec3;
use roadscan_registry::Report;

pub fn descriptor(dx: f64, dy: f64) -> Descriptor {
    Descriptor {
        bbox_dims: Vec3::new(dx, dy, 0.1),
        point_count: 120,
        mean_depth: 0.05,
        saliency_histogram: [10, 20, 30, 20, 10, 10, 10, 10],
    }
}

/// An observed negative obstacle at (x, y) with a dx × dy footprint.
pub fn report(agent: &str, x: f64, y: f64, dx: f64, dy: f64) -> Report {
    Report {
        agent_id: agent.to_string(),
        position: [x, y],
        bbox: Aabb {
            min: Vec3::new(x - dx / 2.0, y - dy / 2.0, -0.1),
            max: Vec3::new(x + dx / 2.0, y + dy / 2.0, 0.0),
        },
        descriptor: descriptor(dx, dy),
        kind: ObstacleKind::Negative,
        timestamp: 1_700_000_000.0,
        observed: true,
    }
}

pub fn absent(agent: &str, x: f64, y: f64) -> Report {
    Report { observed: false, ..report(agent, x, y, 1.0, 1.0) }
}

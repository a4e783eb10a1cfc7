//! Run report and its CSV forms.
//!
//! `metrics.csv` has one row per store:
//!
//! | column | meaning |
//! |---|---|
//! | store_id | store |
//! | epochs_closed | store epochs that produced a telemetry update |
//! | epochs_complete | ... where both coordinators heard every node |
//! | epochs_timeout | ... where at least one coordinator hit its deadline |
//! | epochs_scored | closed epochs past warm-up, compared with ground truth |
//! | accuracy | share of scored epochs whose reported availability matched |
//! | latency_mean_ms, latency_p95_ms, latency_max_ms | slot change to datastore visibility |
//! | changes_visible | slot changes that reached the datastore |
//! | changes_superseded | changes reverted before they could be reported |
//! | changes_pending | changes still in flight at the end of the run |
//! | frames_sent, frames_delivered, frames_lost | node transmissions |
//! | late_frames, duplicate_frames | frames dropped by the coordinators |
//! | pushes_accepted, pushes_rejected | datastore writes |
//! | airtime_us | medium time spent on all hop transmissions |
//! | node_energy_mwh | sum over the store's nodes |
//! | coordinator_energy_mwh | both coordinators, always on |
//!
//! `nodes.csv` has one row per node: node_id, store_id, kind, hops,
//! frames_sent, frames_delivered, frames_lost, energy_mwh, occupancy_flips,
//! silenced.

use std::fmt::Write;

use crate::mesh::{NodeId, NodeKind};
use crate::sim::SimTime;

pub const STORE_CSV_HEADER: &str = "store_id,epochs_closed,epochs_complete,epochs_timeout,epochs_scored,accuracy,latency_mean_ms,latency_p95_ms,latency_max_ms,changes_visible,changes_superseded,changes_pending,frames_sent,frames_delivered,frames_lost,late_frames,duplicate_frames,pushes_accepted,pushes_rejected,airtime_us,node_energy_mwh,coordinator_energy_mwh";
pub const NODE_CSV_HEADER: &str =
    "node_id,store_id,kind,hops,frames_sent,frames_delivered,frames_lost,energy_mwh,occupancy_flips,silenced";

/// Latency samples in microseconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencyStats {
    samples: Vec<u64>,
}

impl LatencyStats {
    pub fn record(&mut self, latency: SimTime) {
        self.samples.push(latency.as_micros());
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_ms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<u64>() as f64 / self.samples.len() as f64 / 1e3
    }

    /// Nearest-rank percentile.
    pub fn percentile_ms(&self, p: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let mut sorted = self.samples.clone();
        sorted.sort_unstable();
        let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
        sorted[rank.min(sorted.len()) - 1] as f64 / 1e3
    }

    pub fn max_ms(&self) -> f64 {
        self.samples.iter().max().map_or(0.0, |m| *m as f64 / 1e3)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoreMetrics {
    pub store_id: u32,
    pub epochs_closed: u64,
    pub epochs_complete: u64,
    pub epochs_timeout: u64,
    pub epochs_scored: u64,
    pub epochs_accurate: u64,
    pub latency: LatencyStats,
    pub changes_superseded: u64,
    pub changes_pending: u64,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub frames_lost: u64,
    pub late_frames: u64,
    pub duplicate_frames: u64,
    pub pushes_accepted: u64,
    pub pushes_rejected: u64,
    pub airtime_us: u64,
    pub node_energy_mwh: f64,
    pub coordinator_energy_mwh: f64,
}

impl StoreMetrics {
    /// Scored epochs that matched ground truth; 1.0 when nothing was scored.
    pub fn accuracy(&self) -> f64 {
        if self.epochs_scored == 0 {
            1.0
        } else {
            self.epochs_accurate as f64 / self.epochs_scored as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMetrics {
    pub node_id: NodeId,
    pub store_id: u32,
    pub kind: NodeKind,
    pub hops: u32,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub frames_lost: u64,
    pub energy_nj: u64,
    pub occupancy_flips: u64,
    pub silenced: bool,
}

impl NodeMetrics {
    pub fn energy_mwh(&self) -> f64 {
        self.energy_nj as f64 / crate::node::NANOJOULES_PER_MWH
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub seed: u64,
    pub duration: SimTime,
    pub stores: Vec<StoreMetrics>,
    pub nodes: Vec<NodeMetrics>,
}

impl MetricsReport {
    pub fn store(&self, store_id: u32) -> Option<&StoreMetrics> {
        self.stores.iter().find(|s| s.store_id == store_id)
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeMetrics> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(STORE_CSV_HEADER);
        out.push('\n');
        for s in &self.stores {
            writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.3},{:.3},{:.3},{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6}",
                s.store_id,
                s.epochs_closed,
                s.epochs_complete,
                s.epochs_timeout,
                s.epochs_scored,
                s.accuracy(),
                s.latency.mean_ms(),
                s.latency.percentile_ms(95.0),
                s.latency.max_ms(),
                s.latency.len(),
                s.changes_superseded,
                s.changes_pending,
                s.frames_sent,
                s.frames_delivered,
                s.frames_lost,
                s.late_frames,
                s.duplicate_frames,
                s.pushes_accepted,
                s.pushes_rejected,
                s.airtime_us,
                s.node_energy_mwh,
                s.coordinator_energy_mwh,
            )
            .unwrap();
        }
        out
    }

    pub fn nodes_csv(&self) -> String {
        let mut out = String::from(NODE_CSV_HEADER);
        out.push('\n');
        for n in &self.nodes {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{:.6},{},{}",
                n.node_id,
                n.store_id,
                n.kind,
                n.hops,
                n.frames_sent,
                n.frames_delivered,
                n.frames_lost,
                n.energy_mwh(),
                n.occupancy_flips,
                n.silenced,
            )
            .unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "seed {} | {:.1} s simulated | {} nodes\n",
            self.seed,
            self.duration.as_secs_f64(),
            self.nodes.len()
        );
        for s in &self.stores {
            writeln!(
                out,
                "store {}: {} epochs ({} complete, {} timeout), accuracy {:.4}, latency mean {:.1} ms / p95 {:.1} ms / max {:.1} ms, frames {}/{} delivered, energy nodes {:.3} mWh coordinators {:.3} mWh",
                s.store_id,
                s.epochs_closed,
                s.epochs_complete,
                s.epochs_timeout,
                s.accuracy(),
                s.latency.mean_ms(),
                s.latency.percentile_ms(95.0),
                s.latency.max_ms(),
                s.frames_delivered,
                s.frames_sent,
                s.node_energy_mwh,
                s.coordinator_energy_mwh,
            )
            .unwrap();
        }
        out
    }

    /// Structural checks every run must satisfy; returns the violations.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for s in &self.stores {
            if s.frames_delivered + s.frames_lost != s.frames_sent {
                v.push(format!("store {}: delivered + lost != sent", s.store_id));
            }
            if s.frames_delivered > s.frames_sent {
                v.push(format!("store {}: delivered exceeds sent", s.store_id));
            }
            if !(0.0..=1.0).contains(&s.accuracy()) {
                v.push(format!("store {}: accuracy out of range", s.store_id));
            }
            if s.epochs_complete + s.epochs_timeout != s.epochs_closed {
                v.push(format!(
                    "store {}: epoch close reasons do not add up",
                    s.store_id
                ));
            }
        }
        let profile = crate::node::PowerProfile::default();
        for n in &self.nodes {
            if n.frames_delivered + n.frames_lost != n.frames_sent {
                v.push(format!("node {}: delivered + lost != sent", n.node_id));
            }
            let t = n.frames_sent * profile.report_period.as_micros();
            if n.energy_nj < profile.idle_mw * t || n.energy_nj > profile.active_mw() * t {
                v.push(format!(
                    "node {}: energy outside idle/active bounds",
                    n.node_id
                ));
            }
        }
        v
    }
}

//! Per-store aggregation.
//!
//! Each store runs two logical coordinators, one for parking nodes and one
//! for traffic nodes. A coordinator opens an epoch every report period and
//! closes it as soon as every registered node has reported, or at the
//! deadline. Nodes missing at close are filled from their last known value
//! and flagged stale; a node never heard from counts as occupied (parking)
//! or heavy (traffic). Once both halves of an epoch are closed the store
//! emits one [`TelemetryUpdate`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Frame, NodeId, NodeKind, Payload};
use crate::node::{Occupancy, TrafficLevel};
use crate::sim::SimTime;

pub const DEFAULT_EPOCH_TIMEOUT: SimTime = SimTime::from_millis(1000);
/// 802.11g uplink from the coordinator host to the access point.
pub const UPLINK_RATE_BPS: u64 = 54_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoordinatorError {
    #[error("frame for epoch {frame} offered to epoch {epoch}")]
    ForeignEpoch { frame: u64, epoch: u64 },
    #[error("node {0} is not registered with this coordinator")]
    UnknownNode(NodeId),
    #[error("{kind} frame offered to the {role} coordinator")]
    WrongKind { kind: NodeKind, role: NodeKind },
    #[error("epoch {0} is already closed")]
    AlreadyClosed(u64),
    #[error("epoch {0} is already open")]
    AlreadyOpen(u64),
    #[error("no traffic levels to aggregate")]
    NoTrafficNodes,
    #[error("epoch {epoch} cannot close before its deadline while nodes are missing")]
    Premature { epoch: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloseReason {
    Complete,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    Recorded,
    /// A second frame from the same node in the same epoch; the first wins.
    Duplicate,
    /// This frame completed the epoch.
    Complete,
}

/// One collection round of one logical coordinator.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochState {
    pub epoch_id: u64,
    pub opened_at: SimTime,
    pub deadline: SimTime,
    pub expected: BTreeSet<NodeId>,
    pub received: BTreeMap<NodeId, Payload>,
    closed: bool,
}

impl EpochState {
    pub fn open(
        epoch_id: u64,
        opened_at: SimTime,
        timeout: SimTime,
        expected: BTreeSet<NodeId>,
    ) -> Self {
        EpochState {
            epoch_id,
            opened_at,
            deadline: opened_at + timeout,
            expected,
            received: BTreeMap::new(),
            closed: false,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.received.len() == self.expected.len()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn ingest(&mut self, frame: &Frame) -> Result<Ingest, CoordinatorError> {
        if frame.epoch_id != self.epoch_id {
            return Err(CoordinatorError::ForeignEpoch {
                frame: frame.epoch_id,
                epoch: self.epoch_id,
            });
        }
        if self.closed {
            return Err(CoordinatorError::AlreadyClosed(self.epoch_id));
        }
        if !self.expected.contains(&frame.src) {
            return Err(CoordinatorError::UnknownNode(frame.src));
        }
        if self.received.contains_key(&frame.src) {
            return Ok(Ingest::Duplicate);
        }
        self.received.insert(frame.src, frame.payload);
        Ok(if self.is_complete() {
            Ingest::Complete
        } else {
            Ingest::Recorded
        })
    }
}

/// An epoch after close: every expected node mapped to the value used for
/// aggregation (`None` when the node has never been heard from).
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedEpoch {
    pub role: NodeKind,
    pub epoch_id: u64,
    pub opened_at: SimTime,
    pub closed_at: SimTime,
    pub reason: CloseReason,
    pub effective: BTreeMap<NodeId, Option<Payload>>,
    pub stale: BTreeSet<NodeId>,
}

/// Close `epoch` at `now`, filling missing nodes from `last_known`.
pub fn close_epoch(
    role: NodeKind,
    epoch: &mut EpochState,
    last_known: &BTreeMap<NodeId, (u64, Payload)>,
    now: SimTime,
) -> Result<ClosedEpoch, CoordinatorError> {
    if epoch.closed {
        return Err(CoordinatorError::AlreadyClosed(epoch.epoch_id));
    }
    let reason = if epoch.is_complete() {
        CloseReason::Complete
    } else if now >= epoch.deadline {
        CloseReason::Timeout
    } else {
        return Err(CoordinatorError::Premature {
            epoch: epoch.epoch_id,
        });
    };
    epoch.closed = true;
    let mut effective = BTreeMap::new();
    let mut stale = BTreeSet::new();
    for id in &epoch.expected {
        let value = match epoch.received.get(id) {
            Some(p) => Some(*p),
            None => {
                stale.insert(*id);
                last_known.get(id).map(|(_, p)| *p)
            }
        };
        effective.insert(*id, value);
    }
    Ok(ClosedEpoch {
        role,
        epoch_id: epoch.epoch_id,
        opened_at: epoch.opened_at,
        closed_at: now,
        reason,
        effective,
        stale,
    })
}

impl ClosedEpoch {
    /// Vacant slots and total slots. Unknown slots count as occupied.
    pub fn parking(&self) -> (u32, u32) {
        let available = self
            .effective
            .values()
            .filter(|v| matches!(v, Some(Payload::Occupancy(Occupancy::Vacant))))
            .count();
        (available as u32, self.effective.len() as u32)
    }

    /// Rounded mean level. Unknown nodes count as heavy.
    pub fn traffic(&self) -> Result<TrafficLevel, CoordinatorError> {
        let levels: Vec<TrafficLevel> = self
            .effective
            .values()
            .map(|v| match v {
                Some(Payload::Traffic(l)) => *l,
                _ => TrafficLevel::HEAVY,
            })
            .collect();
        aggregate_traffic(&levels)
    }
}

/// Arithmetic mean rounded half up, clamped to the level scale.
pub fn aggregate_traffic(levels: &[TrafficLevel]) -> Result<TrafficLevel, CoordinatorError> {
    if levels.is_empty() {
        return Err(CoordinatorError::NoTrafficNodes);
    }
    let n = levels.len() as u64;
    let sum: u64 = levels.iter().map(|l| u64::from(l.get())).sum();
    // floor(sum / n + 1/2) in integers
    let rounded = (2 * sum + n) / (2 * n);
    Ok(TrafficLevel::new(rounded.clamp(1, 3) as u8).expect("clamped into range"))
}

/// One logical coordinator (parking or traffic) with its open epochs.
#[derive(Debug, Clone)]
pub struct Aggregator {
    role: NodeKind,
    expected: BTreeSet<NodeId>,
    timeout: SimTime,
    open: BTreeMap<u64, EpochState>,
    last_known: BTreeMap<NodeId, (u64, Payload)>,
    newest_opened: Option<u64>,
    pub counters: FrameCounters,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FrameCounters {
    pub accepted: u64,
    pub duplicate: u64,
    pub late: u64,
    pub early: u64,
    pub unknown: u64,
}

impl Aggregator {
    pub fn new(role: NodeKind, expected: BTreeSet<NodeId>, timeout: SimTime) -> Self {
        Aggregator {
            role,
            expected,
            timeout,
            open: BTreeMap::new(),
            last_known: BTreeMap::new(),
            newest_opened: None,
            counters: FrameCounters::default(),
        }
    }

    pub fn role(&self) -> NodeKind {
        self.role
    }

    pub fn expected(&self) -> &BTreeSet<NodeId> {
        &self.expected
    }

    pub fn timeout(&self) -> SimTime {
        self.timeout
    }

    pub fn open_epochs(&self) -> impl Iterator<Item = &EpochState> {
        self.open.values()
    }

    pub fn last_known(&self) -> &BTreeMap<NodeId, (u64, Payload)> {
        &self.last_known
    }

    /// Open `epoch_id` at `now`. With no registered nodes the epoch is
    /// trivially complete and closes on the spot.
    pub fn open(
        &mut self,
        epoch_id: u64,
        now: SimTime,
    ) -> Result<Option<ClosedEpoch>, CoordinatorError> {
        if self.newest_opened.is_some_and(|e| epoch_id <= e) {
            return Err(CoordinatorError::AlreadyOpen(epoch_id));
        }
        self.newest_opened = Some(epoch_id);
        self.open.insert(
            epoch_id,
            EpochState::open(epoch_id, now, self.timeout, self.expected.clone()),
        );
        if self.expected.is_empty() {
            return self.close(epoch_id, now).map(Some);
        }
        Ok(None)
    }

    /// Route a frame to its epoch. Frames for epochs that are not open are
    /// counted and dropped.
    pub fn ingest(
        &mut self,
        frame: &Frame,
        now: SimTime,
    ) -> Result<Option<ClosedEpoch>, CoordinatorError> {
        if frame.kind() != self.role {
            return Err(CoordinatorError::WrongKind {
                kind: frame.kind(),
                role: self.role,
            });
        }
        let Some(epoch) = self.open.get_mut(&frame.epoch_id) else {
            if self.newest_opened.is_some_and(|e| frame.epoch_id <= e) {
                self.counters.late += 1;
            } else {
                self.counters.early += 1;
            }
            return Ok(None);
        };
        match epoch.ingest(frame) {
            Ok(Ingest::Recorded) => {
                self.counters.accepted += 1;
                Ok(None)
            }
            Ok(Ingest::Duplicate) => {
                self.counters.duplicate += 1;
                Ok(None)
            }
            Ok(Ingest::Complete) => {
                self.counters.accepted += 1;
                self.close(frame.epoch_id, now).map(Some)
            }
            Err(CoordinatorError::UnknownNode(_)) => {
                self.counters.unknown += 1;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    /// Deadline for `epoch_id` reached. No-op if it already closed.
    pub fn on_timeout(
        &mut self,
        epoch_id: u64,
        now: SimTime,
    ) -> Result<Option<ClosedEpoch>, CoordinatorError> {
        match self.open.get(&epoch_id) {
            Some(epoch) if now >= epoch.deadline => self.close(epoch_id, now).map(Some),
            Some(_) => Err(CoordinatorError::Premature { epoch: epoch_id }),
            None => Ok(None),
        }
    }

    fn close(&mut self, epoch_id: u64, now: SimTime) -> Result<ClosedEpoch, CoordinatorError> {
        let mut epoch = self
            .open
            .remove(&epoch_id)
            .ok_or(CoordinatorError::AlreadyClosed(epoch_id))?;
        let closed = close_epoch(self.role, &mut epoch, &self.last_known, now)?;
        for (id, payload) in &epoch.received {
            let newer = self
                .last_known
                .get(id)
                .is_none_or(|(seen, _)| *seen < epoch_id);
            if newer {
                self.last_known.insert(*id, (epoch_id, *payload));
            }
        }
        Ok(closed)
    }
}

/// Store-level aggregate written to the datastore once per epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryUpdate {
    pub store_id: u32,
    pub epoch_id: u64,
    pub parking_available: u32,
    pub parking_total: u32,
    pub avg_traffic: TrafficLevel,
    #[serde(default)]
    pub stale_nodes: BTreeSet<NodeId>,
    /// Simulated emission time in microseconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emitted_at: Option<u64>,
}

impl TelemetryUpdate {
    pub fn is_well_formed(&self) -> bool {
        self.parking_available <= self.parking_total
    }

    /// Same reading, ignoring emission time.
    pub fn same_content(&self, other: &TelemetryUpdate) -> bool {
        self.store_id == other.store_id
            && self.epoch_id == other.epoch_id
            && self.parking_available == other.parking_available
            && self.parking_total == other.parking_total
            && self.avg_traffic == other.avg_traffic
            && self.stale_nodes == other.stale_nodes
    }
}

/// Time to move `payload_bytes` over the coordinator's uplink, rounded to
/// the nearest microsecond.
pub fn uplink_latency(payload_bytes: usize, rate_bps: u64) -> SimTime {
    let bits_us = payload_bytes as u128 * 8 * 1_000_000;
    let rate = u128::from(rate_bps.max(1));
    SimTime::from_micros(((bits_us + rate / 2) / rate) as u64)
}

/// Electrical draw of one coordinator. It never sleeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoordinatorPower {
    pub host_mw: u64,
    pub radio_mw: u64,
}

impl Default for CoordinatorPower {
    fn default() -> Self {
        CoordinatorPower {
            host_mw: 10_000,
            radio_mw: 132,
        }
    }
}

impl CoordinatorPower {
    pub fn total_mw(&self) -> u64 {
        self.host_mw + self.radio_mw
    }

    pub fn energy_nj(&self, over: SimTime) -> u64 {
        self.total_mw() * over.as_micros()
    }
}

#[derive(Debug, Default)]
struct PendingHalf {
    parking: Option<ClosedEpoch>,
    traffic: Option<ClosedEpoch>,
}

/// The pair of logical coordinators serving one store.
#[derive(Debug)]
pub struct StoreCoordinator {
    pub store_id: u32,
    pub parking: Aggregator,
    pub traffic: Aggregator,
    pending: BTreeMap<u64, PendingHalf>,
    emitted: BTreeSet<u64>,
}

/// A finished store epoch: the update plus the closed halves it came from.
#[derive(Debug, Clone)]
pub struct StoreEpoch {
    pub update: TelemetryUpdate,
    pub parking: ClosedEpoch,
    pub traffic: ClosedEpoch,
}

impl StoreCoordinator {
    pub fn new(
        store_id: u32,
        parking_nodes: BTreeSet<NodeId>,
        traffic_nodes: BTreeSet<NodeId>,
        timeout: SimTime,
    ) -> Result<Self, CoordinatorError> {
        if traffic_nodes.is_empty() {
            return Err(CoordinatorError::NoTrafficNodes);
        }
        Ok(StoreCoordinator {
            store_id,
            parking: Aggregator::new(NodeKind::Parking, parking_nodes, timeout),
            traffic: Aggregator::new(NodeKind::Traffic, traffic_nodes, timeout),
            pending: BTreeMap::new(),
            emitted: BTreeSet::new(),
        })
    }

    fn aggregator(&mut self, role: NodeKind) -> &mut Aggregator {
        match role {
            NodeKind::Parking => &mut self.parking,
            NodeKind::Traffic => &mut self.traffic,
        }
    }

    pub fn open(
        &mut self,
        epoch_id: u64,
        now: SimTime,
    ) -> Result<Vec<StoreEpoch>, CoordinatorError> {
        let mut done = Vec::new();
        for role in [NodeKind::Parking, NodeKind::Traffic] {
            if let Some(closed) = self.aggregator(role).open(epoch_id, now)? {
                done.extend(self.absorb(closed)?);
            }
        }
        Ok(done)
    }

    pub fn ingest(
        &mut self,
        frame: &Frame,
        now: SimTime,
    ) -> Result<Option<StoreEpoch>, CoordinatorError> {
        match self.aggregator(frame.kind()).ingest(frame, now)? {
            Some(closed) => self.absorb(closed),
            None => Ok(None),
        }
    }

    pub fn on_timeout(
        &mut self,
        role: NodeKind,
        epoch_id: u64,
        now: SimTime,
    ) -> Result<Option<StoreEpoch>, CoordinatorError> {
        match self.aggregator(role).on_timeout(epoch_id, now)? {
            Some(closed) => self.absorb(closed),
            None => Ok(None),
        }
    }

    fn absorb(&mut self, closed: ClosedEpoch) -> Result<Option<StoreEpoch>, CoordinatorError> {
        let epoch_id = closed.epoch_id;
        if self.emitted.contains(&epoch_id) {
            return Err(CoordinatorError::AlreadyClosed(epoch_id));
        }
        let half = self.pending.entry(epoch_id).or_default();
        match closed.role {
            NodeKind::Parking => half.parking = Some(closed),
            NodeKind::Traffic => half.traffic = Some(closed),
        }
        if half.parking.is_none() || half.traffic.is_none() {
            return Ok(None);
        }
        let half = self.pending.remove(&epoch_id).expect("present");
        let (parking, traffic) = (half.parking.unwrap(), half.traffic.unwrap());
        let (available, total) = parking.parking();
        let update = TelemetryUpdate {
            store_id: self.store_id,
            epoch_id,
            parking_available: available,
            parking_total: total,
            avg_traffic: traffic.traffic()?,
            stale_nodes: parking.stale.union(&traffic.stale).copied().collect(),
            emitted_at: Some(parking.closed_at.max(traffic.closed_at).as_micros()),
        };
        self.emitted.insert(epoch_id);
        Ok(Some(StoreEpoch {
            update,
            parking,
            traffic,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> BTreeSet<NodeId> {
        v.iter().map(|i| NodeId(*i)).collect()
    }

    fn occ(src: u32, epoch: u64, o: Occupancy) -> Frame {
        Frame {
            src: NodeId(src),
            seq: epoch as u32,
            epoch_id: epoch,
            payload: Payload::Occupancy(o),
        }
    }

    fn lvl(src: u32, epoch: u64, l: u8) -> Frame {
        Frame {
            src: NodeId(src),
            seq: epoch as u32,
            epoch_id: epoch,
            payload: Payload::Traffic(TrafficLevel::new(l).unwrap()),
        }
    }

    fn levels(v: &[u8]) -> Vec<TrafficLevel> {
        v.iter().map(|l| TrafficLevel::new(*l).unwrap()).collect()
    }

    #[test]
    fn third_frame_closes_early() {
        let mut a = Aggregator::new(NodeKind::Parking, ids(&[1, 2, 3]), DEFAULT_EPOCH_TIMEOUT);
        let t0 = SimTime::from_millis(500);
        a.open(1, t0).unwrap();
        assert!(a
            .ingest(&occ(1, 1, Occupancy::Occupied), t0)
            .unwrap()
            .is_none());
        assert!(a
            .ingest(&occ(2, 1, Occupancy::Vacant), t0)
            .unwrap()
            .is_none());
        let closed = a
            .ingest(&occ(3, 1, Occupancy::Vacant), SimTime::from_micros(500_672))
            .unwrap()
            .expect("complete");
        assert_eq!(closed.reason, CloseReason::Complete);
        assert!(closed.closed_at < t0 + DEFAULT_EPOCH_TIMEOUT);
        // Reference store 1: 3 slots, 2 available.
        assert_eq!(closed.parking(), (2, 3));
        assert!(closed.stale.is_empty());
        // The deadline then finds nothing to do.
        assert_eq!(a.on_timeout(1, t0 + DEFAULT_EPOCH_TIMEOUT), Ok(None));
    }

    #[test]
    fn duplicate_frame_is_ignored() {
        let mut e = EpochState::open(4, SimTime::ZERO, DEFAULT_EPOCH_TIMEOUT, ids(&[7, 8]));
        assert_eq!(
            e.ingest(&occ(7, 4, Occupancy::Vacant)),
            Ok(Ingest::Recorded)
        );
        assert_eq!(
            e.ingest(&occ(7, 4, Occupancy::Occupied)),
            Ok(Ingest::Duplicate)
        );
        assert_eq!(e.received.len(), 1);
        assert_eq!(
            e.received[&NodeId(7)],
            Payload::Occupancy(Occupancy::Vacant),
            "first copy wins"
        );
        assert_eq!(
            e.ingest(&occ(7, 3, Occupancy::Vacant)),
            Err(CoordinatorError::ForeignEpoch { frame: 3, epoch: 4 })
        );
        assert_eq!(
            e.ingest(&occ(9, 4, Occupancy::Vacant)),
            Err(CoordinatorError::UnknownNode(NodeId(9)))
        );
    }

    #[test]
    fn delayed_frame_for_previous_epoch_counts_as_late() {
        let mut a = Aggregator::new(NodeKind::Parking, ids(&[1, 2]), DEFAULT_EPOCH_TIMEOUT);
        let p = SimTime::from_millis(500);
        a.open(1, p).unwrap();
        a.ingest(&occ(1, 1, Occupancy::Vacant), p).unwrap();
        // Node 2's frame for epoch 1 is held up past the deadline.
        let closed = a.on_timeout(1, p + DEFAULT_EPOCH_TIMEOUT).unwrap().unwrap();
        assert_eq!(closed.reason, CloseReason::Timeout);
        a.open(2, p + p).unwrap();
        a.open(3, p + p + p).unwrap();
        a.ingest(&occ(2, 1, Occupancy::Vacant), p + p + p).unwrap();
        assert_eq!(a.counters.late, 1);
        a.ingest(&occ(2, 9, Occupancy::Vacant), p + p + p).unwrap();
        assert_eq!(a.counters.early, 1);
        assert_eq!(a.counters.accepted, 1);
    }

    #[test]
    fn silenced_node_uses_last_known_value() {
        let mut a = Aggregator::new(NodeKind::Parking, ids(&[1, 2, 3]), DEFAULT_EPOCH_TIMEOUT);
        let p = SimTime::from_millis(500);
        // Epoch 1: everyone reports; node 3 is vacant.
        a.open(1, p).unwrap();
        a.ingest(&occ(1, 1, Occupancy::Occupied), p).unwrap();
        a.ingest(&occ(2, 1, Occupancy::Vacant), p).unwrap();
        let first = a.ingest(&occ(3, 1, Occupancy::Vacant), p).unwrap().unwrap();
        assert_eq!(first.parking(), (2, 3));
        // Epoch 2: node 3 goes silent.
        a.open(2, p + p).unwrap();
        a.ingest(&occ(1, 2, Occupancy::Occupied), p + p).unwrap();
        a.ingest(&occ(2, 2, Occupancy::Vacant), p + p).unwrap();
        assert_eq!(
            a.on_timeout(2, p + p + SimTime::from_millis(999)),
            Err(CoordinatorError::Premature { epoch: 2 })
        );
        let second = a
            .on_timeout(2, p + p + DEFAULT_EPOCH_TIMEOUT)
            .unwrap()
            .unwrap();
        assert_eq!(second.closed_at, second.opened_at + DEFAULT_EPOCH_TIMEOUT);
        assert_eq!(second.parking(), (2, 3));
        assert_eq!(second.stale, ids(&[3]));
    }

    #[test]
    fn never_seen_node_counts_as_occupied() {
        let mut a = Aggregator::new(NodeKind::Parking, ids(&[1, 2]), DEFAULT_EPOCH_TIMEOUT);
        a.open(1, SimTime::ZERO).unwrap();
        a.ingest(&occ(1, 1, Occupancy::Vacant), SimTime::ZERO)
            .unwrap();
        let closed = a.on_timeout(1, DEFAULT_EPOCH_TIMEOUT).unwrap().unwrap();
        assert_eq!(closed.parking(), (1, 2));
        assert_eq!(closed.effective[&NodeId(2)], None);
    }

    #[test]
    fn traffic_rounding() {
        assert_eq!(
            aggregate_traffic(&levels(&[3, 3, 3, 3])),
            Ok(TrafficLevel::HEAVY)
        );
        assert_eq!(aggregate_traffic(&levels(&[2])), Ok(TrafficLevel::MODERATE));
        assert_eq!(
            aggregate_traffic(&levels(&[1, 2])),
            Ok(TrafficLevel::MODERATE)
        );
        assert_eq!(
            aggregate_traffic(&levels(&[1, 1, 2])),
            Ok(TrafficLevel::LIGHT)
        );
        assert_eq!(aggregate_traffic(&levels(&[2, 3])), Ok(TrafficLevel::HEAVY));
        assert_eq!(
            aggregate_traffic(&[]),
            Err(CoordinatorError::NoTrafficNodes)
        );
    }

    #[test]
    fn store_update_waits_for_both_halves() {
        let mut s =
            StoreCoordinator::new(1, ids(&[1, 2, 3]), ids(&[10]), DEFAULT_EPOCH_TIMEOUT).unwrap();
        let t = SimTime::from_millis(500);
        assert!(s.open(1, t).unwrap().is_empty());
        assert!(s.ingest(&lvl(10, 1, 2), t).unwrap().is_none());
        s.ingest(&occ(1, 1, Occupancy::Occupied), t).unwrap();
        s.ingest(&occ(2, 1, Occupancy::Vacant), t).unwrap();
        let done = s.ingest(&occ(3, 1, Occupancy::Vacant), t).unwrap().unwrap();
        assert_eq!(
            done.update,
            TelemetryUpdate {
                store_id: 1,
                epoch_id: 1,
                parking_available: 2,
                parking_total: 3,
                avg_traffic: TrafficLevel::MODERATE,
                stale_nodes: BTreeSet::new(),
                emitted_at: Some(500_000),
            }
        );
        assert!(done.update.is_well_formed());
        assert!(
            StoreCoordinator::new(2, ids(&[1]), BTreeSet::new(), DEFAULT_EPOCH_TIMEOUT).is_err()
        );
    }

    #[test]
    fn epoch_closes_exactly_once() {
        let mut e = EpochState::open(1, SimTime::ZERO, DEFAULT_EPOCH_TIMEOUT, ids(&[1]));
        e.ingest(&occ(1, 1, Occupancy::Vacant)).unwrap();
        close_epoch(NodeKind::Parking, &mut e, &BTreeMap::new(), SimTime::ZERO).unwrap();
        assert_eq!(
            close_epoch(NodeKind::Parking, &mut e, &BTreeMap::new(), SimTime::ZERO),
            Err(CoordinatorError::AlreadyClosed(1))
        );
        assert_eq!(
            e.ingest(&occ(1, 1, Occupancy::Vacant)),
            Err(CoordinatorError::AlreadyClosed(1))
        );
    }

    #[test]
    fn uplink_and_power() {
        assert_eq!(
            uplink_latency(200, UPLINK_RATE_BPS),
            SimTime::from_micros(30)
        );
        let p = CoordinatorPower::default();
        assert_eq!(p.total_mw(), 10_132);
        assert_eq!(p.energy_nj(SimTime::from_secs(1)), 10_132_000_000);
    }

    #[test]
    fn telemetry_json_shape() {
        let body = r#"{"store_id":1,"epoch_id":4,"parking_available":2,"parking_total":3,"avg_traffic":2,"stale_nodes":[7]}"#;
        let u: TelemetryUpdate = serde_json::from_str(body).unwrap();
        assert_eq!(u.stale_nodes, ids(&[7]));
        assert_eq!(serde_json::to_string(&u).unwrap(), body);
        let bad = r#"{"store_id":1,"epoch_id":4,"parking_available":2,"parking_total":3,"avg_traffic":4}"#;
        assert!(serde_json::from_str::<TelemetryUpdate>(bad).is_err());
    }
}

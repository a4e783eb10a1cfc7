//! Low-rate mesh link layer: fixed-size status frames, airtime, range-gated
//! links and min-hop routing toward a coordinator.
//!
//! Medium access is treated as collision-free; a hop either delivers or
//! loses a frame according to the link's loss probability for that distance.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{Occupancy, TrafficLevel};
use crate::sim::SimTime;

/// Every frame occupies this many bytes on air, whatever its payload.
pub const FRAME_WIRE_SIZE: usize = 21;
pub const DEFAULT_DATA_RATE_BPS: u64 = 250_000;
/// 400 ft.
pub const DEFAULT_MAX_RANGE_M: f64 = 121.92;

const FRAME_VERSION: u8 = 1;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Parking,
    Traffic,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Parking => "parking",
            NodeKind::Traffic => "traffic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Occupancy(Occupancy),
    Traffic(TrafficLevel),
}

impl Payload {
    pub fn kind(self) -> NodeKind {
        match self {
            Payload::Occupancy(_) => NodeKind::Parking,
            Payload::Traffic(_) => NodeKind::Traffic,
        }
    }
}

/// One node's status for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub src: NodeId,
    pub seq: u32,
    pub epoch_id: u64,
    pub payload: Payload,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame must be {FRAME_WIRE_SIZE} bytes, got {0}")]
    Length(usize),
    #[error("unsupported frame version {0}")]
    Version(u8),
    #[error("checksum mismatch")]
    Checksum,
    #[error("invalid payload byte {value:#04x} for {kind} frame")]
    Payload { kind: u8, value: u8 },
}

impl Frame {
    pub fn kind(&self) -> NodeKind {
        self.payload.kind()
    }

    pub const fn wire_size(&self) -> usize {
        FRAME_WIRE_SIZE
    }

    /// Layout: version, kind, src (u32 BE), seq (u32 BE), epoch (u64 BE),
    /// payload byte, 16-bit additive checksum of the preceding 19 bytes.
    pub fn encode(&self) -> [u8; FRAME_WIRE_SIZE] {
        let mut buf = [0u8; FRAME_WIRE_SIZE];
        buf[0] = FRAME_VERSION;
        let (kind, value) = match self.payload {
            Payload::Occupancy(Occupancy::Vacant) => (0, 0),
            Payload::Occupancy(Occupancy::Occupied) => (0, 1),
            Payload::Traffic(level) => (1, level.get()),
        };
        buf[1] = kind;
        buf[2..6].copy_from_slice(&self.src.0.to_be_bytes());
        buf[6..10].copy_from_slice(&self.seq.to_be_bytes());
        buf[10..18].copy_from_slice(&self.epoch_id.to_be_bytes());
        buf[18] = value;
        let sum = checksum(&buf[..19]);
        buf[19..21].copy_from_slice(&sum.to_be_bytes());
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, FrameError> {
        if bytes.len() != FRAME_WIRE_SIZE {
            return Err(FrameError::Length(bytes.len()));
        }
        if bytes[0] != FRAME_VERSION {
            return Err(FrameError::Version(bytes[0]));
        }
        if checksum(&bytes[..19]).to_be_bytes() != bytes[19..21] {
            return Err(FrameError::Checksum);
        }
        let value = bytes[18];
        let payload = match (bytes[1], value) {
            (0, 0) => Payload::Occupancy(Occupancy::Vacant),
            (0, 1) => Payload::Occupancy(Occupancy::Occupied),
            (1, v) => Payload::Traffic(
                TrafficLevel::new(v).map_err(|_| FrameError::Payload { kind: 1, value: v })?,
            ),
            (kind, value) => return Err(FrameError::Payload { kind, value }),
        };
        let word = |r: std::ops::Range<usize>| -> [u8; 4] { bytes[r].try_into().unwrap() };
        Ok(Frame {
            src: NodeId(u32::from_be_bytes(word(2..6))),
            seq: u32::from_be_bytes(word(6..10)),
            epoch_id: u64::from_be_bytes(bytes[10..18].try_into().unwrap()),
            payload,
        })
    }
}

fn checksum(bytes: &[u8]) -> u16 {
    bytes.iter().fold(0u16, |acc, b| {
        acc.rotate_left(1).wrapping_add(u16::from(*b))
    })
}

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("data rate must be positive")]
    ZeroRate,
    #[error("{name} must be a probability in [0, 1], got {value}")]
    Probability { name: &'static str, value: f64 },
    #[error("max range must be positive and finite, got {0}")]
    Range(f64),
    #[error("node {0} is not part of the topology")]
    UnknownNode(NodeId),
    #[error("node {0} has no path to the coordinator")]
    Unreachable(NodeId),
    #[error("position for node {0} is not finite")]
    Position(NodeId),
}

/// On-air duration of `frame_bytes` at `data_rate_bps`, rounded to the
/// nearest microsecond.
pub fn airtime(frame_bytes: usize, data_rate_bps: u64) -> Result<SimTime, MeshError> {
    if data_rate_bps == 0 {
        return Err(MeshError::ZeroRate);
    }
    let bits_us = frame_bytes as u128 * 8 * 1_000_000;
    let rate = u128::from(data_rate_bps);
    Ok(SimTime::from_micros(((bits_us + rate / 2) / rate) as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkModel {
    pub data_rate_bps: u64,
    pub max_range_m: f64,
    pub loss_within_range: f64,
    pub loss_beyond_range: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            data_rate_bps: DEFAULT_DATA_RATE_BPS,
            max_range_m: DEFAULT_MAX_RANGE_M,
            loss_within_range: 0.0,
            loss_beyond_range: 1.0,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), MeshError> {
        if self.data_rate_bps == 0 {
            return Err(MeshError::ZeroRate);
        }
        if !(self.max_range_m.is_finite() && self.max_range_m > 0.0) {
            return Err(MeshError::Range(self.max_range_m));
        }
        for (name, value) in [
            ("loss_within_range", self.loss_within_range),
            ("loss_beyond_range", self.loss_beyond_range),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(MeshError::Probability { name, value });
            }
        }
        // Delivery beyond range is never possible, whatever the override says.
        if self.loss_beyond_range != 1.0 {
            return Err(MeshError::Probability {
                name: "loss_beyond_range",
                value: self.loss_beyond_range,
            });
        }
        Ok(())
    }

    pub fn frame_airtime(&self) -> SimTime {
        airtime(FRAME_WIRE_SIZE, self.data_rate_bps).expect("validated link has nonzero rate")
    }

    pub fn in_range(&self, a: Position, b: Position) -> bool {
        a.distance(b) <= self.max_range_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Node placement around one coordinator. Adjacency is implied by range.
#[derive(Debug, Clone)]
pub struct Topology {
    coordinator: Position,
    nodes: BTreeMap<NodeId, Position>,
    max_range_m: f64,
}

/// Transmitting nodes from source to the last relay; the final hop always
/// lands on the coordinator. `hops() == path.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub path: Vec<NodeId>,
}

impl Route {
    pub fn hops(&self) -> u32 {
        self.path.len() as u32
    }

    pub fn src(&self) -> NodeId {
        self.path[0]
    }
}

impl Topology {
    pub fn new(coordinator: Position, max_range_m: f64) -> Self {
        Topology {
            coordinator,
            nodes: BTreeMap::new(),
            max_range_m,
        }
    }

    pub fn insert(&mut self, id: NodeId, at: Position) -> Result<(), MeshError> {
        if !at.is_finite() {
            return Err(MeshError::Position(id));
        }
        self.nodes.insert(id, at);
        Ok(())
    }

    pub fn coordinator(&self) -> Position {
        self.coordinator
    }

    pub fn position(&self, id: NodeId) -> Option<Position> {
        self.nodes.get(&id).copied()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn linked(&self, a: Position, b: Position) -> bool {
        a.distance(b) <= self.max_range_m
    }

    /// Neighbouring nodes of `id`, ascending by id.
    pub fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        let Some(at) = self.position(id) else {
            return Vec::new();
        };
        self.nodes
            .iter()
            .filter(|(other, pos)| **other != id && self.linked(at, **pos))
            .map(|(other, _)| *other)
            .collect()
    }

    pub fn reaches_coordinator(&self, id: NodeId) -> bool {
        self.position(id)
            .is_some_and(|at| self.linked(at, self.coordinator))
    }

    /// Hop count from every reachable node to the coordinator.
    fn hop_counts(&self) -> BTreeMap<NodeId, u32> {
        let mut dist = BTreeMap::new();
        let mut frontier = VecDeque::new();
        for id in self.nodes.keys() {
            if self.reaches_coordinator(*id) {
                dist.insert(*id, 1);
                frontier.push_back(*id);
            }
        }
        while let Some(id) = frontier.pop_front() {
            let d = dist[&id];
            for n in self.neighbors(id) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(n) {
                    e.insert(d + 1);
                    frontier.push_back(n);
                }
            }
        }
        dist
    }

    /// Minimum-hop route from `src`; among equally short continuations each
    /// step takes the lowest-id neighbour.
    pub fn route(&self, src: NodeId) -> Result<Route, MeshError> {
        if !self.nodes.contains_key(&src) {
            return Err(MeshError::UnknownNode(src));
        }
        self.route_with(src, &self.hop_counts())
    }

    fn route_with(&self, src: NodeId, dist: &BTreeMap<NodeId, u32>) -> Result<Route, MeshError> {
        let mut d = *dist.get(&src).ok_or(MeshError::Unreachable(src))?;
        let mut path = vec![src];
        let mut cur = src;
        while d > 1 {
            cur = self
                .neighbors(cur)
                .into_iter()
                .find(|n| dist.get(n) == Some(&(d - 1)))
                .expect("BFS layering guarantees a closer neighbour");
            path.push(cur);
            d -= 1;
        }
        Ok(Route { path })
    }

    /// Routes for all nodes; fails on the first (lowest-id) unreachable node.
    pub fn routes(&self) -> Result<BTreeMap<NodeId, Route>, MeshError> {
        let dist = self.hop_counts();
        self.nodes
            .keys()
            .map(|id| Ok((*id, self.route_with(*id, &dist)?)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Delivered,
    /// 1-based index of the hop on which the frame was dropped.
    LostAtHop(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub outcome: Delivery,
    /// Medium time spent across every hop actually attempted.
    pub airtime: SimTime,
}

impl Transmission {
    pub fn delivered(&self) -> bool {
        self.outcome == Delivery::Delivered
    }
}

/// Forward `frame` along `route`, drawing one loss trial per hop.
pub fn transmit<R: Rng + ?Sized>(
    frame: &Frame,
    route: &Route,
    link: &LinkModel,
    rng: &mut R,
) -> Transmission {
    let per_hop = airtime(frame.wire_size(), link.data_rate_bps).expect("link rate is nonzero");
    let mut spent = SimTime::ZERO;
    for hop in 1..=route.hops() {
        spent = spent + per_hop;
        let lost = match link.loss_within_range {
            p if p <= 0.0 => false,
            p if p >= 1.0 => true,
            p => rng.random_bool(p),
        };
        if lost {
            return Transmission {
                outcome: Delivery::LostAtHop(hop),
                airtime: spent,
            };
        }
    }
    Transmission {
        outcome: Delivery::Delivered,
        airtime: spent,
    }
}

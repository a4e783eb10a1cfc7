//! Field node behaviour: parking-slot occupancy nodes and roadside traffic
//! counters, each reporting once per period and accounting its energy.
//!
//! Energy is accumulated as integer nanojoules (mW x us) so long runs do not
//! drift; it is converted to mWh only for reporting.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Frame, NodeId, Payload, Position};
use crate::sim::SimTime;

pub const NANOJOULES_PER_MWH: f64 = 3.6e9;
pub const DEFAULT_OCCUPIED_THRESHOLD_M: f64 = 1.0;
pub const DEFAULT_SENSOR_NOISE_M: f64 = 0.05;
pub const DEFAULT_DEBOUNCE_DEPTH: u32 = 2;
pub const DEFAULT_TRAFFIC_WINDOW: SimTime = SimTime::from_secs(60);

#[derive(Debug, Error, PartialEq)]
pub enum NodeError {
    #[error("distance reading must be non-negative, got {0} m")]
    NegativeReading(f64),
    #[error("passage rate must be non-negative, got {0}/min")]
    NegativeRate(f64),
    #[error("traffic level must be 1, 2 or 3, got {0}")]
    TrafficLevel(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Occupancy {
    Vacant,
    Occupied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Led {
    Green,
    Red,
}

impl Led {
    pub fn for_occupancy(occupancy: Occupancy) -> Led {
        match occupancy {
            Occupancy::Vacant => Led::Green,
            Occupancy::Occupied => Led::Red,
        }
    }
}

/// Congestion level on the 1 (light) .. 3 (heavy) scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TrafficLevel(u8);

impl TrafficLevel {
    pub const LIGHT: TrafficLevel = TrafficLevel(1);
    pub const MODERATE: TrafficLevel = TrafficLevel(2);
    pub const HEAVY: TrafficLevel = TrafficLevel(3);

    pub fn new(level: u8) -> Result<Self, NodeError> {
        if (1..=3).contains(&level) {
            Ok(TrafficLevel(level))
        } else {
            Err(NodeError::TrafficLevel(level))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for TrafficLevel {
    type Error = NodeError;
    fn try_from(v: u8) -> Result<Self, NodeError> {
        TrafficLevel::new(v)
    }
}

impl From<TrafficLevel> for u8 {
    fn from(l: TrafficLevel) -> u8 {
        l.0
    }
}

impl fmt::Display for TrafficLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-node electrical profile. Active draw is the sum of the parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PowerProfile {
    pub ultrasonic_mw: u64,
    pub radio_mw: u64,
    pub mcu_mw: u64,
    pub idle_mw: u64,
    pub sense_duration: SimTime,
    pub report_period: SimTime,
}

impl Default for PowerProfile {
    fn default() -> Self {
        PowerProfile {
            ultrasonic_mw: 75,
            radio_mw: 132,
            mcu_mw: 25,
            idle_mw: 50,
            sense_duration: SimTime::from_millis(50),
            report_period: SimTime::from_millis(500),
        }
    }
}

impl PowerProfile {
    pub fn active_mw(&self) -> u64 {
        self.ultrasonic_mw + self.radio_mw + self.mcu_mw
    }

    /// Energy for one report period with `active` time at full draw and the
    /// rest idle. Active time is capped at the period.
    pub fn period_energy_nj(&self, active: SimTime) -> u64 {
        let period = self.report_period.as_micros();
        let active = active.as_micros().min(period);
        self.active_mw() * active + self.idle_mw * (period - active)
    }
}

/// Active time per report cycle: one sensing window plus the frame's airtime
/// on every hop of its route.
pub fn active_time(profile: &PowerProfile, frame_airtime: SimTime, hops: u32) -> SimTime {
    profile.sense_duration + SimTime::from_micros(frame_airtime.as_micros() * u64::from(hops))
}

/// Commits a new occupancy only after `depth` consecutive raw readings agree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Debouncer {
    committed: Occupancy,
    candidate: Option<Occupancy>,
    streak: u32,
    depth: u32,
}

impl Debouncer {
    pub fn new(initial: Occupancy, depth: u32) -> Self {
        Debouncer {
            committed: initial,
            candidate: None,
            streak: 0,
            depth: depth.max(1),
        }
    }

    pub fn committed(&self) -> Occupancy {
        self.committed
    }

    /// Feed one raw classification; returns the committed state afterwards.
    pub fn observe(&mut self, raw: Occupancy) -> Occupancy {
        if raw == self.committed {
            self.candidate = None;
            self.streak = 0;
            return self.committed;
        }
        if self.candidate == Some(raw) {
            self.streak += 1;
        } else {
            self.candidate = Some(raw);
            self.streak = 1;
        }
        if self.streak >= self.depth {
            self.committed = raw;
            self.candidate = None;
            self.streak = 0;
        }
        self.committed
    }
}

pub fn raw_occupancy(reading_m: f64, threshold_m: f64) -> Result<Occupancy, NodeError> {
    if reading_m.is_nan() || reading_m < 0.0 {
        return Err(NodeError::NegativeReading(reading_m));
    }
    Ok(if reading_m < threshold_m {
        Occupancy::Occupied
    } else {
        Occupancy::Vacant
    })
}

/// Classify one ultrasonic reading and pass it through the debouncer.
pub fn classify_occupancy(
    reading_m: f64,
    threshold_m: f64,
    debounce: &mut Debouncer,
) -> Result<Occupancy, NodeError> {
    Ok(debounce.observe(raw_occupancy(reading_m, threshold_m)?))
}

/// Fixed thresholds: under 6 passages/min is light, up to 20 moderate,
/// above that heavy.
pub fn traffic_level(passages_per_minute: f64) -> Result<TrafficLevel, NodeError> {
    if passages_per_minute.is_nan() || passages_per_minute < 0.0 {
        return Err(NodeError::NegativeRate(passages_per_minute));
    }
    Ok(if passages_per_minute < 6.0 {
        TrafficLevel::LIGHT
    } else if passages_per_minute <= 20.0 {
        TrafficLevel::MODERATE
    } else {
        TrafficLevel::HEAVY
    })
}

/// Output of one report cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tick {
    pub frame: Frame,
    pub energy_nj: u64,
}

#[derive(Debug, Clone)]
pub struct ParkingNode {
    pub id: NodeId,
    pub slot: u32,
    pub position: Position,
    pub threshold_m: f64,
    pub noise_m: f64,
    debounce: Debouncer,
    active: SimTime,
    profile: PowerProfile,
    energy_nj: u64,
    seq: u32,
    flips: u64,
    noise: ChaCha8Rng,
}

impl ParkingNode {
    pub fn new(
        id: NodeId,
        slot: u32,
        position: Position,
        initial: Occupancy,
        profile: PowerProfile,
        active: SimTime,
        noise: ChaCha8Rng,
    ) -> Self {
        ParkingNode {
            id,
            slot,
            position,
            threshold_m: DEFAULT_OCCUPIED_THRESHOLD_M,
            noise_m: DEFAULT_SENSOR_NOISE_M,
            debounce: Debouncer::new(initial, DEFAULT_DEBOUNCE_DEPTH),
            active,
            profile,
            energy_nj: 0,
            seq: 0,
            flips: 0,
            noise,
        }
    }

    pub fn occupancy(&self) -> Occupancy {
        self.debounce.committed()
    }

    pub fn led(&self) -> Led {
        Led::for_occupancy(self.occupancy())
    }

    pub fn energy_nj(&self) -> u64 {
        self.energy_nj
    }

    pub fn energy_mwh(&self) -> f64 {
        self.energy_nj as f64 / NANOJOULES_PER_MWH
    }

    pub fn frames_sent(&self) -> u32 {
        self.seq
    }

    pub fn flips(&self) -> u64 {
        self.flips
    }

    fn read(&mut self, true_distance_m: f64) -> f64 {
        if self.noise_m > 0.0 {
            true_distance_m + self.noise.random_range(-self.noise_m..=self.noise_m)
        } else {
            true_distance_m
        }
    }

    /// Sense, debounce, and emit this period's frame.
    pub fn tick(&mut self, epoch_id: u64, true_distance_m: f64) -> Result<Tick, NodeError> {
        let reading = self.read(true_distance_m);
        let before = self.occupancy();
        let after = classify_occupancy(reading, self.threshold_m, &mut self.debounce)?;
        if after != before {
            self.flips += 1;
        }
        let energy = self.profile.period_energy_nj(self.active);
        self.energy_nj += energy;
        let frame = Frame {
            src: self.id,
            seq: self.seq,
            epoch_id,
            payload: Payload::Occupancy(after),
        };
        self.seq += 1;
        Ok(Tick {
            frame,
            energy_nj: energy,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrafficNode {
    pub id: NodeId,
    pub position: Position,
    pub window: SimTime,
    passages: VecDeque<SimTime>,
    active: SimTime,
    profile: PowerProfile,
    energy_nj: u64,
    seq: u32,
}

impl TrafficNode {
    pub fn new(id: NodeId, position: Position, profile: PowerProfile, active: SimTime) -> Self {
        TrafficNode {
            id,
            position,
            window: DEFAULT_TRAFFIC_WINDOW,
            passages: VecDeque::new(),
            active,
            profile,
            energy_nj: 0,
            seq: 0,
        }
    }

    pub fn record_passage(&mut self, at: SimTime) {
        self.passages.push_back(at);
    }

    fn prune(&mut self, now: SimTime) {
        if now < self.window {
            return;
        }
        // Keep passages in (now - window, now].
        let horizon = now - self.window;
        while self.passages.front().is_some_and(|t| *t <= horizon) {
            self.passages.pop_front();
        }
    }

    /// Passages per minute over the trailing window ending at `now`.
    pub fn rate_per_minute(&mut self, now: SimTime) -> f64 {
        self.prune(now);
        self.passages.len() as f64 * 60e6 / self.window.as_micros() as f64
    }

    pub fn energy_nj(&self) -> u64 {
        self.energy_nj
    }

    pub fn energy_mwh(&self) -> f64 {
        self.energy_nj as f64 / NANOJOULES_PER_MWH
    }

    pub fn frames_sent(&self) -> u32 {
        self.seq
    }

    pub fn tick(&mut self, now: SimTime, epoch_id: u64) -> Result<Tick, NodeError> {
        let level = traffic_level(self.rate_per_minute(now))?;
        let energy = self.profile.period_energy_nj(self.active);
        self.energy_nj += energy;
        let frame = Frame {
            src: self.id,
            seq: self.seq,
            epoch_id,
            payload: Payload::Traffic(level),
        };
        self.seq += 1;
        Ok(Tick {
            frame,
            energy_nj: energy,
        })
    }
}

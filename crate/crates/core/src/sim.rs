//! Deterministic discrete-event engine.
//!
//! Time is an integer count of microseconds. Events with equal fire time are
//! dispatched in insertion order, and every stochastic model draws from a
//! stream derived from one scenario seed, so a run is a pure function of its
//! configuration.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Microseconds since simulation start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("cannot schedule at {at}: clock is already at {now}")]
    InPast { at: SimTime, now: SimTime },
    #[error("cannot run until {until}: clock is already at {now}")]
    RunBackwards { until: SimTime, now: SimTime },
}

/// A scheduled occurrence. `kind` carries the payload, `target` names the
/// entity it concerns (used only for the trace).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event<K> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub kind: K,
    pub target: String,
}

struct Queued<K>(Event<K>);

impl<K> PartialEq for Queued<K> {
    fn eq(&self, other: &Self) -> bool {
        self.0.fire_at == other.0.fire_at && self.0.seq == other.0.seq
    }
}

impl<K> Eq for Queued<K> {}

impl<K> PartialOrd for Queued<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Queued<K> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.seq).cmp(&(self.0.fire_at, self.0.seq))
    }
}

/// Event queue plus virtual clock.
pub struct Scheduler<K> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<K>>,
    trace: Option<Vec<u8>>,
    processed: u64,
}

impl<K: fmt::Display> Default for Scheduler<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: fmt::Display> Scheduler<K> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            trace: None,
            processed: 0,
        }
    }

    /// Record one tab-separated line per dispatched event:
    /// `time_us  seq  kind  target`.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Option<Vec<u8>> {
        self.trace.take()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        kind: K,
        target: impl Into<String>,
    ) -> Result<u64, SimError> {
        if fire_at < self.now {
            return Err(SimError::InPast {
                at: fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event {
            fire_at,
            seq,
            kind,
            target: target.into(),
        }));
        Ok(seq)
    }

    pub fn schedule_in(
        &mut self,
        delay: SimTime,
        kind: K,
        target: impl Into<String>,
    ) -> Result<u64, SimError> {
        self.schedule(self.now + delay, kind, target)
    }

    /// Pop the next event due at or before `until`, advancing the clock to it.
    pub fn next_due(&mut self, until: SimTime) -> Option<Event<K>> {
        if self.queue.peek()?.0.fire_at > until {
            return None;
        }
        let Queued(ev) = self.queue.pop()?;
        debug_assert!(ev.fire_at >= self.now);
        self.now = ev.fire_at;
        self.processed += 1;
        if let Some(buf) = self.trace.as_mut() {
            // Writing into a Vec cannot fail.
            let _ = writeln!(
                buf,
                "{}\t{}\t{}\t{}",
                ev.fire_at.as_micros(),
                ev.seq,
                ev.kind,
                ev.target
            );
        }
        Some(ev)
    }

    /// Finish a run: move the clock to `until` once no due events remain.
    pub fn advance_to(&mut self, until: SimTime) -> Result<(), SimError> {
        if until < self.now {
            return Err(SimError::RunBackwards {
                until,
                now: self.now,
            });
        }
        self.now = until;
        Ok(())
    }

    /// Dispatch every event with `fire_at <= until` through `handler`, which
    /// may schedule further events. Returns the number processed.
    pub fn run_until<F>(&mut self, until: SimTime, mut handler: F) -> Result<u64, SimError>
    where
        F: FnMut(&mut Self, Event<K>),
    {
        if until < self.now {
            return Err(SimError::RunBackwards {
                until,
                now: self.now,
            });
        }
        let mut count = 0;
        while let Some(ev) = self.next_due(until) {
            handler(self, ev);
            count += 1;
        }
        self.now = until;
        Ok(count)
    }
}

/// Purpose tag mixed into per-entity stream seeds so two models attached to
/// the same entity never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SensorNoise = 1,
    CarArrivals = 2,
    TrafficPassages = 3,
    Link = 4,
}

/// The scenario's single seed, from which every entity derives its own
/// generator. Adding an entity never perturbs another entity's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomSource {
    seed: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, purpose: Stream, entity: u64) -> ChaCha8Rng {
        let mixed = splitmix64(
            self.seed ^ splitmix64(entity.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ purpose as u64),
        );
        ChaCha8Rng::seed_from_u64(mixed)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Scenario configuration (TOML).
//!
//! ```toml
//! seed = 42
//! duration_s = 600
//! timeout_ms = 1000          # optional
//! inventory = "chain.txt"    # optional, relative to this file
//! api_port = 8080            # optional
//!
//! [car_process]              # optional, exponential dwell times
//! mean_occupied_s = 900
//! mean_vacant_s = 300
//!
//! [traffic_process]          # optional, Poisson passages per node
//! passages_per_minute = 12
//!
//! [link]                     # optional overrides
//! loss_within_range = 0.0
//!
//! [[stores]]
//! id = 1
//! name = "Main"
//! long = 29.3
//! lat = 48.0
//! parking_coordinator = [0, 0]
//! traffic_coordinator = [0, -15]
//! parking_slots = [[10, 0], [12.5, 0]]
//! traffic_nodes = [[-40, -30]]
//! [[stores.parking_lots]]
//! origin = [5, 5]
//! rows = 7
//! cols = 10
//! spacing_m = [2.5, 5.0]
//! ```
//!
//! Unknown keys are rejected. Node ids are assigned from 1 upward in file
//! order: each store's explicit slots, then its lots row by row, then its
//! traffic nodes.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixture;
use crate::mesh::{LinkModel, NodeId, Position};
use crate::recommend::Weights;
use crate::sim::SimTime;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario is not valid TOML: {0}")]
    Syntax(toml::de::Error),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarProcess {
    pub mean_occupied_s: f64,
    pub mean_vacant_s: f64,
}

impl Default for CarProcess {
    fn default() -> Self {
        CarProcess {
            mean_occupied_s: 900.0,
            mean_vacant_s: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficProcess {
    pub passages_per_minute: f64,
}

impl Default for TrafficProcess {
    fn default() -> Self {
        TrafficProcess {
            passages_per_minute: 12.0,
        }
    }
}

/// Ultrasonic echo distances and classification settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    pub car_distance_m: f64,
    pub ground_distance_m: f64,
    pub threshold_m: f64,
    pub noise_m: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            car_distance_m: 0.6,
            ground_distance_m: 2.5,
            threshold_m: crate::node::DEFAULT_OCCUPIED_THRESHOLD_M,
            noise_m: crate::node::DEFAULT_SENSOR_NOISE_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LotGrid {
    pub origin: [f64; 2],
    pub rows: u32,
    pub cols: u32,
    pub spacing_m: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreConfig {
    pub id: u32,
    pub name: String,
    pub long: f64,
    pub lat: f64,
    pub parking_coordinator: [f64; 2],
    pub traffic_coordinator: [f64; 2],
    #[serde(default)]
    pub parking_slots: Vec<[f64; 2]>,
    #[serde(default)]
    pub parking_lots: Vec<LotGrid>,
    pub traffic_nodes: Vec<[f64; 2]>,
    /// Overrides the scenario-wide passage rate for this store's roads.
    #[serde(default)]
    pub passages_per_minute: Option<f64>,
}

impl StoreConfig {
    /// Slot positions: explicit slots first, then each lot row by row.
    pub fn slot_positions(&self) -> Vec<Position> {
        let mut out: Vec<Position> = self
            .parking_slots
            .iter()
            .map(|[x, y]| Position::new(*x, *y))
            .collect();
        for lot in &self.parking_lots {
            for r in 0..lot.rows {
                for c in 0..lot.cols {
                    out.push(Position::new(
                        lot.origin[0] + f64::from(c) * lot.spacing_m[0],
                        lot.origin[1] + f64::from(r) * lot.spacing_m[1],
                    ));
                }
            }
        }
        out
    }

    pub fn traffic_positions(&self) -> Vec<Position> {
        self.traffic_nodes
            .iter()
            .map(|[x, y]| Position::new(*x, *y))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub inventory: Option<PathBuf>,
    #[serde(default = "default_port")]
    pub api_port: u16,
    #[serde(default)]
    pub car_process: CarProcess,
    #[serde(default)]
    pub traffic_process: TrafficProcess,
    #[serde(default)]
    pub sensor: SensorModel,
    #[serde(default)]
    pub link: LinkModel,
    #[serde(default)]
    pub weights: Weights,
    pub stores: Vec<StoreConfig>,
}

fn default_timeout_ms() -> u64 {
    1000
}

fn default_port() -> u16 {
    8080
}

/// A node's place in the scenario after id assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodePlacement {
    pub id: NodeId,
    pub store_index: usize,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StoreLayout {
    pub parking: Vec<NodePlacement>,
    pub traffic: Vec<NodePlacement>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(ScenarioError::Syntax)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from a file; a relative `inventory` path is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(inv) = cfg.inventory.as_mut() {
            if inv.is_relative() {
                if let Some(dir) = path.parent() {
                    *inv = dir.join(&*inv);
                }
            }
        }
        Ok(cfg)
    }

    /// The bundled single-branch deployment: 90 slots, 8 traffic counters.
    pub fn sultan_center() -> Self {
        Self::from_toml(fixture::SULTAN_CENTER_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_micros((self.duration_s * 1e6).round() as u64)
    }

    pub fn timeout(&self) -> SimTime {
        SimTime::from_millis(self.timeout_ms)
    }

    pub fn layouts(&self) -> Vec<StoreLayout> {
        let mut next = 1u32;
        let mut take = |store_index: usize, position: Position| {
            let id = NodeId(next);
            next += 1;
            NodePlacement {
                id,
                store_index,
                position,
            }
        };
        self.stores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let parking = s.slot_positions().into_iter().map(|p| take(i, p)).collect();
                let traffic = s
                    .traffic_positions()
                    .into_iter()
                    .map(|p| take(i, p))
                    .collect();
                StoreLayout { parking, traffic }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid(
                "duration_s",
                "must be a positive number of seconds",
            ));
        }
        if self.timeout_ms == 0 {
            return Err(invalid("timeout_ms", "must be positive"));
        }
        check_positive(
            "car_process.mean_occupied_s",
            self.car_process.mean_occupied_s,
        )?;
        check_positive("car_process.mean_vacant_s", self.car_process.mean_vacant_s)?;
        check_rate(
            "traffic_process.passages_per_minute",
            self.traffic_process.passages_per_minute,
        )?;
        self.validate_sensor()?;
        self.link
            .validate()
            .map_err(|e| invalid("link", e.to_string()))?;
        self.weights
            .validate()
            .map_err(|e| invalid("weights", e.to_string()))?;
        if self.stores.is_empty() {
            return Err(invalid("stores", "at least one store is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, s) in self.stores.iter().enumerate() {
            let f = |name: &str| format!("stores[{i}].{name}");
            if s.id == 0 {
                return Err(invalid(f("id"), "must be positive"));
            }
            if !ids.insert(s.id) {
                return Err(invalid(f("id"), format!("duplicate store id {}", s.id)));
            }
            if s.name.trim().is_empty() || s.name.contains(['\n', '\r']) {
                return Err(invalid(f("name"), "must be a non-empty single line"));
            }
            if !(s.long.is_finite() && s.lat.is_finite()) {
                return Err(invalid(f("long"), "coordinates must be finite"));
            }
            check_point(&f("parking_coordinator"), s.parking_coordinator)?;
            check_point(&f("traffic_coordinator"), s.traffic_coordinator)?;
            for (j, p) in s.parking_slots.iter().enumerate() {
                check_point(&f(&format!("parking_slots[{j}]")), *p)?;
            }
            for (j, lot) in s.parking_lots.iter().enumerate() {
                let name = f(&format!("parking_lots[{j}]"));
                check_point(&format!("{name}.origin"), lot.origin)?;
                check_point(&format!("{name}.spacing_m"), lot.spacing_m)?;
            }
            if s.traffic_nodes.is_empty() {
                return Err(invalid(
                    f("traffic_nodes"),
                    "at least one traffic node is required",
                ));
            }
            for (j, p) in s.traffic_nodes.iter().enumerate() {
                check_point(&f(&format!("traffic_nodes[{j}]")), *p)?;
            }
            if let Some(rate) = s.passages_per_minute {
                check_rate(&f("passages_per_minute"), rate)?;
            }
        }
        Ok(())
    }

    fn validate_sensor(&self) -> Result<(), ScenarioError> {
        let s = &self.sensor;
        check_positive("sensor.threshold_m", s.threshold_m)?;
        if !(s.noise_m.is_finite() && s.noise_m >= 0.0) {
            return Err(invalid("sensor.noise_m", "must be finite and non-negative"));
        }
        if !(s.car_distance_m.is_finite() && s.car_distance_m - s.noise_m >= 0.0) {
            return Err(invalid(
                "sensor.car_distance_m",
                "must be at least the noise amplitude so readings stay non-negative",
            ));
        }
        check_positive("sensor.ground_distance_m", s.ground_distance_m)?;
        Ok(())
    }
}

fn check_positive(field: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn check_rate(field: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(
            field,
            format!("must be finite and non-negative, got {v}"),
        ))
    }
}

fn check_point(field: &str, p: [f64; 2]) -> Result<(), ScenarioError> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(field, "position must be finite"))
    }
}

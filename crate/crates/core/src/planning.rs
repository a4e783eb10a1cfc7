//! Deployment planning: bill of materials, power budget, battery life.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::coordinator::CoordinatorPower;
use crate::mesh::{airtime, DEFAULT_DATA_RATE_BPS, FRAME_WIRE_SIZE};
use crate::node::PowerProfile;
use crate::sim::SimTime;

/// 1000 mAh at 3.7 V nominal.
pub const DEFAULT_BATTERY_WH: f64 = 3.7;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("{what} must not be negative, got {value}")]
    Negative { what: &'static str, value: i64 },
    #[error("{what} must be positive and finite, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("a node needs at least one hop to reach its coordinator")]
    NoHops,
}

/// US dollars held in cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize)]
pub struct Usd(i64);

impl Usd {
    pub const fn dollars(d: i64) -> Self {
        Usd(d * 100)
    }

    pub const fn cents(self) -> i64 {
        self.0
    }

    /// Plain decimal form for CSV, e.g. `3430.00`.
    pub fn decimal(self) -> String {
        format!("{}.{:02}", self.0 / 100, (self.0 % 100).abs())
    }
}

impl fmt::Display for Usd {
    /// Ledger form, e.g. `$10,408` or `$12.50`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = (self.0 / 100).to_string();
        let mut grouped = String::new();
        for (i, c) in whole.chars().enumerate() {
            if i > 0 && (whole.len() - i).is_multiple_of(3) {
                grouped.push(',');
            }
            grouped.push(c);
        }
        let s = match self.0 % 100 {
            0 => format!("${grouped}"),
            c => format!("${grouped}.{c:02}"),
        };
        f.pad(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitPrices {
    pub node_board: Usd,
    pub radio: Usd,
    pub ultrasonic: Usd,
    pub battery: Usd,
    pub solar_panel: Usd,
    pub host_board: Usd,
    pub coordinator_board: Usd,
    pub software: Usd,
    pub maintenance_per_year: Usd,
}

impl Default for UnitPrices {
    fn default() -> Self {
        UnitPrices {
            node_board: Usd::dollars(35),
            radio: Usd::dollars(23),
            ultrasonic: Usd::dollars(2),
            battery: Usd::dollars(13),
            solar_panel: Usd::dollars(6),
            host_board: Usd::dollars(35),
            coordinator_board: Usd::dollars(25),
            software: Usd::dollars(1000),
            maintenance_per_year: Usd::dollars(1500),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeploymentSpec {
    pub parking_slots: i64,
    pub traffic_nodes: i64,
    pub coordinators: i64,
    pub maintenance_years: i64,
    pub prices: UnitPrices,
}

impl DeploymentSpec {
    /// One coordinator per populated role (parking, traffic).
    pub fn new(parking_slots: i64, traffic_nodes: i64) -> Self {
        DeploymentSpec {
            parking_slots,
            traffic_nodes,
            coordinators: i64::from(parking_slots > 0) + i64::from(traffic_nodes > 0),
            maintenance_years: 1,
            prices: UnitPrices::default(),
        }
    }

    pub fn nodes(&self) -> i64 {
        self.parking_slots + self.traffic_nodes
    }

    pub fn radio_modules(&self) -> i64 {
        self.nodes() + self.coordinators
    }

    fn validate(&self) -> Result<(), PlanError> {
        for (what, value) in [
            ("parking slots", self.parking_slots),
            ("traffic nodes", self.traffic_nodes),
            ("coordinators", self.coordinators),
            ("maintenance years", self.maintenance_years),
        ] {
            if value < 0 {
                return Err(PlanError::Negative { what, value });
            }
        }
        let p = &self.prices;
        for (what, price) in [
            ("node board price", p.node_board),
            ("radio price", p.radio),
            ("ultrasonic sensor price", p.ultrasonic),
            ("battery price", p.battery),
            ("solar panel price", p.solar_panel),
            ("host board price", p.host_board),
            ("coordinator board price", p.coordinator_board),
            ("software price", p.software),
            ("maintenance price", p.maintenance_per_year),
        ] {
            if price.cents() < 0 {
                return Err(PlanError::Negative {
                    what,
                    value: price.cents(),
                });
            }
        }
        Ok(())
    }
}

/// One branch with a 70-car and a 20-car lot between two main roads,
/// two counters per direction on each road.
pub fn sultan_center_sizing() -> DeploymentSpec {
    let parking = 70 + 20;
    let traffic = 2 * 2 * 2;
    DeploymentSpec::new(parking, traffic)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineItem {
    pub component: &'static str,
    pub unit_cost: Usd,
    pub qty: i64,
    pub cost: Usd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostSheet {
    pub items: Vec<LineItem>,
    pub total: Usd,
}

pub fn cost_estimate(spec: &DeploymentSpec) -> Result<CostSheet, PlanError> {
    spec.validate()?;
    let p = &spec.prices;
    let nodes = spec.nodes();
    let rows = [
        ("Arduino Fio", p.node_board, nodes),
        ("Xbee Series 2", p.radio, spec.radio_modules()),
        ("Ultrasonic Sensor", p.ultrasonic, nodes),
        ("Battery", p.battery, nodes),
        ("Solar Panel", p.solar_panel, nodes),
        ("Raspberry Pi 3", p.host_board, spec.coordinators),
        ("Software", p.software, 1),
        (
            "Maintenance/year",
            p.maintenance_per_year,
            spec.maintenance_years,
        ),
        ("Arduino UNO", p.coordinator_board, spec.coordinators),
    ];
    let items: Vec<LineItem> = rows
        .into_iter()
        .map(|(component, unit_cost, qty)| LineItem {
            component,
            unit_cost,
            qty,
            cost: Usd(unit_cost.cents() * qty),
        })
        .collect();
    let total = Usd(items.iter().map(|i| i.cost.cents()).sum());
    Ok(CostSheet { items, total })
}

impl CostSheet {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["component", "unit_cost_usd", "qty", "cost_usd"])
            .unwrap();
        for i in &self.items {
            w.write_record([
                i.component.to_string(),
                i.unit_cost.decimal(),
                i.qty.to_string(),
                i.cost.decimal(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn to_table(&self) -> String {
        let name_w = self
            .items
            .iter()
            .map(|i| i.component.len())
            .max()
            .unwrap_or(0)
            .max("Component".len());
        let mut out = format!(
            "{:<name_w$}  {:>10}  {:>5}  {:>10}\n",
            "Component", "Cost/Unit", "Qty", "Cost"
        );
        for i in &self.items {
            out += &format!(
                "{:<name_w$}  {:>10}  {:>5}  {:>10}\n",
                i.component, i.unit_cost, i.qty, i.cost
            );
        }
        out += &format!(
            "{:<name_w$}  {:>10}  {:>5}  {:>10}\n",
            "Total", "", "", self.total
        );
        out
    }
}

/// Mean draw over one report period with `active` time at full power.
pub fn duty_cycle_power(profile: &PowerProfile, active: SimTime) -> f64 {
    let period = profile.report_period.as_micros() as f64;
    let active = (active.as_micros() as f64).min(period);
    (profile.active_mw() as f64 * active + profile.idle_mw as f64 * (period - active)) / period
}

/// Mean node draw when each report is relayed over `hops` hops.
pub fn node_average_power(profile: &PowerProfile, hops: u32) -> Result<f64, PlanError> {
    if hops == 0 {
        return Err(PlanError::NoHops);
    }
    let per_hop = airtime(FRAME_WIRE_SIZE, DEFAULT_DATA_RATE_BPS).expect("nonzero rate");
    let active = profile.sense_duration.as_micros() + u64::from(hops) * per_hop.as_micros();
    Ok(duty_cycle_power(profile, SimTime::from_micros(active)))
}

/// Hours of operation from a full battery at a constant mean draw.
pub fn battery_life(capacity_wh: f64, average_mw: f64) -> Result<f64, PlanError> {
    for (what, value) in [
        ("battery capacity", capacity_wh),
        ("average power", average_mw),
    ] {
        if !(value.is_finite() && value > 0.0) {
            return Err(PlanError::NonPositive { what, value });
        }
    }
    Ok(capacity_wh * 1000.0 / average_mw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerBudget {
    pub node_active_mw: u64,
    pub node_idle_mw: u64,
    pub node_average_mw: f64,
    pub coordinator_mw: u64,
}

pub fn power_budget(profile: &PowerProfile, hops: u32) -> Result<PowerBudget, PlanError> {
    Ok(PowerBudget {
        node_active_mw: profile.active_mw(),
        node_idle_mw: profile.idle_mw,
        node_average_mw: node_average_power(profile, hops)?,
        coordinator_mw: CoordinatorPower::default().total_mw(),
    })
}

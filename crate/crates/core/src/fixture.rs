//! Built-in reference data.

use crate::datastore::Datastore;

/// Snapshot text for the two-branch reference chain.
pub const REFERENCE_CHAIN: &str = include_str!("../fixtures/reference_chain.txt");

/// Default deployment scenario: one branch with 90 parking slots in two lots
/// and 8 roadside traffic counters.
pub const SULTAN_CENTER_SCENARIO: &str = include_str!("../fixtures/sultan_center.toml");

pub fn reference_chain() -> Datastore {
    Datastore::from_snapshot(REFERENCE_CHAIN).expect("bundled fixture parses")
}

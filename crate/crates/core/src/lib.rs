//! Core model for the parkwise outdoor stack.
//!
//! Field nodes sense parking slots and road traffic, report over a
//! multi-hop low-rate mesh to per-store coordinators, which aggregate each
//! report epoch into a telemetry update for the chain datastore. The same
//! datastore backs the customer-facing queries and the store ranking.

pub mod coordinator;
pub mod datastore;
pub mod fixture;
pub mod mesh;
pub mod metrics;
pub mod node;
pub mod planning;
pub mod recommend;
pub mod scenario;
pub mod sim;
pub mod world;

pub use coordinator::TelemetryUpdate;
pub use datastore::{Datastore, SharedDatastore};
pub use mesh::NodeId;
pub use sim::SimTime;

//! A running scenario: nodes, mesh, coordinators and the datastore driven
//! by one event queue.
//!
//! Every report period an epoch opens at all coordinators and each live
//! node ticks once. Delivered frames reach their coordinator after their
//! accumulated airtime; finished store epochs are pushed to the datastore
//! after the uplink delay. Car arrivals and road passages are independent
//! renewal processes per node.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::coordinator::{
    uplink_latency, CloseReason, CoordinatorError, CoordinatorPower, StoreCoordinator, StoreEpoch,
    TelemetryUpdate, UPLINK_RATE_BPS,
};
use crate::datastore::{Datastore, DatastoreError, SharedDatastore, StoreRecord};
use crate::fixture;
use crate::mesh::{transmit, Frame, MeshError, NodeId, NodeKind, Payload, Route, Topology};
use crate::metrics::{MetricsReport, NodeMetrics, StoreMetrics};
use crate::node::{
    active_time, NodeError, Occupancy, ParkingNode, PowerProfile, TrafficLevel, TrafficNode,
    NANOJOULES_PER_MWH,
};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::sim::{RandomSource, Scheduler, SimError, SimTime, Stream};

/// Epochs before this one are not scored for accuracy.
pub const WARMUP_EPOCHS: u64 = 2;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("store {store_id} {role} mesh")]
    Mesh {
        store_id: u32,
        role: NodeKind,
        source: MeshError,
    },
    #[error("silenced node {0} is not part of the scenario")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    EpochStart(u64),
    NodeTick {
        node: NodeId,
        epoch: u64,
    },
    FrameArrival {
        store: usize,
        frame: Frame,
    },
    EpochTimeout {
        store: usize,
        role: NodeKind,
        epoch: u64,
    },
    Push {
        store: usize,
        epoch: u64,
    },
    SlotChange(NodeId),
    Passage(NodeId),
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::EpochStart(e) => write!(f, "epoch_start:{e}"),
            EventKind::NodeTick { epoch, .. } => write!(f, "node_tick:{epoch}"),
            EventKind::FrameArrival { frame, .. } => write!(f, "frame_arrival:{}", frame.epoch_id),
            EventKind::EpochTimeout { role, epoch, .. } => {
                write!(f, "epoch_timeout:{role}:{epoch}")
            }
            EventKind::Push { epoch, .. } => write!(f, "push:{epoch}"),
            EventKind::SlotChange(_) => f.write_str("slot_change"),
            EventKind::Passage(_) => f.write_str("passage"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub trace: bool,
    /// Nodes that stop reporting from the given time on.
    pub silence: Vec<(NodeId, SimTime)>,
    /// Keep per-epoch close records and pushed updates for inspection.
    pub keep_history: bool,
}

/// One logical coordinator's epoch close, as observed during the run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochClosure {
    pub store_id: u32,
    pub role: NodeKind,
    pub epoch_id: u64,
    pub opened_at: SimTime,
    pub closed_at: SimTime,
    pub reason: CloseReason,
    pub stale: BTreeSet<NodeId>,
}

/// A telemetry write and whether the datastore took it.
#[derive(Debug, Clone, PartialEq)]
pub struct PushRecord {
    pub at: SimTime,
    pub update: TelemetryUpdate,
    pub accepted: bool,
    /// Ground-truth vacancy for the epoch, from each node's committed state.
    pub truth_available: u32,
}

enum Model {
    Parking {
        node: Box<ParkingNode>,
        car_present: bool,
        cars: ChaCha8Rng,
    },
    Traffic {
        node: TrafficNode,
        passages: ChaCha8Rng,
        rate_per_min: f64,
    },
}

struct FieldNode {
    store: usize,
    model: Model,
    route: Route,
    link_rng: ChaCha8Rng,
    silenced_from: Option<SimTime>,
    last_delivered: Option<Occupancy>,
    delivered: u64,
    lost: u64,
}

impl FieldNode {
    fn silenced(&self, now: SimTime) -> bool {
        self.silenced_from.is_some_and(|t| now >= t)
    }

    fn committed(&self) -> Option<Occupancy> {
        match &self.model {
            Model::Parking { node, .. } => Some(node.occupancy()),
            Model::Traffic { .. } => None,
        }
    }

    /// What the coordinators can know about a silent parking node: its last
    /// delivered reading, or occupied if none ever arrived.
    fn silent_vacant(&self) -> bool {
        self.committed().is_some() && self.last_delivered == Some(Occupancy::Vacant)
    }
}

struct StoreSim {
    store_id: u32,
    coordinator: StoreCoordinator,
    parking_ids: Vec<NodeId>,
    truth: BTreeMap<u64, u32>,
    awaiting_push: BTreeMap<u64, (StoreEpoch, u32)>,
    visible: BTreeMap<NodeId, Occupancy>,
    pending_change: BTreeMap<NodeId, (SimTime, Occupancy)>,
    metrics: StoreMetrics,
}

pub struct World {
    cfg: ScenarioConfig,
    sched: Scheduler<EventKind>,
    profile: PowerProfile,
    nodes: BTreeMap<NodeId, FieldNode>,
    stores: Vec<StoreSim>,
    datastore: SharedDatastore,
    keep_history: bool,
    closures: Vec<EpochClosure>,
    pushes: Vec<PushRecord>,
    total_airtime: SimTime,
}

/// Inventory from the configured snapshot (or the bundled reference chain),
/// with each simulated store's row set to its slot count and marked full
/// and congested until the first telemetry arrives.
pub fn seed_datastore(cfg: &ScenarioConfig) -> Result<Datastore, WorldError> {
    let mut ds = match &cfg.inventory {
        Some(path) => Datastore::load(path)?,
        None => fixture::reference_chain(),
    };
    for (store, layout) in cfg.stores.iter().zip(cfg.layouts()) {
        ds.upsert_store(StoreRecord {
            store_id: store.id,
            store_name: store.name.clone(),
            store_long: store.long,
            store_lat: store.lat,
            store_parking_total: layout.parking.len() as u32,
            store_parking_available: 0,
            avg_traffic: TrafficLevel::HEAVY,
        })?;
    }
    Ok(ds)
}

fn exp_delay(rng: &mut ChaCha8Rng, mean_s: f64) -> SimTime {
    let secs = Exp::new(1.0 / mean_s)
        .expect("validated positive mean")
        .sample(rng);
    SimTime::from_micros(((secs * 1e6).round() as u64).max(1))
}

fn node_target(id: NodeId) -> String {
    format!("node:{id}")
}

impl World {
    pub fn new(cfg: ScenarioConfig, opts: RunOptions) -> Result<World, WorldError> {
        let ds = SharedDatastore::new(seed_datastore(&cfg)?);
        Self::with_datastore(cfg, opts, ds)
    }

    /// Build against an existing datastore (shared with an API server).
    /// Simulated stores must already exist in it.
    pub fn with_datastore(
        cfg: ScenarioConfig,
        opts: RunOptions,
        datastore: SharedDatastore,
    ) -> Result<World, WorldError> {
        cfg.validate()?;
        let rs = RandomSource::new(cfg.seed);
        let profile = PowerProfile::default();
        let frame_airtime = cfg.link.frame_airtime();
        let mut sched = Scheduler::new();
        if opts.trace {
            sched.enable_trace();
        }

        let mut nodes = BTreeMap::new();
        let mut stores = Vec::new();
        for (index, (store, layout)) in cfg.stores.iter().zip(cfg.layouts()).enumerate() {
            let routes = |role: NodeKind, coordinator: [f64; 2], placed: &[_]| {
                let mut topo = Topology::new(
                    crate::mesh::Position::new(coordinator[0], coordinator[1]),
                    cfg.link.max_range_m,
                );
                for p in placed {
                    let p: &crate::scenario::NodePlacement = p;
                    topo.insert(p.id, p.position)
                        .map_err(|source| WorldError::Mesh {
                            store_id: store.id,
                            role,
                            source,
                        })?;
                }
                topo.routes().map_err(|source| WorldError::Mesh {
                    store_id: store.id,
                    role,
                    source,
                })
            };
            let mut parking_routes = routes(
                NodeKind::Parking,
                store.parking_coordinator,
                &layout.parking,
            )?;
            let mut traffic_routes = routes(
                NodeKind::Traffic,
                store.traffic_coordinator,
                &layout.traffic,
            )?;

            let p_occupied = cfg.car_process.mean_occupied_s
                / (cfg.car_process.mean_occupied_s + cfg.car_process.mean_vacant_s);
            let mut visible = BTreeMap::new();
            for (slot, p) in layout.parking.iter().enumerate() {
                let route = parking_routes.remove(&p.id).expect("every node routed");
                let mut cars = rs.stream(Stream::CarArrivals, u64::from(p.id.0));
                let car_present = cars.random_bool(p_occupied);
                let initial = if car_present {
                    Occupancy::Occupied
                } else {
                    Occupancy::Vacant
                };
                visible.insert(p.id, initial);
                let mut node = ParkingNode::new(
                    p.id,
                    slot as u32 + 1,
                    p.position,
                    initial,
                    profile,
                    active_time(&profile, frame_airtime, route.hops()),
                    rs.stream(Stream::SensorNoise, u64::from(p.id.0)),
                );
                node.threshold_m = cfg.sensor.threshold_m;
                node.noise_m = cfg.sensor.noise_m;
                let mean = if car_present {
                    cfg.car_process.mean_occupied_s
                } else {
                    cfg.car_process.mean_vacant_s
                };
                let first = exp_delay(&mut cars, mean);
                sched.schedule(first, EventKind::SlotChange(p.id), node_target(p.id))?;
                nodes.insert(
                    p.id,
                    FieldNode {
                        store: index,
                        model: Model::Parking {
                            node: Box::new(node),
                            car_present,
                            cars,
                        },
                        route,
                        link_rng: rs.stream(Stream::Link, u64::from(p.id.0)),
                        silenced_from: None,
                        last_delivered: None,
                        delivered: 0,
                        lost: 0,
                    },
                );
            }
            let rate = store
                .passages_per_minute
                .unwrap_or(cfg.traffic_process.passages_per_minute);
            for p in &layout.traffic {
                let route = traffic_routes.remove(&p.id).expect("every node routed");
                let mut passages = rs.stream(Stream::TrafficPassages, u64::from(p.id.0));
                if rate > 0.0 {
                    let first = exp_delay(&mut passages, 60.0 / rate);
                    sched.schedule(first, EventKind::Passage(p.id), node_target(p.id))?;
                }
                nodes.insert(
                    p.id,
                    FieldNode {
                        store: index,
                        model: Model::Traffic {
                            node: TrafficNode::new(
                                p.id,
                                p.position,
                                profile,
                                active_time(&profile, frame_airtime, route.hops()),
                            ),
                            passages,
                            rate_per_min: rate,
                        },
                        route,
                        link_rng: rs.stream(Stream::Link, u64::from(p.id.0)),
                        silenced_from: None,
                        last_delivered: None,
                        delivered: 0,
                        lost: 0,
                    },
                );
            }

            let parking_ids: Vec<NodeId> = layout.parking.iter().map(|p| p.id).collect();
            stores.push(StoreSim {
                store_id: store.id,
                coordinator: StoreCoordinator::new(
                    store.id,
                    parking_ids.iter().copied().collect(),
                    layout.traffic.iter().map(|p| p.id).collect(),
                    cfg.timeout(),
                )?,
                parking_ids,
                truth: BTreeMap::new(),
                awaiting_push: BTreeMap::new(),
                visible,
                pending_change: BTreeMap::new(),
                metrics: StoreMetrics {
                    store_id: store.id,
                    ..Default::default()
                },
            });
        }

        for (id, from) in &opts.silence {
            nodes
                .get_mut(id)
                .ok_or(WorldError::UnknownNode(*id))?
                .silenced_from = Some(*from);
        }
        {
            let ds = datastore.read();
            for s in &stores {
                ds.get_store(s.store_id)?;
            }
        }

        sched.schedule(profile.report_period, EventKind::EpochStart(1), "all")?;
        Ok(World {
            cfg,
            sched,
            profile,
            nodes,
            stores,
            datastore,
            keep_history: opts.keep_history,
            closures: Vec::new(),
            pushes: Vec::new(),
            total_airtime: SimTime::ZERO,
        })
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn datastore(&self) -> &SharedDatastore {
        &self.datastore
    }

    pub fn closures(&self) -> &[EpochClosure] {
        &self.closures
    }

    pub fn pushes(&self) -> &[PushRecord] {
        &self.pushes
    }

    pub fn take_trace(&mut self) -> Option<Vec<u8>> {
        self.sched.take_trace()
    }

    pub fn total_airtime(&self) -> SimTime {
        self.total_airtime
    }

    pub fn route(&self, id: NodeId) -> Option<&Route> {
        self.nodes.get(&id).map(|n| &n.route)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    /// Committed occupancy of a parking node.
    pub fn occupancy(&self, id: NodeId) -> Option<Occupancy> {
        self.nodes.get(&id).and_then(FieldNode::committed)
    }

    /// Slot changes not yet visible in the datastore: (store id, node, time
    /// of the change).
    pub fn pending_changes(&self) -> Vec<(u32, NodeId, SimTime)> {
        self.stores
            .iter()
            .flat_map(|s| {
                s.pending_change
                    .iter()
                    .map(|(id, (at, _))| (s.store_id, *id, *at))
            })
            .collect()
    }

    pub fn silence(&mut self, id: NodeId, from: SimTime) -> Result<(), WorldError> {
        self.nodes
            .get_mut(&id)
            .ok_or(WorldError::UnknownNode(id))?
            .silenced_from = Some(from);
        Ok(())
    }

    /// Process every event up to and including `until`.
    pub fn run_until(&mut self, until: SimTime) -> Result<u64, WorldError> {
        let mut count = 0;
        while let Some(ev) = self.sched.next_due(until) {
            self.handle(ev.kind)?;
            count += 1;
        }
        self.sched.advance_to(until)?;
        Ok(count)
    }

    /// Run the configured duration and report.
    pub fn run(&mut self) -> Result<MetricsReport, WorldError> {
        self.run_until(self.cfg.duration())?;
        Ok(self.report())
    }

    fn handle(&mut self, kind: EventKind) -> Result<(), WorldError> {
        let now = self.sched.now();
        match kind {
            EventKind::EpochStart(epoch) => self.start_epoch(epoch, now),
            EventKind::NodeTick { node, epoch } => self.tick(node, epoch, now),
            EventKind::FrameArrival { store, frame } => {
                if let Some(done) = self.stores[store].coordinator.ingest(&frame, now)? {
                    self.finish_epoch(store, done, now)?;
                }
                Ok(())
            }
            EventKind::EpochTimeout { store, role, epoch } => {
                if let Some(done) = self.stores[store]
                    .coordinator
                    .on_timeout(role, epoch, now)?
                {
                    self.finish_epoch(store, done, now)?;
                }
                Ok(())
            }
            EventKind::Push { store, epoch } => self.push(store, epoch, now),
            EventKind::SlotChange(id) => self.slot_change(id, now),
            EventKind::Passage(id) => self.passage(id, now),
        }
    }

    fn start_epoch(&mut self, epoch: u64, now: SimTime) -> Result<(), WorldError> {
        let timeout = self.cfg.timeout();
        for index in 0..self.stores.len() {
            // A silent node's slot cannot be observed, so it is scored by
            // the stale policy instead of its physical state.
            let silent_vacant = self.stores[index]
                .parking_ids
                .iter()
                .filter(|id| {
                    let n = &self.nodes[*id];
                    n.silenced(now) && n.silent_vacant()
                })
                .count() as u32;
            let store = &mut self.stores[index];
            store.truth.insert(epoch, silent_vacant);
            let target = format!("store:{}", store.store_id);
            let finished = store.coordinator.open(epoch, now)?;
            for role in [NodeKind::Parking, NodeKind::Traffic] {
                self.sched.schedule(
                    now + timeout,
                    EventKind::EpochTimeout {
                        store: index,
                        role,
                        epoch,
                    },
                    target.clone(),
                )?;
            }
            for done in finished {
                self.finish_epoch(index, done, now)?;
            }
        }
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            if !self.nodes[&id].silenced(now) {
                self.sched.schedule(
                    now,
                    EventKind::NodeTick { node: id, epoch },
                    node_target(id),
                )?;
            }
        }
        self.sched.schedule(
            now + self.profile.report_period,
            EventKind::EpochStart(epoch + 1),
            "all",
        )?;
        Ok(())
    }

    fn tick(&mut self, id: NodeId, epoch: u64, now: SimTime) -> Result<(), WorldError> {
        let link = self.cfg.link;
        let sensor = self.cfg.sensor.clone();
        let node = self.nodes.get_mut(&id).expect("scheduled node exists");
        if node.silenced(now) {
            if node.silent_vacant() {
                *self.stores[node.store].truth.entry(epoch).or_default() += 1;
            }
            return Ok(());
        }
        let tick = match &mut node.model {
            Model::Parking {
                node: parking,
                car_present,
                ..
            } => {
                let distance = if *car_present {
                    sensor.car_distance_m
                } else {
                    sensor.ground_distance_m
                };
                let tick = parking.tick(epoch, distance)?;
                if parking.occupancy() == Occupancy::Vacant {
                    *self.stores[node.store].truth.entry(epoch).or_default() += 1;
                }
                tick
            }
            Model::Traffic { node: traffic, .. } => traffic.tick(now, epoch)?,
        };
        let tx = transmit(&tick.frame, &node.route, &link, &mut node.link_rng);
        self.total_airtime = self.total_airtime + tx.airtime;
        let metrics = &mut self.stores[node.store].metrics;
        metrics.frames_sent += 1;
        metrics.airtime_us += tx.airtime.as_micros();
        if tx.delivered() {
            node.delivered += 1;
            if let Payload::Occupancy(o) = tick.frame.payload {
                node.last_delivered = Some(o);
            }
            metrics.frames_delivered += 1;
            let store = node.store;
            self.sched.schedule(
                now + tx.airtime,
                EventKind::FrameArrival {
                    store,
                    frame: tick.frame,
                },
                node_target(id),
            )?;
        } else {
            node.lost += 1;
            metrics.frames_lost += 1;
        }
        Ok(())
    }

    fn finish_epoch(
        &mut self,
        index: usize,
        done: StoreEpoch,
        now: SimTime,
    ) -> Result<(), WorldError> {
        let store = &mut self.stores[index];
        let epoch = done.update.epoch_id;
        store.metrics.epochs_closed += 1;
        let timed_out = [&done.parking, &done.traffic]
            .iter()
            .any(|c| c.reason == CloseReason::Timeout);
        if timed_out {
            store.metrics.epochs_timeout += 1;
        } else {
            store.metrics.epochs_complete += 1;
        }
        let truth = store.truth.remove(&epoch).unwrap_or(0);
        if epoch > WARMUP_EPOCHS {
            store.metrics.epochs_scored += 1;
            if truth == done.update.parking_available {
                store.metrics.epochs_accurate += 1;
            }
        }
        if self.keep_history {
            for half in [&done.parking, &done.traffic] {
                self.closures.push(EpochClosure {
                    store_id: store.store_id,
                    role: half.role,
                    epoch_id: half.epoch_id,
                    opened_at: half.opened_at,
                    closed_at: half.closed_at,
                    reason: half.reason,
                    stale: half.stale.clone(),
                });
            }
        }
        let bytes = serde_json::to_vec(&done.update)
            .expect("update serializes")
            .len();
        let target = format!("store:{}", store.store_id);
        store.awaiting_push.insert(epoch, (done, truth));
        self.sched.schedule(
            now + uplink_latency(bytes, UPLINK_RATE_BPS),
            EventKind::Push {
                store: index,
                epoch,
            },
            target,
        )?;
        Ok(())
    }

    fn push(&mut self, index: usize, epoch: u64, now: SimTime) -> Result<(), WorldError> {
        let store = &mut self.stores[index];
        let (done, truth) = store
            .awaiting_push
            .remove(&epoch)
            .expect("push scheduled for a finished epoch");
        let result = self
            .datastore
            .write()
            .update_telemetry(&done.update)
            .map(|_| ());
        let accepted = match result {
            Ok(()) => true,
            // An older epoch that finished late, or a datastore refusal:
            // the next epoch's update supersedes it.
            Err(DatastoreError::StaleEpoch { .. } | DatastoreError::ConflictingEpoch { .. }) => {
                false
            }
            Err(e) => return Err(e.into()),
        };
        if accepted {
            store.metrics.pushes_accepted += 1;
            for (id, value) in &done.parking.effective {
                let Some(Payload::Occupancy(state)) = value else {
                    continue;
                };
                if let Some((changed_at, target)) = store.pending_change.get(id).copied() {
                    if *state == target && done.parking.opened_at >= changed_at {
                        store.metrics.latency.record(now - changed_at);
                        store.pending_change.remove(id);
                    }
                }
                store.visible.insert(*id, *state);
            }
        } else {
            store.metrics.pushes_rejected += 1;
        }
        if self.keep_history {
            self.pushes.push(PushRecord {
                at: now,
                update: done.update,
                accepted,
                truth_available: truth,
            });
        }
        Ok(())
    }

    fn slot_change(&mut self, id: NodeId, now: SimTime) -> Result<(), WorldError> {
        let cars = &self.cfg.car_process;
        let node = self.nodes.get_mut(&id).expect("slot exists");
        let Model::Parking {
            car_present,
            cars: rng,
            ..
        } = &mut node.model
        else {
            unreachable!("slot changes target parking nodes");
        };
        *car_present = !*car_present;
        let (state, mean) = if *car_present {
            (Occupancy::Occupied, cars.mean_occupied_s)
        } else {
            (Occupancy::Vacant, cars.mean_vacant_s)
        };
        let next = exp_delay(rng, mean);
        let store = &mut self.stores[node.store];
        if store.pending_change.remove(&id).is_some() {
            // Reverted before it was reported.
            store.metrics.changes_superseded += 1;
        }
        if store.visible.get(&id) != Some(&state) {
            store.pending_change.insert(id, (now, state));
        }
        self.sched
            .schedule(now + next, EventKind::SlotChange(id), node_target(id))?;
        Ok(())
    }

    fn passage(&mut self, id: NodeId, now: SimTime) -> Result<(), WorldError> {
        let node = self.nodes.get_mut(&id).expect("traffic node exists");
        let Model::Traffic {
            node: traffic,
            passages,
            rate_per_min,
        } = &mut node.model
        else {
            unreachable!("passages target traffic nodes");
        };
        traffic.record_passage(now);
        let next = exp_delay(passages, 60.0 / *rate_per_min);
        self.sched
            .schedule(now + next, EventKind::Passage(id), node_target(id))?;
        Ok(())
    }

    pub fn report(&self) -> MetricsReport {
        let duration = self.sched.now();
        let coordinator_mwh =
            2.0 * CoordinatorPower::default().energy_nj(duration) as f64 / NANOJOULES_PER_MWH;
        let mut stores: Vec<StoreMetrics> = self.stores.iter().map(|s| s.metrics.clone()).collect();
        for (index, s) in self.stores.iter().enumerate() {
            let m = &mut stores[index];
            m.changes_pending = s.pending_change.len() as u64;
            m.coordinator_energy_mwh = coordinator_mwh;
            let counters = [
                s.coordinator.parking.counters,
                s.coordinator.traffic.counters,
            ];
            m.late_frames = counters.iter().map(|c| c.late).sum();
            m.duplicate_frames = counters.iter().map(|c| c.duplicate).sum();
        }
        let nodes: Vec<NodeMetrics> = self
            .nodes
            .iter()
            .map(|(id, n)| {
                let (kind, sent, energy_nj, flips) = match &n.model {
                    Model::Parking { node, .. } => (
                        NodeKind::Parking,
                        node.frames_sent(),
                        node.energy_nj(),
                        node.flips(),
                    ),
                    Model::Traffic { node, .. } => {
                        (NodeKind::Traffic, node.frames_sent(), node.energy_nj(), 0)
                    }
                };
                stores[n.store].node_energy_mwh += energy_nj as f64 / NANOJOULES_PER_MWH;
                NodeMetrics {
                    node_id: *id,
                    store_id: self.stores[n.store].store_id,
                    kind,
                    hops: n.route.hops(),
                    frames_sent: u64::from(sent),
                    frames_delivered: n.delivered,
                    frames_lost: n.lost,
                    energy_nj,
                    occupancy_flips: flips,
                    silenced: n.silenced_from.is_some(),
                }
            })
            .collect();
        MetricsReport {
            seed: self.cfg.seed,
            duration,
            stores,
            nodes,
        }
    }
}

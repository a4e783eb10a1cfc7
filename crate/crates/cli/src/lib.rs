//! `parkwise` command line: run a scenario, serve the API against a live
//! simulation, or price and power-budget a deployment.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use parkwise_api::AppState;
use parkwise_core::datastore::Datastore;
use parkwise_core::fixture;
use parkwise_core::metrics::MetricsReport;
use parkwise_core::node::PowerProfile;
use parkwise_core::planning::{
    battery_life, cost_estimate, power_budget, sultan_center_sizing, DeploymentSpec,
    DEFAULT_BATTERY_WH,
};
use parkwise_core::scenario::ScenarioConfig;
use parkwise_core::world::{RunOptions, World};
use parkwise_core::{NodeId, SharedDatastore, SimTime};

#[derive(Debug, Parser)]
#[command(
    name = "parkwise",
    version,
    about = "Parking and traffic sensing for a supermarket chain"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write metrics.csv and nodes.csv.
    Run(RunArgs),
    /// Serve the HTTP API, fed by the scenario running in real time.
    Serve(ServeArgs),
    /// Print the deployment cost sheet and power budget.
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file (TOML).
    pub config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the simulated duration, in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Write the processed-event trace (TSV) here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Silence a node for the whole run. Repeatable.
    #[arg(long = "silence-node", value_name = "ID")]
    pub silence: Vec<u32>,
    /// Directory for metrics.csv and nodes.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Scenario file (TOML).
    pub config: PathBuf,
    /// Override the scenario's api_port (0 picks a free port).
    #[arg(long)]
    pub port: Option<u16>,
    /// Serve the inventory as loaded, without running the simulation.
    #[arg(long)]
    pub no_sim: bool,
    /// Periodically save the datastore here (atomic replace).
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Wall-clock milliseconds between simulation steps.
    #[arg(long, default_value_t = 100)]
    pub step_ms: u64,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Size for the reference branch: 90 slots, 8 traffic nodes.
    #[arg(long, conflicts_with_all = ["parking", "traffic", "coordinators"])]
    pub sultan_center: bool,
    #[arg(long, default_value_t = 0)]
    pub parking: i64,
    #[arg(long, default_value_t = 0)]
    pub traffic: i64,
    /// Defaults to one per populated role.
    #[arg(long)]
    pub coordinators: Option<i64>,
    #[arg(long, default_value_t = 1)]
    pub maintenance_years: i64,
    #[arg(long, default_value_t = DEFAULT_BATTERY_WH)]
    pub battery_wh: f64,
    /// Mesh hops used for the node power figure.
    #[arg(long, default_value_t = 1)]
    pub hops: u32,
    /// Also write the cost sheet as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(&args).map(|report| print!("{}", report.summary())),
        Command::Serve(args) => serve(args),
        Command::Plan(args) => {
            print!("{}", plan(&args)?);
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::load(path).with_context(|| format!("scenario {}", path.display()))
}

/// Run to completion, write the CSV artifacts, and fail on any violated
/// invariant.
pub fn run(args: &RunArgs) -> Result<MetricsReport> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(d) = args.duration {
        cfg.duration_s = d;
    }
    let opts = RunOptions {
        trace: args.trace.is_some(),
        silence: args
            .silence
            .iter()
            .map(|id| (NodeId(*id), SimTime::ZERO))
            .collect(),
        keep_history: false,
    };
    let mut world = World::new(cfg, opts)?;
    let report = world.run()?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    fs::write(args.out.join("metrics.csv"), report.to_csv())?;
    fs::write(args.out.join("nodes.csv"), report.nodes_csv())?;
    if let (Some(path), Some(trace)) = (&args.trace, world.take_trace()) {
        fs::write(path, trace).with_context(|| format!("writing {}", path.display()))?;
    }
    let violations = report.violations();
    if !violations.is_empty() {
        bail!(
            "run finished with invariant violations:\n  {}",
            violations.join("\n  ")
        );
    }
    Ok(report)
}

pub fn plan(args: &PlanArgs) -> Result<String> {
    let mut spec = if args.sultan_center {
        sultan_center_sizing()
    } else {
        DeploymentSpec::new(args.parking, args.traffic)
    };
    if let Some(c) = args.coordinators {
        spec.coordinators = c;
    }
    spec.maintenance_years = args.maintenance_years;
    let sheet = cost_estimate(&spec)?;
    if let Some(path) = &args.csv {
        fs::write(path, sheet.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    let profile = PowerProfile::default();
    let budget = power_budget(&profile, args.hops)?;
    let hours = battery_life(args.battery_wh, budget.node_average_mw)?;
    Ok(format!(
        "{} parking + {} traffic nodes, {} coordinators, {} radio modules\n\n{}\n\
         Power (report every {} ms, {} hop(s))\n  \
         node active    {:>9} mW\n  \
         node idle      {:>9} mW\n  \
         node average   {:>9.2} mW\n  \
         coordinator    {:>9} mW\n\
         Battery life at {:.2} Wh: {:.2} h\n",
        spec.parking_slots,
        spec.traffic_nodes,
        spec.coordinators,
        spec.radio_modules(),
        sheet.to_table(),
        profile.report_period.as_micros() / 1000,
        args.hops,
        budget.node_active_mw,
        budget.node_idle_mw,
        budget.node_average_mw,
        budget.coordinator_mw,
        args.battery_wh,
        hours,
    ))
}

fn serve(args: ServeArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    if args.step_ms == 0 || !(args.speed.is_finite() && args.speed > 0.0) {
        bail!("--step-ms and --speed must be positive");
    }
    let ds = if args.no_sim {
        match &cfg.inventory {
            Some(path) => Datastore::load(path)?,
            None => fixture::reference_chain(),
        }
    } else {
        parkwise_core::world::seed_datastore(&cfg)?
    };
    let datastore = SharedDatastore::new(ds);
    let world = if args.no_sim {
        None
    } else {
        Some(World::with_datastore(
            cfg.clone(),
            RunOptions::default(),
            datastore.clone(),
        )?)
    };
    let port = args.port.unwrap_or(cfg.api_port);
    let state = AppState {
        datastore: datastore.clone(),
        weights: cfg.weights,
    };

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let addr = SocketAddr::from(([0, 0, 0, 0], port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot bind port {port}"))?;
        println!("listening on http://{}", listener.local_addr()?);

        let (stop_tx, stop_rx) = tokio::sync::watch::channel(false);
        let mut sim_stop = stop_rx.clone();
        let step = Duration::from_millis(args.step_ms);
        let sim_step =
            SimTime::from_micros((args.step_ms as f64 * 1e3 * args.speed).round() as u64);
        let snapshot = args.snapshot.clone();
        let background_ds = datastore.clone();
        let background = tokio::spawn(async move {
            let mut world = world;
            let mut ticker = tokio::time::interval(step);
            loop {
                tokio::select! {
                    _ = ticker.tick() => {}
                    _ = sim_stop.changed() => break,
                }
                if let Some(w) = world.as_mut() {
                    let until = w.now() + sim_step;
                    w.run_until(until)?;
                }
                if let Some(path) = &snapshot {
                    let copy = background_ds.read().clone();
                    copy.save(path)?;
                }
            }
            anyhow::Ok(())
        });

        let mut server_stop = stop_rx;
        let server = parkwise_api::serve(listener, state, async move {
            server_stop.changed().await.ok();
        });
        let signals = async move {
            shutdown_signal().await;
            stop_tx.send(true).ok();
        };
        let (served, ()) = tokio::join!(server, signals);
        served?;
        background.await??;
        if let Some(path) = &args.snapshot {
            datastore.read().save(path)?;
        }
        println!("stopped");
        Ok(())
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    tokio::signal::ctrl_c().await.ok();
}

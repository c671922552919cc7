//! `unet` command line: scenario runs, experiments and the live service.

pub mod experiment;
pub mod live;

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use experiment::Experiment;

#[derive(Debug, Parser)]
#[command(name = "unet", version, about = "Multi-UAV communication stack simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file and print its report as JSON.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the metric series as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run one of the measurement experiments.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
        /// Write the metric series as CSV.
        #[arg(long, global = true)]
        csv: Option<PathBuf>,
    },
    /// Serve the data/service layer: UAV channels over TCP, UI clients over websocket.
    Dpsl {
        #[arg(long, default_value_t = SocketAddr::from(([0, 0, 0, 0], live::DEFAULT_UAV_PORT)))]
        listen_uav: SocketAddr,
        #[arg(long, default_value_t = SocketAddr::from(([0, 0, 0, 0], live::DEFAULT_BRIDGE_PORT)))]
        listen_bridge: SocketAddr,
        /// Simulate this scenario's UAVs against the UAV listener.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

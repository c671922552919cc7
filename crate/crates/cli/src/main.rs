use std::fs::File;
use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use unet::harness::{run_scenario, write_metrics_csv, MetricsRecord, Scenario, ScenarioError};
use unet_cli::live::{self, LiveConfig};
use unet_cli::{experiment, Cli, Command};

fn write_csv(path: &Option<std::path::PathBuf>, records: &[MetricsRecord]) -> anyhow::Result<()> {
    if let Some(p) = path {
        write_metrics_csv(records, File::create(p)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, csv } => (|| {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let report = run_scenario(&s)?;
            let mut out = io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
            write_csv(&csv, &report.metrics)
        })(),
        Command::Experiment { which, csv } => (|| {
            let o = experiment::run(&which)?;
            print!("{}", o.summary);
            write_csv(&csv, &o.records)
        })(),
        Command::Dpsl { listen_uav, listen_bridge, scenario } => (|| {
            let scenario = scenario.map(|p| Scenario::load(&p)).transpose()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let server = live::start(LiveConfig { listen_uav, listen_bridge, scenario }).await?;
                tokio::select! {
                    _ = server.join() => {}
                    _ = tokio::signal::ctrl_c() => log::info!("shutting down"),
                }
                anyhow::Ok(())
            })
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.downcast_ref::<ScenarioError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

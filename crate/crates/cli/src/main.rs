//! Command-line front end. Every subcommand talks to the HTTP service; when
//! no `--server` is given, a private instance is hosted in-process on a
//! loopback port for the duration of the command.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use drivemind_client::{Client, ClientError};
use drivemind_core::config::{BackendKind, RunConfig};
use drivemind_core::harness::{HarnessError, MemoryMode, RunSummary};
use drivemind_core::wire::{
    RenderRequest, ReplayRequest, TestRequest, TrainRequest,
};

#[derive(Parser)]
#[command(name = "drivemind", version, about = "Multi-agent driving episodes with memory-backed language agents")]
struct Cli {
    /// Base URL of a running service (e.g. http://127.0.0.1:8080). Without
    /// it the command hosts a private service in-process.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run training episodes: reflection on, memory grows and is persisted.
    Train {
        /// TOML run configuration; omitted → built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        episodes: u32,
        /// Base scenario seed; episode i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Memory store file (created if missing).
        #[arg(long)]
        memory: Option<PathBuf>,
        /// shared, per-agent, or none.
        #[arg(long)]
        memory_mode: Option<MemoryMode>,
        /// scripted or http.
        #[arg(long)]
        backend: Option<BackendKind>,
        /// Directory episode logs are written into.
        #[arg(long, default_value = "logs")]
        log_dir: PathBuf,
    },
    /// Run the frozen 20-scenario evaluation batch: reflection off, memory
    /// read-only.
    Test {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        memory: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        batch_seed: u64,
        #[arg(long)]
        memory_mode: Option<MemoryMode>,
        #[arg(long)]
        backend: Option<BackendKind>,
        #[arg(long, default_value = "logs")]
        log_dir: PathBuf,
    },
    /// Print a readable playback of a recorded episode log.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Draw SVG frames from a recorded episode log.
    Render {
        #[arg(long)]
        log: PathBuf,
        /// Half-open frame range `a..b`, or a single frame number.
        #[arg(long)]
        frames: String,
        /// Output directory for the SVG files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn map_harness(err: HarnessError) -> ClientError {
    if err.is_validation() {
        ClientError::Validation(err.to_string())
    } else {
        ClientError::Infrastructure(err.to_string())
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, ClientError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::load(p).map_err(map_harness),
    }
}

async fn connect(server: Option<String>) -> Result<Client, ClientError> {
    match server {
        Some(url) => Ok(Client::new(url)),
        None => {
            let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0))
                .await
                .map_err(|e| ClientError::Infrastructure(format!("cannot bind a local service: {e}")))?;
            let addr = listener
                .local_addr()
                .map_err(|e| ClientError::Infrastructure(e.to_string()))?;
            tokio::spawn(drivemind_service::serve(listener));
            Ok(Client::new(format!("http://{addr}")))
        }
    }
}

fn print_summary(summary: &RunSummary, csv: &str) {
    print!("{csv}");
    println!(
        "episodes scored {} | successes {} | collisions {} | timeouts {} | aborted {}",
        summary.episodes,
        summary.successes,
        summary.collision_failures,
        summary.timeout_failures,
        summary.infrastructure_failures
    );
    println!("success rate {:.2}", summary.success_rate);
    if summary.successes > 0 {
        println!(
            "mean scores over successes: safety {:.2}, efficiency {:.2}, combined {:.2}",
            summary.mean_safety, summary.mean_efficiency, summary.mean_combined
        );
    }
}

/// A batch where every single episode aborted never ran any usable work, so
/// it surfaces as an infrastructure failure rather than a quiet success.
fn reject_all_aborted(summary: &RunSummary) -> Result<(), ClientError> {
    if summary.infrastructure_failures > 0 && summary.rows.len() == summary.infrastructure_failures
    {
        return Err(ClientError::Infrastructure(format!(
            "all {} episodes aborted on infrastructure failures",
            summary.infrastructure_failures
        )));
    }
    Ok(())
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, episodes, seed, memory, memory_mode, backend, log_dir } => {
            let mut cfg = load_config(&config)?;
            if let Some(path) = memory {
                cfg.episode.memory_path = Some(path);
            }
            if let Some(mode) = memory_mode {
                cfg.episode.memory_mode = mode;
            }
            if let Some(kind) = backend {
                cfg.backend.kind = kind;
            }
            let client = connect(cli.server).await?;
            let resp = client
                .train(&TrainRequest { config: cfg, episodes, seed, log_dir: Some(log_dir) })
                .await?;
            print_summary(&resp.summary, &resp.csv);
            println!("memory records: {}", resp.memory_len);
            for file in &resp.log_files {
                println!("log: {}", file.display());
            }
            reject_all_aborted(&resp.summary)?;
        }
        Command::Test { config, memory, batch_seed, memory_mode, backend, log_dir } => {
            let mut cfg = load_config(&config)?;
            if let Some(path) = memory {
                cfg.episode.memory_path = Some(path);
            }
            if let Some(mode) = memory_mode {
                cfg.episode.memory_mode = mode;
            }
            if let Some(kind) = backend {
                cfg.backend.kind = kind;
            }
            let client = connect(cli.server).await?;
            let resp = client
                .test(&TestRequest { config: cfg, batch_seed, log_dir: Some(log_dir) })
                .await?;
            print_summary(&resp.summary, &resp.csv);
            for file in &resp.log_files {
                println!("log: {}", file.display());
            }
            reject_all_aborted(&resp.summary)?;
        }
        Command::Replay { log } => {
            let client = connect(cli.server).await?;
            let resp = client.replay(&ReplayRequest { log_path: log }).await?;
            println!(
                "episode {} | {} | agents {}",
                resp.episode_id,
                drivemind_core::harness::scenario_slug(resp.kind),
                resp.agent_ids.join(", ")
            );
            for line in &resp.lines {
                println!("{line}");
            }
        }
        Command::Render { log, frames, out } => {
            let client = connect(cli.server).await?;
            let resp = client
                .render(&RenderRequest { log_path: log, frames, out_dir: out })
                .await?;
            for file in &resp.files {
                println!("{}", file.display());
            }
            println!("{} frame(s) written", resp.files.len());
        }
        Command::Serve { addr } => {
            let listener = tokio::net::TcpListener::bind(&addr)
                .await
                .with_context(|| format!("cannot bind {addr}"))?;
            let local = listener.local_addr().context("no local address")?;
            println!("listening on http://{local}");
            drivemind_service::serve(listener).await.context("service stopped")?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<ClientError>() {
                Some(client_err) if client_err.is_validation() => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

//! `vipguard`: command-line client of the vipguard service.
//!
//! Without `--server` the command starts the service in-process on a loopback
//! port and talks to it over HTTP, so local and remote use share one path.
//!
//! On success the command prints a JSON result on stdout and exits 0. On
//! failure it prints one line `{"error":{"kind":...,"message":...}}` on stderr
//! and exits 1 (2 for command-line usage errors).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use vipguard_client::{Client, ClientError};
use vipguard_core::api::{ApiError, ConfigSource, EvalRequest, ReportRequest, SweepRequest, TrainRequest};
use vipguard_core::harness::{write_records_csv, ExperimentSpec, RunIdentity};
use vipguard_core::WorldConfig;

#[derive(Debug, Parser)]
#[command(name = "vipguard", version, about = "Train and evaluate robotic bodyguard teams")]
struct Cli {
    /// Use a running service instead of an in-process one, e.g. http://127.0.0.1:8080
    #[arg(long, global = true, env = "VIPGUARD_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one configuration and write its run directory.
    Train {
        /// Config file (TOML, or JSON with a .json extension).
        #[arg(long)]
        config: PathBuf,
        /// `key=value` with a TOML value, e.g. `seed=3` or `reward_kind="ThreatOnly"`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory [default: runs/<run name>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        /// Evaluation seed [default: the checkpoint's seed].
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the per-episode records as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every point of an experiment spec and write the report.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate the records.csv files under a directory into a report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

/// A failure reported as the machine-readable error line.
#[derive(Debug, Serialize)]
struct Failure {
    error: ApiError,
}

impl Failure {
    fn new(kind: &str, message: impl ToString) -> Self {
        Failure { error: ApiError::new(kind, message.to_string()) }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Api { error, .. } => Failure { error },
            other => {
                let kind = other.kind().to_string();
                Failure::new(&kind, other)
            }
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}

fn absolute(path: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}

/// Config file contents as TOML text.
fn config_toml(path: &Path) -> Result<String, Failure> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let cfg = WorldConfig::from_json(&text).map_err(|e| Failure::new("config", e))?;
        Ok(cfg.to_toml())
    } else {
        Ok(text)
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new("internal", e))?;
    println!("{text}");
    Ok(())
}

async fn execute(client: &Client, command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { config, overrides, out } => {
            let source = ConfigSource { toml: config_toml(&config)?, overrides };
            let out_dir = match out {
                Some(dir) => dir,
                None => {
                    let resolved = client.resolve_config(&source).await?;
                    Path::new("runs").join(RunIdentity::of(&resolved.config).slug())
                }
            };
            let resp = client.train(&TrainRequest { config: source, out_dir: absolute(&out_dir)? }).await?;
            print_json(&resp)
        }
        Command::Eval { checkpoint, episodes, seed, out } => {
            let req = EvalRequest { checkpoint: absolute(&checkpoint)?, episodes, seed };
            let resp = client.eval(&req).await?;
            if let Some(path) = out {
                write_records_csv(&path, &resp.records).map_err(|e| Failure::new(e.kind(), e))?;
            }
            print_json(&resp)
        }
        Command::Sweep { spec, jobs } => {
            let text = read(&spec)?;
            let parsed = ExperimentSpec::from_toml(&text).map_err(|e| Failure::new(e.kind(), e))?;
            let req = SweepRequest { spec: text, jobs, output_dir: Some(absolute(&parsed.output_dir)?) };
            print_json(&client.sweep(&req).await?)
        }
        Command::Report { input, out } => {
            let req = ReportRequest { in_dir: absolute(&input)?, out_dir: absolute(&out)? };
            print_json(&client.report(&req).await?)
        }
        Command::Serve { .. } => unreachable!("handled before a client exists"),
    }
}

async fn main_async(cli: Cli) -> Result<(), Failure> {
    if let Command::Serve { addr } = cli.command {
        let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
        let (listener, local) = vipguard_server::bind(addr).await.map_err(|e| Failure::new("io", e))?;
        eprintln!("listening on http://{local}");
        return vipguard_server::serve(listener).await.map_err(|e| Failure::new("io", e));
    }
    let client = match cli.server {
        Some(url) => Client::new(url),
        None => {
            let any_port = SocketAddr::from(([127, 0, 0, 1], 0));
            let (listener, local) = vipguard_server::bind(any_port).await.map_err(|e| Failure::new("io", e))?;
            tokio::spawn(vipguard_server::serve(listener));
            Client::new(format!("http://{local}"))
        }
    };
    execute(&client, cli.command).await
}

fn fail(failure: &Failure, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::to_string(failure).expect("error line serializes"));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail(&Failure::new("usage", first), 2);
        }
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => return fail(&Failure::new("internal", e), 1),
    };
    match runtime.block_on(main_async(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(&f, 1),
    }
}

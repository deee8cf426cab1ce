//! `specdyn`: run specialisation-dynamics experiments and write CSV/JSON artifacts.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::Parser;
use serde_json::{json, Value};

use commands::ValidationFailed;
use config::{params, Command, Config, ConfigError};

#[derive(Debug, Parser)]
#[command(
    name = "specdyn",
    version,
    about = "Learning-dynamics experiments on neuron specialisation"
)]
struct Cli {
    command: Command,
    /// JSON config file (flat dotted keys, nested objects, or a run manifest).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one parameter, e.g. `--set gamma=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory; defaults to `runs/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to SPECDYN_JOBS, then all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Print the resolved parameters with their documentation and exit.
    #[arg(long)]
    print_config: bool,
}

fn jobs(cli: &Cli) -> anyhow::Result<usize> {
    if let Some(j) = cli.jobs {
        return Ok(j);
    }
    match std::env::var("SPECDYN_JOBS") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("SPECDYN_JOBS must be an integer, got {v:?}")),
        Err(_) => Ok(0),
    }
}

fn error_report(command: Command, err: &anyhow::Error) -> Value {
    if let Some(e) = err.downcast_ref::<ConfigError>() {
        return json!({
            "status": "error", "command": command.name(), "module": "config",
            "kind": e.kind, "field": e.field, "message": e.message,
        });
    }
    if let Some(e) = err.downcast_ref::<specdyn_core::Error>() {
        let field = match e {
            specdyn_core::Error::InvalidParameter { field, .. } => Some(*field),
            _ => None,
        };
        let kind = if field.is_some() {
            "out-of-range"
        } else {
            "runtime"
        };
        return json!({
            "status": "error", "command": command.name(), "module": "core",
            "kind": kind, "field": field, "message": e.to_string(),
        });
    }
    json!({
        "status": "error", "command": command.name(), "kind": "runtime",
        "message": format!("{err:#}"),
    })
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let cfg = Config::resolve(cli.command, cli.config.as_deref(), &cli.sets, cli.seed)?;
    if cli.print_config {
        let mut stdout = std::io::stdout().lock();
        for p in params(cli.command) {
            if writeln!(stdout, "{} = {}  # {}", p.key, cfg.values[&p.key], p.doc).is_err() {
                break;
            }
        }
        return Ok(());
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let n_jobs = jobs(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n_jobs)
        .build()?;
    let start = Instant::now();
    let result = pool.install(|| commands::run(&cfg, &out));
    let (report, failure) = match result {
        Ok(r) => (r, None),
        Err(e) => match e.downcast::<ValidationFailed>() {
            Ok(v) => (v.0.clone(), Some(anyhow::Error::new(v))),
            Err(e) => return Err(e),
        },
    };
    let mut manifest = json!({
        "toolkit": {"name": "specdyn", "version": env!("CARGO_PKG_VERSION")},
        "command": cli.command.name(),
        "config": cfg.to_json(),
        "jobs": pool.current_num_threads(),
        "wall_clock_seconds": start.elapsed().as_secs_f64(),
    });
    for (k, v) in report {
        manifest[k] = v;
    }
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_report(cli.command, &e));
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

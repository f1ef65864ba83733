//! Batch experiment runner: parse a TOML config, execute the named
//! experiment, emit one CSV plus a JSON sidecar. Identical config and seed
//! produce byte-identical CSV bodies; only the leading comment line (tool
//! version and timestamp) varies between runs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver budget exceeded,
//! 3 internal invariant violation.

mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use config::{ExperimentConfig, ExperimentKind};
use experiments::{CsvDoc, RunContext};

#[derive(Parser)]
#[command(
    name = "riskshare",
    version,
    about = "Risk-sharing laboratory: evaluate risk measures, conjugates, and infimal convolutions on finite probability spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run {
        config: PathBuf,
        /// Directory for the CSV/JSON artifacts (default: config's
        /// output.dir, else the current directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for parallel sweeps (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the available experiments.
    List {
        /// Machine-readable listing.
        #[arg(long)]
        json: bool,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_BUDGET: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn main() -> ExitCode {
    // clap's default exit code for usage errors is 2, which this tool
    // reserves for solver budgets; remap to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() {
                eprint!("{err}");
                EXIT_CONFIG
            } else {
                print!("{err}");
                0
            };
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::List { json } => {
            list(json);
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            out_dir,
            seed,
            threads,
        } => match run(&config, out_dir, seed, threads) {
            Ok(()) => ExitCode::SUCCESS,
            Err(code) => ExitCode::from(code),
        },
    }
}

fn list(as_json: bool) {
    if as_json {
        let entries: Vec<serde_json::Value> = ExperimentKind::all()
            .iter()
            .map(|e| serde_json::json!({ "name": e.name(), "description": e.description() }))
            .collect();
        println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({ "experiments": entries })).unwrap()
        );
    } else {
        println!("available experiments:");
        for e in ExperimentKind::all() {
            println!("  {:<18} {}", e.name(), e.description());
        }
    }
}

fn run(
    config_path: &Path,
    out_dir: Option<PathBuf>,
    seed_override: Option<u64>,
    threads: Option<usize>,
) -> Result<(), u8> {
    let raw = std::fs::read_to_string(config_path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", config_path.display());
        EXIT_CONFIG
    })?;
    let config: ExperimentConfig = toml::from_str(&raw).map_err(|e| {
        // toml errors carry line/column diagnostics
        eprintln!("error: invalid config {}:\n{e}", config_path.display());
        EXIT_CONFIG
    })?;
    config.validate().map_err(|msg| {
        eprintln!("error: invalid config {}: {msg}", config_path.display());
        EXIT_CONFIG
    })?;

    if let Some(n) = threads {
        // Ignore "already initialized": only the first run call can set it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }

    let mut hasher = Sha256::new();
    hasher.update(raw.as_bytes());
    let config_hash = format!("{:x}", hasher.finalize())[..12].to_string();

    let ctx = RunContext {
        config: &config,
        config_hash,
        seed: seed_override.or(config.seed),
    };

    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| experiments::run(&ctx)));
    let (csv, sidecar) = match outcome {
        Ok(Ok(result)) => result,
        Ok(Err(riskshare::Error::BudgetExceeded(msg))) => {
            eprintln!("error: solver budget exceeded: {msg}");
            return Err(EXIT_BUDGET);
        }
        Ok(Err(riskshare::Error::Inconclusive(msg))) => {
            eprintln!("error: classification budget exhausted: {msg}");
            return Err(EXIT_BUDGET);
        }
        Ok(Err(err)) => {
            eprintln!("error: {err}");
            return Err(EXIT_CONFIG);
        }
        Err(_) => {
            eprintln!("error: internal invariant violation");
            return Err(EXIT_INTERNAL);
        }
    };

    let dir = out_dir
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| {
        eprintln!("error: cannot create {}: {e}", dir.display());
        EXIT_CONFIG
    })?;

    let name = config.experiment.name();
    let timestamp = chrono::Utc::now().to_rfc3339();
    let version = env!("CARGO_PKG_VERSION");

    let csv_path = dir.join(format!("{name}.csv"));
    write_csv(&csv_path, &csv, version, &timestamp).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", csv_path.display());
        EXIT_CONFIG
    })?;

    let json_path = dir.join(format!("{name}.json"));
    let sidecar = serde_json::json!({
        "experiment": name,
        "version": version,
        "timestamp": timestamp,
        "config_hash": ctx.config_hash,
        "seed": ctx.seed,
        "rows": csv.rows.len(),
        "results": sidecar,
    });
    std::fs::write(&json_path, serde_json::to_string_pretty(&sidecar).unwrap()).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", json_path.display());
        EXIT_CONFIG
    })?;

    println!(
        "{name}: {} rows -> {} / {}",
        csv.rows.len(),
        csv_path.display(),
        json_path.display()
    );
    Ok(())
}

fn write_csv(path: &Path, doc: &CsvDoc, version: &str, timestamp: &str) -> std::io::Result<()> {
    let mut out = format!("# riskshare v{version} generated {timestamp}\n");
    out.push_str(&doc.body());
    std::fs::write(path, out)
}

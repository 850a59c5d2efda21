//! `decprof` — command-line pipeline profiling the decentralization of a
//! UTXO-style transaction ledger.
//!
//! Exit codes: 0 success, 2 configuration or input validation error,
//! 3 stage execution failure.

mod config;
mod manifest;
mod plot;
mod stages;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use decprof_core::txmodel::{
    generate_synthetic_chain, log_stats, parse_transactions, write_csv, write_jsonl, LogFormat,
    TransactionLog,
};

use crate::config::{Overrides, PipelineConfig};
use crate::manifest::Manifest;
use crate::stages::{ensure_stage, run_pipeline, Stage, StageCtx};

/// Error carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, or missing inputs; exit 2.
    Validation(String),
    /// A pipeline stage failed; exit 3.
    Stage { stage: String, msg: String },
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn stage(stage: &str, msg: impl Into<String>) -> Self {
        CliError::Stage {
            stage: stage.to_string(),
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Stage { .. } => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::Stage { stage, msg } => write!(f, "stage {stage} failed: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Parser)]
#[command(
    name = "decprof",
    version,
    about = "Profiles the decentralization of a UTXO-style transaction ledger"
)]
struct Cli {
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory for all outputs (overrides the config).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Synthetic-chain RNG seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Graph window mode: per-block, per-day, or cumulative (overrides the
    /// config).
    #[arg(long, global = true)]
    window: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print summary statistics of the input log as JSON.
    Stats,
    /// Generate the synthetic chain and write it to a file.
    Generate {
        /// Destination path; defaults to `<out-dir>/generated.jsonl`.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Normalize the input log into the run directory.
    Ingest,
    /// Build transaction-graph snapshots.
    Graph,
    /// Compute centrality metrics over the snapshot series.
    Centrality,
    /// Replay daily balance rankings and the supply curve.
    Balances,
    /// Compute asset-distribution curves and the decentralization degree.
    Assetdist,
    /// Measure ranking stability across day intervals.
    Stability,
    /// Compute market concentration (HHI) per entity mode.
    Hhi,
    /// Assemble the daily feature matrix.
    Features,
    /// Score baseline forecasters over the feature matrix.
    Forecast,
    /// Run the full pipeline in dependency order.
    Run,
    /// Render SVG charts from pipeline outputs.
    Plot,
}

impl Command {
    /// The stage a single-stage subcommand maps to.
    fn stage(&self) -> Option<Stage> {
        match self {
            Command::Ingest => Some(Stage::Ingest),
            Command::Graph => Some(Stage::Graph),
            Command::Centrality => Some(Stage::Centrality),
            Command::Balances => Some(Stage::Ledger),
            Command::Assetdist => Some(Stage::AssetDist),
            Command::Stability => Some(Stage::Stability),
            Command::Hhi => Some(Stage::Concentration),
            Command::Features => Some(Stage::Features),
            Command::Forecast => Some(Stage::Forecast),
            Command::Plot => Some(Stage::Plot),
            Command::Stats | Command::Generate { .. } | Command::Run => None,
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(err) = real_main(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn real_main(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads > 0 {
            // Ignore failure: the global pool may already exist in tests.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }

    let window = cli
        .window
        .as_deref()
        .map(str::parse)
        .transpose()
        .map_err(CliError::validation)?;
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    cfg.apply(&Overrides {
        out_dir: cli.out_dir,
        seed: cli.seed,
        window,
    });
    cfg.validate()?;

    match cli.command {
        Command::Stats => cmd_stats(&cfg),
        Command::Generate { file } => cmd_generate(&cfg, file),
        command => {
            let ctx = StageCtx::new(&cfg);
            std::fs::create_dir_all(&ctx.run_dir).map_err(|e| {
                CliError::validation(format!(
                    "cannot create output directory {}: {e}",
                    ctx.run_dir.display()
                ))
            })?;
            let mut manifest = Manifest::load(&ctx.run_dir);
            match command {
                Command::Run => run_pipeline(&ctx, &mut manifest),
                single => {
                    let stage = single.stage().expect("all remaining commands map to stages");
                    ensure_stage(stage, &ctx, &mut manifest).map(|_| ())
                }
            }
        }
    }
}

/// Loads the configured input in memory without touching the run directory.
fn load_input_log(cfg: &PipelineConfig) -> Result<TransactionLog, CliError> {
    match &cfg.input.path {
        Some(path) => {
            let format: LogFormat = cfg.log_format()?;
            let file = File::open(path).map_err(|e| {
                CliError::validation(format!("open {}: {e}", path.display()))
            })?;
            parse_transactions(BufReader::new(file), format)
                .map_err(|e| CliError::stage("ingest", format!("{}: {e}", path.display())))
        }
        None => generate_synthetic_chain(&cfg.input.synthetic)
            .map_err(|e| CliError::validation(format!("synthetic config: {e}"))),
    }
}

fn cmd_stats(cfg: &PipelineConfig) -> Result<(), CliError> {
    let log = load_input_log(cfg)?;
    let stats = log_stats(&log);
    let text = serde_json::to_string_pretty(&stats)
        .map_err(|e| CliError::stage("stats", e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn cmd_generate(cfg: &PipelineConfig, file: Option<PathBuf>) -> Result<(), CliError> {
    let log = generate_synthetic_chain(&cfg.input.synthetic)
        .map_err(|e| CliError::validation(format!("synthetic config: {e}")))?;
    let format: LogFormat = cfg.log_format()?;
    let path = file.unwrap_or_else(|| {
        cfg.output.dir.join(match format {
            LogFormat::Jsonl => "generated.jsonl",
            LogFormat::Csv => "generated.csv",
        })
    });
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| {
            CliError::validation(format!("cannot create {}: {e}", parent.display()))
        })?;
    }
    let write_err =
        |e: std::io::Error| CliError::stage("generate", format!("write {}: {e}", path.display()));
    let file = File::create(&path).map_err(write_err)?;
    let mut out = BufWriter::new(file);
    match format {
        LogFormat::Jsonl => write_jsonl(&log, &mut out).map_err(write_err)?,
        LogFormat::Csv => write_csv(&log, &mut out).map_err(write_err)?,
    }
    out.flush().map_err(write_err)?;
    println!("wrote {} transactions to {}", log.len(), path.display());
    Ok(())
}

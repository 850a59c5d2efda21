//! Pipeline stages: dependency ordering, content-keyed caching, and the
//! per-stage compute/write logic.
//!
//! Each stage's cache key hashes the stage name, the config fields the stage
//! reads, and the content hashes of every upstream artifact it consumes. A
//! stage whose recorded key and output hashes still match is skipped. On
//! failure a `<stage>.partial` marker is left next to the outputs and the
//! pipeline aborts with the stage name and cause.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use chrono::NaiveDate;
use decprof_core::assetdist::{
    adjacent_differences, decentralization_degree_asset, phase_criteria, proportion_curve,
    write_curves_csv, write_da_csv, write_deltas_csv, write_phases_csv, PhaseBoundaries,
};
use decprof_core::centrality::{
    compute_all, dispersion_rate, percentile_series, write_dispersion_csv, write_percentiles_csv,
    CentralityMap, DispersionPoint, Metric,
};
use decprof_core::concentration::{
    a1_holdings, a2_holdings, cluster_a2, d_hhi, default_events, event_annotations, hhi,
    write_hhi_csv, EntityMode,
};
use decprof_core::features::{
    assemble_features, column, daily_agg_columns, fee_target, forecast, read_series_csv,
    split_dataset, write_features_csv, write_forecast_csv, DailyFeatures, FeatureColumn,
    FeatureError, FeatureMatrix, FeatureSet, ForecastConfig as CoreForecastConfig,
    ForecastReportRow,
};
use decprof_core::graph::{snapshot_series, DatedSnapshot, WindowMode};
use decprof_core::ledger::{daily_rankings, write_rankings_csv, write_supply_csv, DailyLedger};
use decprof_core::series::MetricSeries;
use decprof_core::stability::{stability_series, write_stability_csv, RankGroup};
use decprof_core::txmodel::{
    generate_synthetic_chain, log_stats, parse_transactions, write_jsonl, LogFormat,
    TransactionLog,
};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{PipelineConfig, TargetConfig};
use crate::manifest::{hash_file, sha256_hex, Manifest};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Ingest,
    Ledger,
    Graph,
    Centrality,
    AssetDist,
    Stability,
    Concentration,
    Features,
    Forecast,
    Plot,
}

/// The four stages with no dependencies on each other; `run` executes them
/// concurrently.
pub const ANALYSIS_STAGES: [Stage; 4] = [
    Stage::Centrality,
    Stage::AssetDist,
    Stage::Stability,
    Stage::Concentration,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Ledger => "ledger",
            Stage::Graph => "graph",
            Stage::Centrality => "centrality",
            Stage::AssetDist => "assetdist",
            Stage::Stability => "stability",
            Stage::Concentration => "concentration",
            Stage::Features => "features",
            Stage::Forecast => "forecast",
            Stage::Plot => "plot",
        }
    }

    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Ledger | Stage::Graph => &[Stage::Ingest],
            Stage::Centrality => &[Stage::Ingest, Stage::Graph],
            Stage::AssetDist | Stage::Stability => &[Stage::Ingest, Stage::Ledger],
            Stage::Concentration => &[Stage::Ingest, Stage::Ledger, Stage::Graph],
            Stage::Features => &[
                Stage::Ingest,
                Stage::Centrality,
                Stage::AssetDist,
                Stage::Stability,
                Stage::Concentration,
            ],
            Stage::Forecast => &[Stage::Features],
            Stage::Plot => &[
                Stage::Ledger,
                Stage::Centrality,
                Stage::AssetDist,
                Stage::Concentration,
            ],
        }
    }

    /// The config fields this stage itself reads. Upstream config reaches
    /// the key through dependency output hashes, so each stage lists only
    /// its own slice (plus fields whose effect is invisible in upstream
    /// artifact bytes, like `ledger.top_n` naming the full rank group).
    fn config_slice(self, cfg: &PipelineConfig) -> serde_json::Value {
        match self {
            Stage::Ingest => match &cfg.input.path {
                Some(path) => json!({ "path": path, "format": cfg.input.format }),
                None => json!({ "synthetic": cfg.input.synthetic }),
            },
            Stage::Ledger => json!({ "top_n": cfg.ledger.top_n }),
            Stage::Graph => json!({ "graph": cfg.graph }),
            Stage::Centrality => json!({
                "graph": cfg.graph,
                "percentiles": cfg.centrality.percentiles,
                "options": cfg.centrality.options,
            }),
            Stage::AssetDist => json!({ "xs": cfg.assetdist.xs }),
            Stage::Stability => json!({
                "top_n": cfg.ledger.top_n,
                "stability": cfg.stability,
            }),
            Stage::Concentration => json!({
                "graph": cfg.graph.expand,
                "concentration": cfg.concentration,
            }),
            Stage::Features => json!({
                "features": cfg.features,
                "interval": cfg.stability.intervals.iter().min(),
                "top_n": cfg.ledger.top_n,
                "modes": cfg.concentration.modes,
            }),
            Stage::Forecast => json!({ "forecast": cfg.forecast }),
            Stage::Plot => json!({}),
        }
    }

    fn run(self, ctx: &StageCtx) -> Result<Vec<PathBuf>, String> {
        match self {
            Stage::Ingest => run_ingest(ctx),
            Stage::Ledger => run_ledger(ctx),
            Stage::Graph => run_graph(ctx),
            Stage::Centrality => run_centrality(ctx),
            Stage::AssetDist => run_assetdist(ctx),
            Stage::Stability => run_stability(ctx),
            Stage::Concentration => run_concentration(ctx),
            Stage::Features => run_features(ctx),
            Stage::Forecast => run_forecast(ctx),
            Stage::Plot => crate::plot::run_plot(ctx),
        }
    }
}

/// Shared state for one pipeline invocation: the config, the run directory,
/// and lazily materialized in-memory artifacts reused across stages.
pub struct StageCtx<'a> {
    pub cfg: &'a PipelineConfig,
    pub run_dir: PathBuf,
    log: OnceLock<TransactionLog>,
    daily: OnceLock<DailyLedger>,
    /// Stages already confirmed fresh (or run) in this invocation, so
    /// repeated dependency checks skip re-hashing and re-logging.
    verified: std::sync::Mutex<HashSet<&'static str>>,
}

impl<'a> StageCtx<'a> {
    pub fn new(cfg: &'a PipelineConfig) -> Self {
        Self {
            cfg,
            run_dir: cfg.output.dir.clone(),
            log: OnceLock::new(),
            daily: OnceLock::new(),
            verified: std::sync::Mutex::new(HashSet::new()),
        }
    }

    fn is_verified(&self, stage: Stage) -> bool {
        self.verified.lock().expect("verified lock").contains(stage.name())
    }

    fn mark_verified(&self, stage: Stage) {
        self.verified.lock().expect("verified lock").insert(stage.name());
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    /// The normalized transaction log, parsed from the ingest artifact on
    /// first use. Concurrent first calls may parse twice; both results are
    /// identical and one is kept.
    fn log(&self) -> Result<&TransactionLog, String> {
        if let Some(log) = self.log.get() {
            return Ok(log);
        }
        let path = self.path("ingest/transactions.jsonl");
        let file = File::open(&path).map_err(|e| format!("open {}: {e}", path.display()))?;
        let log = parse_transactions(BufReader::new(file), LogFormat::Jsonl)
            .map_err(|e| format!("parse {}: {e}", path.display()))?;
        let _ = self.log.set(log);
        Ok(self.log.get().expect("just set"))
    }

    fn seed_log(&self, log: TransactionLog) {
        let _ = self.log.set(log);
    }

    /// Daily rankings and supply, replayed once per invocation.
    fn daily(&self) -> Result<&DailyLedger, String> {
        if let Some(d) = self.daily.get() {
            return Ok(d);
        }
        let daily = daily_rankings(self.log()?, self.cfg.ledger.top_n)
            .map_err(|e| format!("ledger replay: {e}"))?;
        let _ = self.daily.set(daily);
        Ok(self.daily.get().expect("just set"))
    }

    fn supply_at(&self) -> Result<BTreeMap<NaiveDate, u128>, String> {
        Ok(self.daily()?.supply.iter().copied().collect())
    }
}

fn partial_marker(ctx: &StageCtx, stage: Stage) -> PathBuf {
    ctx.path(&format!("{}.partial", stage.name()))
}

/// Computes the cache key for a stage whose dependencies are already
/// recorded in the manifest.
fn stage_key(stage: Stage, ctx: &StageCtx, manifest: &Manifest) -> Result<String, CliError> {
    let mut inputs: BTreeMap<String, String> = BTreeMap::new();
    for dep in stage.deps() {
        let Some(record) = manifest.stages.get(dep.name()) else {
            return Err(CliError::stage(
                stage.name(),
                format!("dependency `{}` has no manifest record", dep.name()),
            ));
        };
        for (rel, digest) in &record.outputs {
            inputs.insert(rel.clone(), digest.clone());
        }
    }
    if stage == Stage::Ingest {
        if let Some(path) = &ctx.cfg.input.path {
            let digest = hash_file(path).map_err(|e| {
                CliError::validation(format!("cannot read input {}: {e}", path.display()))
            })?;
            inputs.insert(path.display().to_string(), digest);
        }
    }
    if stage == Stage::Features {
        if let TargetConfig::External { external } = &ctx.cfg.features.target {
            let digest = hash_file(external).map_err(|e| {
                CliError::validation(format!("cannot read target {}: {e}", external.display()))
            })?;
            inputs.insert(external.display().to_string(), digest);
        }
    }
    let key_doc = json!({
        "stage": stage.name(),
        "config": stage.config_slice(ctx.cfg),
        "inputs": inputs,
    });
    Ok(sha256_hex(key_doc.to_string().as_bytes()))
}

/// Runs one stage (no caching decisions), updating the `.partial` marker
/// and the manifest. Assumes dependencies are already fresh.
fn execute_stage(
    stage: Stage,
    ctx: &StageCtx,
    manifest: &mut Manifest,
    key: String,
) -> Result<(), CliError> {
    println!("[{}] running", stage.name());
    match stage.run(ctx) {
        Ok(outputs) => {
            let _ = std::fs::remove_file(partial_marker(ctx, stage));
            manifest.record(&ctx.run_dir, stage.name(), key, &outputs)?;
            manifest.save(&ctx.run_dir)?;
            println!("[{}] done ({} outputs)", stage.name(), outputs.len());
            Ok(())
        }
        Err(msg) => {
            let marker = partial_marker(ctx, stage);
            let _ = std::fs::write(&marker, format!("{}: {msg}\n", stage.name()));
            Err(CliError::stage(stage.name(), msg))
        }
    }
}

/// Ensures a stage and (recursively) its dependencies are fresh, rerunning
/// only what the cache keys invalidate. Returns true if the stage ran.
pub fn ensure_stage(
    stage: Stage,
    ctx: &StageCtx,
    manifest: &mut Manifest,
) -> Result<bool, CliError> {
    if ctx.is_verified(stage) {
        return Ok(false);
    }
    for dep in stage.deps() {
        ensure_stage(*dep, ctx, manifest)?;
    }
    let key = stage_key(stage, ctx, manifest)?;
    if manifest.is_fresh(&ctx.run_dir, stage.name(), &key) {
        println!("[{}] cached", stage.name());
        ctx.mark_verified(stage);
        return Ok(false);
    }
    execute_stage(stage, ctx, manifest, key)?;
    ctx.mark_verified(stage);
    Ok(true)
}

/// The full pipeline: ingest, ledger, and graph in order, the four analysis
/// stages concurrently, then features and forecast.
pub fn run_pipeline(ctx: &StageCtx, manifest: &mut Manifest) -> Result<(), CliError> {
    for stage in [Stage::Ingest, Stage::Ledger, Stage::Graph] {
        ensure_stage(stage, ctx, manifest)?;
    }

    // Decide staleness up front, then run the stale analysis stages in
    // parallel. Each writes a disjoint set of files; manifest records are
    // applied afterwards in fixed order so reruns serialize identically.
    let mut stale: Vec<(Stage, String)> = Vec::new();
    for stage in ANALYSIS_STAGES {
        let key = stage_key(stage, ctx, manifest)?;
        if manifest.is_fresh(&ctx.run_dir, stage.name(), &key) {
            println!("[{}] cached", stage.name());
            ctx.mark_verified(stage);
        } else {
            stale.push((stage, key));
        }
    }
    let results: Vec<(Stage, String, Result<Vec<PathBuf>, String>)> = stale
        .into_par_iter()
        .map(|(stage, key)| {
            println!("[{}] running", stage.name());
            let result = stage.run(ctx);
            (stage, key, result)
        })
        .collect();
    let mut first_error: Option<CliError> = None;
    for (stage, key, result) in results {
        match result {
            Ok(outputs) => {
                let _ = std::fs::remove_file(partial_marker(ctx, stage));
                manifest.record(&ctx.run_dir, stage.name(), key, &outputs)?;
                ctx.mark_verified(stage);
                println!("[{}] done ({} outputs)", stage.name(), outputs.len());
            }
            Err(msg) => {
                let marker = partial_marker(ctx, stage);
                let _ = std::fs::write(&marker, format!("{}: {msg}\n", stage.name()));
                if first_error.is_none() {
                    first_error = Some(CliError::stage(stage.name(), msg));
                }
            }
        }
    }
    manifest.save(&ctx.run_dir)?;
    if let Some(err) = first_error {
        return Err(err);
    }

    for stage in [Stage::Features, Stage::Forecast] {
        ensure_stage(stage, ctx, manifest)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Stage bodies. Each returns the list of files it wrote.
// ---------------------------------------------------------------------------

fn create_parent_dirs(path: &Path) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| format!("create {}: {e}", parent.display()))?;
    }
    Ok(())
}

fn open_out(path: &Path) -> Result<BufWriter<File>, String> {
    create_parent_dirs(path)?;
    let file = File::create(path).map_err(|e| format!("create {}: {e}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> String + '_ {
    move |e| format!("write {}: {e}", path.display())
}

fn run_ingest(ctx: &StageCtx) -> Result<Vec<PathBuf>, String> {
    let cfg = ctx.cfg;
    let log = match &cfg.input.path {
        Some(path) => {
            let format: LogFormat = cfg.input.format.parse()?;
            let file =
                File::open(path).map_err(|e| format!("open {}: {e}", path.display()))?;
            parse_transactions(BufReader::new(file), format)
                .map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => generate_synthetic_chain(&cfg.input.synthetic).map_err(|e| e.to_string())?,
    };

    let tx_path = ctx.path("ingest/transactions.jsonl");
    let mut out = open_out(&tx_path)?;
    write_jsonl(&log, &mut out).map_err(io_err(&tx_path))?;
    out.flush().map_err(io_err(&tx_path))?;

    let stats_path = ctx.path("ingest/stats.json");
    let stats = log_stats(&log);
    let mut text = serde_json::to_string_pretty(&stats).map_err(|e| e.to_string())?;
    text.push('\n');
    std::fs::write(&stats_path, text).map_err(io_err(&stats_path))?;

    ctx.seed_log(log);
    Ok(vec![tx_path, stats_path])
}

fn run_ledger(ctx: &StageCtx) -> Result<Vec<PathBuf>, String> {
    let daily = ctx.daily()?;

    let rankings_path = ctx.path("ledger/rankings.csv");
    let mut out = open_out(&rankings_path)?;
    write_rankings_csv(&daily.rankings, &mut out).map_err(io_err(&rankings_path))?;
    out.flush().map_err(io_err(&rankings_path))?;

    let supply_path = ctx.path("ledger/supply.csv");
    let mut out = open_out(&supply_path)?;
    write_supply_csv(&daily.supply, &mut out).map_err(io_err(&supply_path))?;
    out.flush().map_err(io_err(&supply_path))?;

    Ok(vec![rankings_path, supply_path])
}

fn snapshots(ctx: &StageCtx) -> Result<Vec<DatedSnapshot>, String> {
    Ok(snapshot_series(
        ctx.log()?,
        ctx.cfg.graph.window,
        &ctx.cfg.graph.expand,
    ))
}

fn height_field(h: Option<u64>) -> String {
    h.map(|v| v.to_string()).unwrap_or_default()
}

fn run_graph(ctx: &StageCtx) -> Result<Vec<PathBuf>, String> {
    let series = snapshots(ctx)?;

    let summary_path = ctx.path("graph/summary.csv");
    let mut out = open_out(&summary_path)?;
    writeln!(out, "date,height,nodes,edges,total_weight_sats").map_err(io_err(&summary_path))?;
    for snap in &series {
        use num_traits::ToPrimitive;
        writeln!(
            out,
            "{},{},{},{},{}",
            snap.date,
            height_field(snap.height),
            snap.graph.node_count(),
            snap.graph.edge_count(),
            snap.graph.total_weight().to_f64().unwrap_or(0.0),
        )
        .map_err(io_err(&summary_path))?;
    }
    out.flush().map_err(io_err(&summary_path))?;

    let edges_path = ctx.path("graph/edges.csv");
    let mut out = open_out(&edges_path)?;
    writeln!(out, "date,height,src,dst,weight_sats").map_err(io_err(&edges_path))?;
    for snap in &series {
        use num_traits::ToPrimitive;
        for (s, d, w) in snap.graph.raw_edges() {
            writeln!(
                out,
                "{},{},{},{},{}",
                snap.date,
                height_field(snap.height),
                snap.graph.node_name(*s),
                snap.graph.node_name(*d),
                w.to_f64().unwrap_or(0.0),
            )
            .map_err(io_err(&edges_path))?;
        }
    }
    out.flush().map_err(io_err(&edges_path))?;

    Ok(vec![summary_path, edges_path])
}

fn run_centrality(ctx: &StageCtx) -> Result<Vec<PathBuf>, String> {
    let cfg = ctx.cfg;
    let series = snapshots(ctx)?;
    // All four metrics per snapshot; empty snapshots (no transactions in
    // the window) contribute no rows.
    let computed: Vec<(NaiveDate, Option<u64>, Vec<CentralityMap>)> = series
        .par_iter()
        .filter(|snap| !snap.graph.is_empty())
        .map(|snap| {
            (
                snap.date,
                snap.height,
                compute_all(&snap.graph, &cfg.centrality.options),
            )
        })
        .collect();

    let daily_path = ctx.path("centrality/daily.csv");
    let mut out = open_out(&daily_path)?;
    writeln!(out, "date,height,metric,level,dispersion").map_err(io_err(&daily_path))?;
    let mut dispersion_points: Vec<DispersionPoint> = Vec::new();
    for (date, height, maps) in &computed {
        for map in maps {
            if map.values.is_empty() {
                continue;
            }
            let level = map.values.iter().sum::<f64>() / map.values.len() as f64;
            let disp = dispersion_rate(map, *date);
            writeln!(
                out,
                "{},{},{},{},{}",
                date,
                height_field(*height),
                map.metric,
                level,
                disp.dispersion
            )
            .map_err(io_err(&daily_path))?;
            dispersion_points.push(disp);
        }
    }
    out.flush().map_err(io_err(&daily_path))?;

    let percentiles_path = ctx.path("centrality/percentiles.csv");
    let mut rows: Vec<(Metric, f64, MetricSeries)> = Vec::new();
    for (idx, metric) in Metric::ALL.iter().enumerate() {
        let dated: Vec<(NaiveDate, &CentralityMap)> =
            computed.iter().map(|(d, _, maps)| (*d, &maps[idx])).collect();
        let series = percentile_series(&dated, &cfg.centrality.percentiles);
        for (p, s) in cfg.centrality.percentiles.iter().zip(series) {
            rows.push((*metric, *p, s));
        }
    }
    let borrowed: Vec<(Metric, f64, &MetricSeries)> =
        rows.iter().map(|(m, p, s)| (*m, *p, s)).collect();
    let mut out = open_out(&percentiles_path)?;
    write_percentiles_csv(&borrowed, &mut out).map_err(io_err(&percentiles_path))?;
    out.flush().map_err(io_err(&percentiles_path))?;

    let dispersion_path = ctx.path("centrality/dispersion.csv");
    let mut out = open_out(&dispersion_path)?;
    write_dispersion_csv(&dispersion_points, &mut out).map_err(io_err(&dispersion_path))?;
    out.flush().map_err(io_err(&dispersion_path))?;

    Ok(vec![daily_path, percentiles_path, dispersion_path])
}

fn run_assetdist(ctx: &StageCtx) -> Result<Vec<PathBuf>, String> {
    let cfg = ctx.cfg;
    let daily = ctx.daily()?;
    let supply_at = ctx.supply_at()?;

    let mut curves = Vec::new();
    let mut da_points = Vec::new();
    for ranking in &daily.rankings {
        if ranking.total_balance() == 0 {
            log::warn!("assetdist: no balances on {}, day skipped", ranking.date);
            continue;
        }
        let supply = *supply_at.get(&ranking.date).unwrap_or(&0);
        curves.push(proportion_curve(ranking, supply, &cfg.assetdist.xs));
        da_points.push(decentralization_degree_asset(ranking).map_err(|e| e.to_string())?);
    }

    let curves_path = ctx.path("assetdist/curves.csv");
    let mut out = open_out(&curves_path)?;
    write_curves_csv(&curves, &mut out).map_err(io_err(&curves_path))?;
    out.flush().map_err(io_err(&curves_path))?;

    let delta_rows: Vec<(NaiveDate, Vec<(String, f64)>)> = curves
        .iter()
        .map(|c| Ok((c.date, adjacent_differences(c).map_err(|e| e.to_string())?)))
        .collect::<Result<_, String>>()?;
    let deltas_path = ctx.path("assetdist/deltas.csv");
    let mut out = open_out(&deltas_path)?;
    write_deltas_csv(&delta_rows, &mut out).map_err(io_err(&deltas_path))?;
    out.flush().map_err(io_err(&deltas_path))?;

    let da_path = ctx.path("assetdist/da.csv");
    let mut out = open_out(&da_path)?;
    write_da_csv(&da_points, &mut out).map_err(io_err(&da_path))?;
    out.flush().map_err(io_err(&da_path))?;

    let phases = phase_criteria(&curves, &PhaseBoundaries::default()).map_err(|e| e.to_string())?;
    let phases_path = ctx.path("assetdist/phases.csv");
    let mut out = open_out(&phases_path)?;
    write_phases_csv(&phases, &mut out).map_err(io_err(&phases_path))?;
    out.flush().map_err(io_err(&phases_path))?;

    Ok(vec![curves_path, deltas_path, da_path, phases_path])
}

fn run_stability(ctx: &StageCtx) -> Result<Vec<PathBuf>, String> {
    let cfg = ctx.cfg;
    let daily = ctx.daily()?;
    let mut groups = cfg.stability.rank_groups();
    // The whole-ranking group backs the `rank:` feature columns.
    let full = RankGroup { lo: 1, hi: cfg.ledger.top_n as u32 };
    if !groups.iter().any(|g| g.lo == full.lo && g.hi == full.hi) {
        groups.push(full);
    }
    let points = stability_series(
        &daily.rankings,
        &cfg.stability.intervals,
        &groups,
        cfg.stability.mode,
    );
    let path = ctx.path("stability/stability.csv");
    let mut out = open_out(&path)?;
    write_stability_csv(&points, &mut out).map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))?;
    Ok(vec![path])
}

fn run_concentration(ctx: &StageCtx) -> Result<Vec<PathBuf>, String> {
    let cfg = ctx.cfg;
    let daily = ctx.daily()?;
    let supply_at = ctx.supply_at()?;
    let needs_a2 = cfg.concentration.modes.contains(&EntityMode::A2Clustered);
    let cumulative = if needs_a2 {
        snapshot_series(ctx.log()?, WindowMode::Cumulative, &cfg.graph.expand)
    } else {
        Vec::new()
    };
    let graph_by_date: BTreeMap<NaiveDate, &DatedSnapshot> =
        cumulative.iter().map(|s| (s.date, s)).collect();

    let rows: Vec<(NaiveDate, EntityMode, f64, f64)> = daily
        .rankings
        .par_iter()
        .filter(|r| r.total_balance() > 0)
        .map(|ranking| {
            let supply = *supply_at.get(&ranking.date).unwrap_or(&0);
            let mut out = Vec::with_capacity(cfg.concentration.modes.len());
            for mode in &cfg.concentration.modes {
                let holdings = match mode {
                    EntityMode::A1PerAddress => a1_holdings(ranking, supply),
                    EntityMode::A2Clustered => {
                        let snap = graph_by_date
                            .get(&ranking.date)
                            .ok_or_else(|| format!("no graph for {}", ranking.date))?;
                        let keep: HashSet<String> =
                            ranking.addresses().map(String::from).collect();
                        let sub = snap.graph.induced_subgraph(&keep);
                        let assignment = cluster_a2(&sub, cfg.concentration.cluster_seed);
                        a2_holdings(ranking, &assignment, supply)
                    }
                };
                let h = hhi(&holdings).map_err(|e| e.to_string())?;
                let d = d_hhi(&holdings).map_err(|e| e.to_string())?;
                out.push((ranking.date, *mode, h, d));
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<_>>, String>>()?
        .into_iter()
        .flatten()
        .collect();

    let hhi_path = ctx.path("concentration/hhi.csv");
    let mut out = open_out(&hhi_path)?;
    write_hhi_csv(&rows, &mut out).map_err(io_err(&hhi_path))?;
    out.flush().map_err(io_err(&hhi_path))?;

    // Event labels pinned to the nearest rows of the first mode's series.
    let first_mode = cfg.concentration.modes[0];
    let hhi_series = MetricSeries::from_points(
        format!("hhi_{first_mode}"),
        rows.iter()
            .filter(|(_, m, _, _)| *m == first_mode)
            .map(|(d, _, h, _)| (*d, *h))
            .collect(),
    );
    let mut events = default_events();
    for (date, label) in &cfg.concentration.events {
        let parsed: NaiveDate = date.parse().map_err(|e| format!("event date {date}: {e}"))?;
        events.push((parsed, label.clone()));
    }
    events.sort();
    let annotations = event_annotations(&hhi_series, &events);
    let events_path = ctx.path("concentration/events.csv");
    let mut out = open_out(&events_path)?;
    writeln!(out, "label,event_date,row_date,row_index").map_err(io_err(&events_path))?;
    for a in &annotations {
        writeln!(
            out,
            "{},{},{},{}",
            a.label,
            a.event_date,
            a.row_date.map(|d| d.to_string()).unwrap_or_default(),
            a.row_index.map(|i| i.to_string()).unwrap_or_default(),
        )
        .map_err(io_err(&events_path))?;
    }
    out.flush().map_err(io_err(&events_path))?;

    Ok(vec![hhi_path, events_path])
}

// --- features ---------------------------------------------------------------

/// Reads a CSV written by this pipeline into (header, rows).
pub(crate) fn read_csv_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| format!("open {}: {e}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        rows.push(record.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub(crate) fn column_index(header: &[String], name: &str, path: &Path) -> Result<usize, String> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| format!("{}: missing column `{name}`", path.display()))
}

pub(crate) fn parse_date(s: &str, path: &Path) -> Result<NaiveDate, String> {
    s.parse()
        .map_err(|e| format!("{}: bad date `{s}`: {e}", path.display()))
}

pub(crate) fn parse_num(s: &str, path: &Path) -> Result<f64, String> {
    s.parse()
        .map_err(|e| format!("{}: bad number `{s}`: {e}", path.display()))
}

/// Block-level centrality levels and dispersions, aggregated to daily
/// avg/min/max columns per metric.
fn centrality_columns(ctx: &StageCtx) -> Result<Vec<DailyFeatures>, String> {
    let path = ctx.path("centrality/daily.csv");
    let (header, rows) = read_csv_table(&path)?;
    let date_i = column_index(&header, "date", &path)?;
    let metric_i = column_index(&header, "metric", &path)?;
    let level_i = column_index(&header, "level", &path)?;
    let disp_i = column_index(&header, "dispersion", &path)?;

    let mut levels: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    let mut disps: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for row in &rows {
        let date = parse_date(&row[date_i], &path)?;
        let metric = row[metric_i].clone();
        levels
            .entry(metric.clone())
            .or_default()
            .push((date, parse_num(&row[level_i], &path)?));
        disps
            .entry(metric)
            .or_default()
            .push((date, parse_num(&row[disp_i], &path)?));
    }
    let mut columns = Vec::new();
    for (metric, points) in &levels {
        columns.extend(daily_agg_columns(FeatureSet::Centrality, metric, points));
    }
    for (metric, points) in &disps {
        columns.extend(daily_agg_columns(
            FeatureSet::Centrality,
            &format!("{metric}_disp"),
            points,
        ));
    }
    Ok(columns)
}

/// Daily asset-distribution level: D_A, the phase criteria, and the
/// concentration indices.
fn asset_columns(ctx: &StageCtx) -> Result<Vec<DailyFeatures>, String> {
    let mut columns = Vec::new();

    let da_path = ctx.path("assetdist/da.csv");
    let (header, rows) = read_csv_table(&da_path)?;
    let date_i = column_index(&header, "date", &da_path)?;
    let da_i = column_index(&header, "d_a", &da_path)?;
    let mut da_points = Vec::new();
    for row in &rows {
        da_points.push((
            parse_date(&row[date_i], &da_path)?,
            parse_num(&row[da_i], &da_path)?,
        ));
    }
    columns.push(column(FeatureSet::Asset, "d_a", da_points));

    let phases_path = ctx.path("assetdist/phases.csv");
    let (header, rows) = read_csv_table(&phases_path)?;
    let date_i = column_index(&header, "date", &phases_path)?;
    let c1_i = column_index(&header, "c1", &phases_path)?;
    let c2_i = column_index(&header, "c2", &phases_path)?;
    let mut c1_points = Vec::new();
    let mut c2_points = Vec::new();
    for row in &rows {
        let date = parse_date(&row[date_i], &phases_path)?;
        c1_points.push((date, parse_num(&row[c1_i], &phases_path)?));
        c2_points.push((date, parse_num(&row[c2_i], &phases_path)?));
    }
    columns.push(column(FeatureSet::Asset, "c1", c1_points));
    columns.push(column(FeatureSet::Asset, "c2", c2_points));

    let hhi_path = ctx.path("concentration/hhi.csv");
    let (header, rows) = read_csv_table(&hhi_path)?;
    let date_i = column_index(&header, "date", &hhi_path)?;
    let mode_i = column_index(&header, "mode", &hhi_path)?;
    let dhhi_i = column_index(&header, "d_hhi", &hhi_path)?;
    for mode in &ctx.cfg.concentration.modes {
        let mode_name = mode.to_string();
        let mut points = Vec::new();
        for row in &rows {
            if row[mode_i] == mode_name {
                points.push((
                    parse_date(&row[date_i], &hhi_path)?,
                    parse_num(&row[dhhi_i], &hhi_path)?,
                ));
            }
        }
        columns.push(column(FeatureSet::Asset, format!("d_hhi_{mode_name}"), points));
    }
    Ok(columns)
}

/// Whole-ranking stability at the shortest configured interval.
fn rank_columns(ctx: &StageCtx) -> Result<Vec<DailyFeatures>, String> {
    let cfg = ctx.cfg;
    let interval = *cfg
        .stability
        .intervals
        .iter()
        .min()
        .expect("validated non-empty");
    let group_name = format!("1-{}", cfg.ledger.top_n);
    let path = ctx.path("stability/stability.csv");
    let (header, rows) = read_csv_table(&path)?;
    let date_i = column_index(&header, "date", &path)?;
    let interval_i = column_index(&header, "interval", &path)?;
    let group_i = column_index(&header, "group", &path)?;
    let spearman_i = column_index(&header, "spearman", &path)?;
    let retention_i = column_index(&header, "retention", &path)?;

    let mut spearman_points = Vec::new();
    let mut retention_points = Vec::new();
    for row in &rows {
        if row[interval_i] != interval.to_string() || row[group_i] != group_name {
            continue;
        }
        let date = parse_date(&row[date_i], &path)?;
        // An undefined coefficient leaves the field empty; that date then
        // drops out of the join for the spearman column only.
        if !row[spearman_i].is_empty() {
            spearman_points.push((date, parse_num(&row[spearman_i], &path)?));
        }
        retention_points.push((date, parse_num(&row[retention_i], &path)?));
    }
    Ok(vec![
        column(FeatureSet::Rank, format!("spearman:i{interval}"), spearman_points),
        column(FeatureSet::Rank, format!("retention:i{interval}"), retention_points),
    ])
}

fn load_target(ctx: &StageCtx) -> Result<MetricSeries, String> {
    match &ctx.cfg.features.target {
        TargetConfig::Named(_) => fee_target(ctx.log()?).map_err(|e| e.to_string()),
        TargetConfig::External { external } => {
            let file =
                File::open(external).map_err(|e| format!("open {}: {e}", external.display()))?;
            read_series_csv("target", BufReader::new(file))
                .map_err(|e| format!("{}: {e}", external.display()))
        }
    }
}

fn run_features(ctx: &StageCtx) -> Result<Vec<PathBuf>, String> {
    let cfg = ctx.cfg;
    let mut all_columns = Vec::new();
    if cfg.features.sets.contains(&FeatureSet::Centrality) {
        all_columns.extend(centrality_columns(ctx)?);
    }
    if cfg.features.sets.contains(&FeatureSet::Asset) {
        all_columns.extend(asset_columns(ctx)?);
    }
    if cfg.features.sets.contains(&FeatureSet::Rank) {
        all_columns.extend(rank_columns(ctx)?);
    }
    let target = load_target(ctx)?;
    let matrix = assemble_features(&all_columns, &cfg.features.sets, &target)
        .map_err(|e| e.to_string())?;
    log::info!(
        "feature matrix: {} rows x {} columns",
        matrix.row_count(),
        matrix.feature_count()
    );

    let path = ctx.path("features/matrix.csv");
    let mut out = open_out(&path)?;
    write_features_csv(&matrix, &mut out).map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))?;
    Ok(vec![path])
}

// --- forecast ----------------------------------------------------------------

/// Parses the feature matrix CSV back into memory. Labels are
/// `set:metric[:stat]`; the final column is the target.
fn read_matrix(path: &Path) -> Result<FeatureMatrix, String> {
    let (header, rows) = read_csv_table(path)?;
    if header.len() < 2 || header[0] != "date" {
        return Err(format!("{}: expected `date,...` header", path.display()));
    }
    let ncols = header.len();
    let mut dates = Vec::with_capacity(rows.len());
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); ncols - 1];
    for row in &rows {
        if row.len() != ncols {
            return Err(format!("{}: ragged row", path.display()));
        }
        dates.push(parse_date(&row[0], path)?);
        for (slot, cell) in values.iter_mut().zip(&row[1..]) {
            slot.push(parse_num(cell, path)?);
        }
    }
    let target = values.pop().expect("at least the target column");
    let target_name = header.last().expect("non-empty header").clone();
    let mut columns = Vec::new();
    for (label, vals) in header[1..ncols - 1].iter().zip(values) {
        let (set_name, rest) = label
            .split_once(':')
            .ok_or_else(|| format!("{}: bad column label `{label}`", path.display()))?;
        let set = match set_name {
            "centrality" => FeatureSet::Centrality,
            "asset" => FeatureSet::Asset,
            "rank" => FeatureSet::Rank,
            other => return Err(format!("{}: unknown feature set `{other}`", path.display())),
        };
        columns.push(FeatureColumn {
            set,
            name: rest.to_string(),
            values: vals,
        });
    }
    Ok(FeatureMatrix {
        dates,
        columns,
        target,
        target_name,
    })
}

fn restrict_sets(matrix: &FeatureMatrix, sets: &[FeatureSet]) -> FeatureMatrix {
    FeatureMatrix {
        dates: matrix.dates.clone(),
        columns: matrix
            .columns
            .iter()
            .filter(|c| sets.contains(&c.set))
            .cloned()
            .collect(),
        target: matrix.target.clone(),
        target_name: matrix.target_name.clone(),
    }
}

fn combo_label(sets: &[FeatureSet]) -> String {
    sets.iter()
        .map(|s| s.name())
        .collect::<Vec<_>>()
        .join("+")
}

fn run_forecast(ctx: &StageCtx) -> Result<Vec<PathBuf>, String> {
    let cfg = ctx.cfg;
    let matrix = read_matrix(&ctx.path("features/matrix.csv"))?;
    let mut report: Vec<ForecastReportRow> = Vec::new();
    for combo in &cfg.forecast.ablations {
        let restricted = restrict_sets(&matrix, combo);
        let (train, val, test) = split_dataset(&restricted).map_err(|e| e.to_string())?;
        let label = combo_label(combo);
        for model in &cfg.forecast.models {
            for &history in &cfg.forecast.histories {
                for &horizon in &cfg.forecast.horizons {
                    let fc = CoreForecastConfig {
                        model: *model,
                        history,
                        horizon,
                        ridge_grid: cfg.forecast.ridge_grid.clone(),
                    };
                    match forecast(&fc, &train, &val, &test) {
                        Ok(result) => report.push(ForecastReportRow {
                            model: model.name().to_string(),
                            history,
                            horizon,
                            features: label.clone(),
                            mse: result.mse,
                            mae: result.mae,
                        }),
                        Err(FeatureError::NoWindows { segment, history, horizon }) => {
                            log::warn!(
                                "forecast {model} T={history} S={horizon} ({label}): \
                                 no usable {segment} windows, skipped"
                            );
                        }
                        Err(e) => return Err(e.to_string()),
                    }
                }
            }
        }
    }
    let path = ctx.path("forecast/report.csv");
    let mut out = open_out(&path)?;
    write_forecast_csv(&report, &mut out).map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))?;
    Ok(vec![path])
}

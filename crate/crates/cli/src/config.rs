//! Pipeline configuration: one TOML file describing every stage, with CLI
//! flags layered on top. Every field has a default, so an empty config (or
//! none at all) runs the full synthetic demo pipeline.

use std::path::{Path, PathBuf};

use decprof_core::centrality::CentralityOptions;
use decprof_core::concentration::EntityMode;
use decprof_core::features::{FeatureSet, ForecastModel};
use decprof_core::graph::{ExpandOptions, WindowMode};
use decprof_core::stability::{default_groups, default_intervals, RankGroup, SpearmanMode};
use decprof_core::txmodel::{LogFormat, SyntheticChainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub graph: GraphConfig,
    pub ledger: LedgerConfig,
    pub centrality: CentralityConfig,
    pub assetdist: AssetDistConfig,
    pub stability: StabilityConfig,
    pub concentration: ConcentrationConfig,
    pub features: FeaturesConfig,
    pub forecast: ForecastConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Transaction log to ingest; absent means generate synthetically.
    pub path: Option<PathBuf>,
    /// `jsonl` or `csv`.
    pub format: String,
    pub synthetic: SyntheticChainConfig,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            path: None,
            format: "jsonl".into(),
            // Six-hour blocks stretch the default 100-block demo chain over
            // ~25 days, enough for the daily feature matrix and splits; the
            // fee jitter keeps the default forecast target from being a
            // constant series.
            synthetic: SyntheticChainConfig {
                block_interval_secs: 21_600,
                fee_per_tx: 500,
                fee_jitter: 400,
                ..SyntheticChainConfig::default()
            },
        }
    }
}

// `flatten` is incompatible with `deny_unknown_fields`, so the two sections
// embedding core option structs accept (and ignore) stray keys.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub window: WindowMode,
    #[serde(flatten)]
    pub expand: ExpandOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    /// Ranking depth for balance-based analyses.
    pub top_n: usize,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self { top_n: 5_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CentralityConfig {
    pub percentiles: Vec<f64>,
    #[serde(flatten)]
    pub options: CentralityOptions,
}

impl Default for CentralityConfig {
    fn default() -> Self {
        Self {
            percentiles: vec![50.0, 90.0, 99.0, 99.9],
            options: CentralityOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetDistConfig {
    /// Top-x cutoffs of the proportion curve.
    pub xs: Vec<usize>,
}

impl Default for AssetDistConfig {
    fn default() -> Self {
        Self {
            xs: decprof_core::assetdist::default_xs(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// Day offsets between compared rankings.
    pub intervals: Vec<u32>,
    /// Inclusive `[lo, hi]` rank bands.
    pub groups: Vec<(u32, u32)>,
    pub mode: SpearmanMode,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            intervals: default_intervals(),
            groups: default_groups().iter().map(|g| (g.lo, g.hi)).collect(),
            mode: SpearmanMode::default(),
        }
    }
}

impl StabilityConfig {
    pub fn rank_groups(&self) -> Vec<RankGroup> {
        self.groups.iter().map(|(lo, hi)| RankGroup { lo: *lo, hi: *hi }).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub modes: Vec<EntityMode>,
    /// Sweep-order seed for the community detection; 0 = ascending.
    pub cluster_seed: u64,
    /// Extra `date = label` event markers; the three defaults are built in.
    pub events: Vec<(String, String)>,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        Self {
            modes: vec![EntityMode::A1PerAddress, EntityMode::A2Clustered],
            cluster_seed: 0,
            events: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub sets: Vec<FeatureSet>,
    /// `"fee"` or `{ external = "path/to/date-value.csv" }`.
    pub target: TargetConfig,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            sets: FeatureSet::ALL.to_vec(),
            target: TargetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TargetConfig {
    Named(String),
    External { external: PathBuf },
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig::Named("fee".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub models: Vec<ForecastModel>,
    /// History lengths (days) swept per model.
    pub histories: Vec<usize>,
    /// Forecast horizons (days) swept per model.
    pub horizons: Vec<usize>,
    pub ridge_grid: Vec<f64>,
    /// Feature-set combinations reported; subsets of `features.sets`.
    pub ablations: Vec<Vec<FeatureSet>>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        use FeatureSet::{Asset, Centrality, Rank};
        Self {
            models: vec![ForecastModel::Persistence, ForecastModel::LinearAr],
            histories: decprof_core::features::DEFAULT_HISTORIES.to_vec(),
            horizons: decprof_core::features::DEFAULT_HORIZONS.to_vec(),
            ridge_grid: decprof_core::features::DEFAULT_RIDGE_GRID.to_vec(),
            ablations: vec![
                vec![Centrality],
                vec![Centrality, Asset],
                vec![Centrality, Rank],
                vec![Centrality, Asset, Rank],
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

/// Global CLI flags that override their config counterparts.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub window: Option<WindowMode>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| {
            CliError::validation(format!("config {}: {e}", path.display()))
        })
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(dir) = &overrides.out_dir {
            self.output.dir = dir.clone();
        }
        if let Some(seed) = overrides.seed {
            self.input.synthetic.seed = seed;
        }
        if let Some(window) = overrides.window {
            self.graph.window = window;
        }
    }

    pub fn log_format(&self) -> Result<LogFormat, CliError> {
        self.input
            .format
            .parse()
            .map_err(|e: String| CliError::validation(e))
    }

    /// Front-loaded validation; all failures here exit with status 2.
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::validation(msg));
        self.log_format()?;
        if let Some(path) = &self.input.path {
            if !path.exists() {
                return fail(format!("input file {} does not exist", path.display()));
            }
        } else {
            self.input
                .synthetic
                .validate()
                .map_err(|e| CliError::validation(format!("synthetic config: {e}")))?;
        }
        if self.ledger.top_n == 0 {
            return fail("ledger.top_n must be positive".into());
        }
        if self.centrality.percentiles.is_empty()
            || self
                .centrality
                .percentiles
                .iter()
                .any(|p| !(0.0..=100.0).contains(p))
        {
            return fail("centrality.percentiles must be non-empty values in [0,100]".into());
        }
        if self.assetdist.xs.is_empty() || self.assetdist.xs.windows(2).any(|w| w[0] >= w[1]) {
            return fail("assetdist.xs must be non-empty and strictly increasing".into());
        }
        if self.assetdist.xs.iter().any(|x| *x == 0) {
            return fail("assetdist.xs entries must be positive".into());
        }
        if self.stability.intervals.is_empty() || self.stability.intervals.contains(&0) {
            return fail("stability.intervals must be non-empty positive day counts".into());
        }
        if self
            .stability
            .groups
            .iter()
            .any(|(lo, hi)| *lo == 0 || lo > hi)
        {
            return fail("stability.groups must be 1-based [lo, hi] ranges with lo <= hi".into());
        }
        if self.concentration.modes.is_empty() {
            return fail("concentration.modes must name at least one of a1, a2".into());
        }
        for (date, _) in &self.concentration.events {
            if date.parse::<chrono::NaiveDate>().is_err() {
                return fail(format!("concentration.events: bad date `{date}`"));
            }
        }
        if self.features.sets.is_empty() {
            return fail("features.sets must be non-empty".into());
        }
        if let TargetConfig::External { external } = &self.features.target {
            if !external.exists() {
                return fail(format!(
                    "features.target external file {} does not exist",
                    external.display()
                ));
            }
        } else if let TargetConfig::Named(name) = &self.features.target {
            if name != "fee" {
                return fail(format!(
                    "features.target must be \"fee\" or {{ external = \"path\" }}, got \"{name}\""
                ));
            }
        }
        if self.forecast.models.is_empty() {
            return fail("forecast.models must be non-empty".into());
        }
        if self.forecast.histories.is_empty() || self.forecast.histories.contains(&0) {
            return fail("forecast.histories must be non-empty positive day counts".into());
        }
        if self.forecast.horizons.is_empty() || self.forecast.horizons.contains(&0) {
            return fail("forecast.horizons must be non-empty positive day counts".into());
        }
        for combo in &self.forecast.ablations {
            if combo.is_empty() {
                return fail("forecast.ablations entries must be non-empty".into());
            }
            if let Some(missing) = combo.iter().find(|s| !self.features.sets.contains(s)) {
                return fail(format!(
                    "forecast ablation uses set `{missing}` absent from features.sets"
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_defaults() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(toml::to_string(&back).unwrap(), text);
    }

    #[test]
    fn parses_sparse_config() {
        let cfg: PipelineConfig = toml::from_str(
            r#"
            [input.synthetic]
            blocks = 40
            seed = 3

            [graph]
            window = "cumulative"

            [ledger]
            top_n = 100

            [features]
            sets = ["centrality", "asset"]
            target = "fee"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.input.synthetic.blocks, 40);
        assert_eq!(cfg.graph.window, WindowMode::Cumulative);
        assert_eq!(cfg.ledger.top_n, 100);
        assert_eq!(cfg.features.sets.len(), 2);
        // Ablations defaults mention `rank`, which the sparse config dropped.
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<PipelineConfig>("[ledger]\ntop_m = 10\n");
        assert!(err.is_err());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = PipelineConfig::default();
        cfg.apply(&Overrides {
            out_dir: Some("elsewhere".into()),
            seed: Some(99),
            window: Some(WindowMode::PerBlock),
        });
        assert_eq!(cfg.output.dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.input.synthetic.seed, 99);
        assert_eq!(cfg.graph.window, WindowMode::PerBlock);
    }

    #[test]
    fn external_target_parses() {
        let cfg: PipelineConfig = toml::from_str(
            "[features]\nsets = [\"centrality\"]\ntarget = { external = \"t.csv\" }\n",
        )
        .unwrap();
        assert_eq!(
            cfg.features.target,
            TargetConfig::External { external: "t.csv".into() }
        );
    }
}

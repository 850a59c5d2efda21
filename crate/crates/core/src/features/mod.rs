//! Daily feature assembly, chronological splits, and error metrics for the
//! forecasting baselines.
//!
//! Rows are calendar days. Assembly inner-joins the requested feature
//! columns with the target so the matrix has no missing cells; dropped
//! dates are logged. Splits are contiguous in time — leakage control here
//! is purely chronological, there is no shuffling anywhere.

mod forecast;

pub use forecast::{
    forecast, ForecastConfig, ForecastModel, ForecastResult, DEFAULT_HISTORIES, DEFAULT_HORIZONS,
    DEFAULT_RIDGE_GRID,
};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};

use chrono::NaiveDate;
use thiserror::Error;

use crate::series::{day_of, MetricSeries};
use crate::txmodel::{TransactionLog, TxError};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no dates carry every requested column and the target")]
    EmptyOverlap,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { got: usize, needed: usize },
    #[error("prediction and truth lengths differ ({pred} vs {truth})")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("{segment} segment yields no (history={history}, horizon={horizon}) windows")]
    NoWindows {
        segment: &'static str,
        history: usize,
        horizon: usize,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Centrality,
    Asset,
    Rank,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::Centrality, FeatureSet::Asset, FeatureSet::Rank];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureSet::Centrality => "centrality",
            FeatureSet::Asset => "asset",
            FeatureSet::Rank => "rank",
        }
    }
}

impl std::fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One named daily series destined for the feature matrix.
#[derive(Debug, Clone)]
pub struct DailyFeatures {
    pub set: FeatureSet,
    pub name: String,
    pub points: BTreeMap<NaiveDate, f64>,
}

/// Convenience constructor.
pub fn column(
    set: FeatureSet,
    name: impl Into<String>,
    points: impl IntoIterator<Item = (NaiveDate, f64)>,
) -> DailyFeatures {
    DailyFeatures {
        set,
        name: name.into(),
        points: points.into_iter().collect(),
    }
}

/// Total fees destroyed per day, in satoshis — the default forecast
/// target. Coinbase transactions pay no fee; days with no transactions are
/// absent.
pub fn fee_target(log: &TransactionLog) -> Result<MetricSeries, TxError> {
    let mut by_day: BTreeMap<NaiveDate, u128> = BTreeMap::new();
    for tx in log.iter() {
        let fee = if tx.is_coinbase() { 0 } else { tx.fee()? };
        *by_day.entry(day_of(tx.time)).or_default() += fee as u128;
    }
    Ok(MetricSeries::from_points(
        "fee_per_day",
        by_day
            .into_iter()
            .map(|(d, v)| (d, v as f64))
            .collect(),
    ))
}

/// Collapses block-level values to per-day (avg, min, max); days without
/// values are simply absent.
pub fn aggregate_daily(points: &[(NaiveDate, f64)]) -> Vec<(NaiveDate, f64, f64, f64)> {
    let mut by_day: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
    for (date, v) in points {
        by_day.entry(*date).or_default().push(*v);
    }
    by_day
        .into_iter()
        .map(|(date, vs)| {
            let sum: f64 = vs.iter().sum();
            let min = vs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (date, sum / vs.len() as f64, min, max)
        })
        .collect()
}

/// Expands one block-level stream into its three `name:stat` daily columns.
pub fn daily_agg_columns(
    set: FeatureSet,
    name: &str,
    points: &[(NaiveDate, f64)],
) -> Vec<DailyFeatures> {
    let agg = aggregate_daily(points);
    let pick = |f: fn(&(NaiveDate, f64, f64, f64)) -> f64, stat: &str| {
        column(
            set,
            format!("{name}:{stat}"),
            agg.iter().map(|row| (row.0, f(row))),
        )
    };
    vec![
        pick(|r| r.1, "avg"),
        pick(|r| r.2, "min"),
        pick(|r| r.3, "max"),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumn {
    pub set: FeatureSet,
    pub name: String,
    pub values: Vec<f64>,
}

impl FeatureColumn {
    /// The exported `set:metric:stat` header label.
    pub fn label(&self) -> String {
        format!("{}:{}", self.set, self.name)
    }
}

/// The assembled dataset: strictly increasing dates, gap-free columns, and
/// the raw target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<FeatureColumn>,
    pub target: Vec<f64>,
    pub target_name: String,
}

impl FeatureMatrix {
    pub fn row_count(&self) -> usize {
        self.dates.len()
    }

    pub fn feature_count(&self) -> usize {
        self.columns.len()
    }

    /// Contiguous row slice as a new matrix.
    pub fn slice(&self, range: std::ops::Range<usize>) -> FeatureMatrix {
        FeatureMatrix {
            dates: self.dates[range.clone()].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|c| FeatureColumn {
                    set: c.set,
                    name: c.name.clone(),
                    values: c.values[range.clone()].to_vec(),
                })
                .collect(),
            target: self.target[range].to_vec(),
            target_name: self.target_name.clone(),
        }
    }
}

/// Inner-joins the selected feature sets with the target on date.
pub fn assemble_features(
    features: &[DailyFeatures],
    sets: &[FeatureSet],
    target: &MetricSeries,
) -> Result<FeatureMatrix, FeatureError> {
    let selected: Vec<&DailyFeatures> =
        features.iter().filter(|f| sets.contains(&f.set)).collect();
    let target_points: BTreeMap<NaiveDate, f64> = target.points.iter().copied().collect();

    let mut candidates: BTreeSet<NaiveDate> = target_points.keys().copied().collect();
    for f in &selected {
        candidates.retain(|d| f.points.contains_key(d));
    }
    let union_len: usize = {
        let mut u: BTreeSet<NaiveDate> = target_points.keys().copied().collect();
        for f in &selected {
            u.extend(f.points.keys().copied());
        }
        u.len()
    };
    if candidates.is_empty() {
        return Err(FeatureError::EmptyOverlap);
    }
    if candidates.len() < union_len {
        log::info!(
            "feature join dropped {} of {} dates with missing values",
            union_len - candidates.len(),
            union_len
        );
    }
    let dates: Vec<NaiveDate> = candidates.into_iter().collect();
    let columns = selected
        .iter()
        .map(|f| FeatureColumn {
            set: f.set,
            name: f.name.clone(),
            values: dates.iter().map(|d| f.points[d]).collect(),
        })
        .collect();
    let target_values = dates.iter().map(|d| target_points[d]).collect();
    Ok(FeatureMatrix {
        dates,
        columns,
        target: target_values,
        target_name: target.name.clone(),
    })
}

/// Chronological 70/10/20 split at ⌊0.7·T⌋ and ⌊0.8·T⌋.
pub fn split_dataset(
    m: &FeatureMatrix,
) -> Result<(FeatureMatrix, FeatureMatrix, FeatureMatrix), FeatureError> {
    let t = m.row_count();
    if t < 10 {
        return Err(FeatureError::TooFewRows { got: t, needed: 10 });
    }
    let a = t * 7 / 10;
    let b = t * 8 / 10;
    Ok((m.slice(0..a), m.slice(a..b), m.slice(b..t)))
}

/// (MSE, MAE) of a prediction against truth.
pub fn evaluate(pred: &[f64], truth: &[f64]) -> Result<(f64, f64), FeatureError> {
    if pred.len() != truth.len() {
        return Err(FeatureError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(FeatureError::LengthMismatch { pred: 0, truth: 0 });
    }
    let n = pred.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let d = p - t;
        se += d * d;
        ae += d.abs();
    }
    Ok((se / n, ae / n))
}

/// Writes the matrix as CSV with `set:metric:stat` column labels and the
/// target last.
pub fn write_features_csv<W: Write>(m: &FeatureMatrix, mut out: W) -> std::io::Result<()> {
    let mut header = vec!["date".to_string()];
    header.extend(m.columns.iter().map(|c| c.label()));
    header.push(m.target_name.clone());
    writeln!(out, "{}", header.join(","))?;
    for (i, date) in m.dates.iter().enumerate() {
        let mut row = vec![date.to_string()];
        row.extend(m.columns.iter().map(|c| c.values[i].to_string()));
        row.push(m.target[i].to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads an external `date,value` series (an MVRV-Z style target).
pub fn read_series_csv<R: Read>(name: &str, reader: R) -> Result<MetricSeries, FeatureError> {
    let mut points: Vec<(NaiveDate, f64)> = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if lineno == 1 {
            if trimmed != "date,value" {
                return Err(FeatureError::Malformed {
                    line: 1,
                    msg: format!("expected header `date,value`, got `{trimmed}`"),
                });
            }
            continue;
        }
        let (d, v) = trimmed.split_once(',').ok_or(FeatureError::Malformed {
            line: lineno,
            msg: "expected `date,value`".into(),
        })?;
        let date: NaiveDate = d.parse().map_err(|e| FeatureError::Malformed {
            line: lineno,
            msg: format!("bad date `{d}`: {e}"),
        })?;
        let value: f64 = v.parse().map_err(|e| FeatureError::Malformed {
            line: lineno,
            msg: format!("bad value `{v}`: {e}"),
        })?;
        points.push((date, value));
    }
    points.sort_by_key(|(d, _)| *d);
    Ok(MetricSeries::from_points(name, points))
}

/// One line of the forecast report.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastReportRow {
    pub model: String,
    pub history: usize,
    pub horizon: usize,
    pub features: String,
    pub mse: f64,
    pub mae: f64,
}

/// Writes `model,T,S,features,MSE,MAE`.
pub fn write_forecast_csv<W: Write>(
    rows: &[ForecastReportRow],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "model,T,S,features,MSE,MAE")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.model, r.history, r.horizon, r.features, r.mse, r.mae
        )?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn d(offset: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2015, 1, 1).unwrap() + chrono::Days::new(offset)
    }

    /// A matrix whose only input channel is the target itself.
    pub fn target_only_matrix(values: &[f64]) -> FeatureMatrix {
        FeatureMatrix {
            dates: (0..values.len() as u64).map(d).collect(),
            columns: Vec::new(),
            target: values.to_vec(),
            target_name: "target".into(),
        }
    }
}

//! Baseline forecasters over the assembled feature matrix.
//!
//! Both models slide (history, horizon) windows over the day axis. A
//! window may reach back across the split boundary for its history, but
//! every forecast day must lie inside the segment being scored — train
//! windows predict only train rows, test windows only test rows.

use chrono::NaiveDate;
use nalgebra::DMatrix;

use super::{FeatureError, FeatureMatrix};

pub const DEFAULT_RIDGE_GRID: [f64; 6] = [0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0];
/// Fallback penalty when the unregularized normal equations are singular.
const RIDGE_FLOOR: f64 = 1e-10;

/// History lengths exercised by the pipeline sweep.
pub const DEFAULT_HISTORIES: [usize; 3] = [7, 14, 30];
/// Forecast horizons exercised by the pipeline sweep.
pub const DEFAULT_HORIZONS: [usize; 4] = [1, 7, 14, 30];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastModel {
    Persistence,
    LinearAr,
}

impl ForecastModel {
    pub fn name(&self) -> &'static str {
        match self {
            ForecastModel::Persistence => "persistence",
            ForecastModel::LinearAr => "linear_ar",
        }
    }
}

impl std::fmt::Display for ForecastModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ForecastModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "persistence" => Ok(ForecastModel::Persistence),
            "linear_ar" | "linear-ar" => Ok(ForecastModel::LinearAr),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForecastConfig {
    pub model: ForecastModel,
    /// Days of history per window (T).
    pub history: usize,
    /// Days forecast per window (S).
    pub horizon: usize,
    /// Ridge penalties tried in order; validation MSE picks the winner.
    pub ridge_grid: Vec<f64>,
}

impl ForecastConfig {
    pub fn new(model: ForecastModel, history: usize, horizon: usize) -> Self {
        Self {
            model,
            history,
            horizon,
            ridge_grid: DEFAULT_RIDGE_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForecastResult {
    pub model: ForecastModel,
    pub history: usize,
    pub horizon: usize,
    /// Scored test windows, keyed by their first forecast day.
    pub predictions: Vec<(NaiveDate, Vec<f64>)>,
    pub mse: f64,
    pub mae: f64,
    /// Ridge penalty actually used (linear_ar only).
    pub lambda: Option<f64>,
}

/// Channel-major view of the joined segments: z-scored features plus the
/// raw target as the final channel.
struct Panel {
    dates: Vec<NaiveDate>,
    channels: Vec<Vec<f64>>,
    target: Vec<f64>,
    train_end: usize,
    val_end: usize,
}

impl Panel {
    fn build(train: &FeatureMatrix, val: &FeatureMatrix, test: &FeatureMatrix) -> Panel {
        let labels: Vec<String> = train.columns.iter().map(|c| c.label()).collect();
        for m in [val, test] {
            let got: Vec<String> = m.columns.iter().map(|c| c.label()).collect();
            assert_eq!(labels, got, "split segments disagree on columns");
            assert_eq!(train.target_name, m.target_name);
        }
        let train_end = train.row_count();
        let val_end = train_end + val.row_count();

        let mut dates = train.dates.clone();
        dates.extend(&val.dates);
        dates.extend(&test.dates);
        let mut target = train.target.clone();
        target.extend(&val.target);
        target.extend(&test.target);

        let mut channels = Vec::with_capacity(labels.len() + 1);
        for (idx, col) in train.columns.iter().enumerate() {
            let mut values = col.values.clone();
            values.extend(&val.columns[idx].values);
            values.extend(&test.columns[idx].values);
            // Scale with train-only statistics so later segments stay unseen.
            let n = train_end.max(1) as f64;
            let mean = col.values.iter().sum::<f64>() / n;
            let var = col.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            let scale = if sd.is_finite() && sd > 0.0 { sd } else { 1.0 };
            for v in &mut values {
                *v = (*v - mean) / scale;
            }
            channels.push(values);
        }
        channels.push(target.clone());

        Panel {
            dates,
            channels,
            target,
            train_end,
            val_end,
        }
    }

    fn len(&self) -> usize {
        self.target.len()
    }

    /// Window start indices whose forecast days [i, i+horizon) sit inside
    /// [seg_start, seg_end) and whose history fits above index zero.
    fn windows(&self, cfg: &ForecastConfig, seg_start: usize, seg_end: usize) -> Vec<usize> {
        (seg_start..seg_end.saturating_sub(cfg.horizon - 1))
            .filter(|i| *i >= cfg.history && i + cfg.horizon <= seg_end)
            .collect()
    }

    /// Flattened design row (bias first, then time-major channel lags).
    fn design_row(&self, cfg: &ForecastConfig, i: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(1 + cfg.history * self.channels.len());
        row.push(1.0);
        for j in (i - cfg.history)..i {
            for ch in &self.channels {
                row.push(ch[j]);
            }
        }
        row
    }

    fn truth(&self, cfg: &ForecastConfig, i: usize) -> &[f64] {
        &self.target[i..i + cfg.horizon]
    }
}

fn pooled_errors(residuals: &[(Vec<f64>, &[f64])]) -> (f64, f64) {
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut n = 0usize;
    for (pred, truth) in residuals {
        for (p, t) in pred.iter().zip(truth.iter()) {
            let d = p - t;
            se += d * d;
            ae += d.abs();
            n += 1;
        }
    }
    (se / n as f64, ae / n as f64)
}

/// Ridge solve of the normal equations; the bias column is unpenalized.
/// Returns the weight matrix (D×S) or None when the solve is singular or
/// produces non-finite values.
fn ridge_solve(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Option<DMatrix<f64>> {
    let mut a = x.transpose() * x;
    for d in 1..a.nrows() {
        a[(d, d)] += lambda;
    }
    let b = x.transpose() * y;
    let w = a.lu().solve(&b)?;
    if w.iter().all(|v| v.is_finite()) {
        Some(w)
    } else {
        None
    }
}

fn predict(w: &DMatrix<f64>, row: &[f64]) -> Vec<f64> {
    let x = DMatrix::from_row_slice(1, row.len(), row);
    let y = x * w;
    y.row(0).iter().copied().collect()
}

fn run_persistence(cfg: &ForecastConfig, panel: &Panel) -> Result<ForecastResult, FeatureError> {
    let test_windows = panel.windows(cfg, panel.val_end, panel.len());
    if test_windows.is_empty() {
        return Err(FeatureError::NoWindows {
            segment: "test",
            history: cfg.history,
            horizon: cfg.horizon,
        });
    }
    let mut scored = Vec::with_capacity(test_windows.len());
    for &i in &test_windows {
        let pred = vec![panel.target[i - 1]; cfg.horizon];
        scored.push((pred, panel.truth(cfg, i)));
    }
    let (mse, mae) = pooled_errors(&scored);
    Ok(ForecastResult {
        model: cfg.model,
        history: cfg.history,
        horizon: cfg.horizon,
        predictions: test_windows
            .iter()
            .zip(&scored)
            .map(|(&i, (pred, _))| (panel.dates[i], pred.clone()))
            .collect(),
        mse,
        mae,
        lambda: None,
    })
}

fn run_linear_ar(cfg: &ForecastConfig, panel: &Panel) -> Result<ForecastResult, FeatureError> {
    let train_windows = panel.windows(cfg, 0, panel.train_end);
    if train_windows.is_empty() {
        return Err(FeatureError::NoWindows {
            segment: "train",
            history: cfg.history,
            horizon: cfg.horizon,
        });
    }
    let test_windows = panel.windows(cfg, panel.val_end, panel.len());
    if test_windows.is_empty() {
        return Err(FeatureError::NoWindows {
            segment: "test",
            history: cfg.history,
            horizon: cfg.horizon,
        });
    }
    let val_windows = panel.windows(cfg, panel.train_end, panel.val_end);

    let dim = 1 + cfg.history * panel.channels.len();
    let mut flat = Vec::with_capacity(train_windows.len() * dim);
    let mut flat_y = Vec::with_capacity(train_windows.len() * cfg.horizon);
    for &i in &train_windows {
        flat.extend(panel.design_row(cfg, i));
        flat_y.extend_from_slice(panel.truth(cfg, i));
    }
    let x = DMatrix::from_row_slice(train_windows.len(), dim, &flat);
    let y = DMatrix::from_row_slice(train_windows.len(), cfg.horizon, &flat_y);

    // Fit every grid entry, flooring singular unregularized solves.
    let mut fits: Vec<(f64, DMatrix<f64>)> = Vec::new();
    for &lambda in &cfg.ridge_grid {
        match ridge_solve(&x, &y, lambda) {
            Some(w) => fits.push((lambda, w)),
            None if lambda < RIDGE_FLOOR => {
                log::warn!(
                    "normal equations singular at lambda={lambda}; applying ridge floor {RIDGE_FLOOR}"
                );
                if let Some(w) = ridge_solve(&x, &y, RIDGE_FLOOR) {
                    fits.push((RIDGE_FLOOR, w));
                }
            }
            None => log::warn!("ridge solve failed at lambda={lambda}; skipping"),
        }
    }
    if fits.is_empty() {
        return Err(FeatureError::NoWindows {
            segment: "train",
            history: cfg.history,
            horizon: cfg.horizon,
        });
    }

    // Validation MSE picks the penalty; without val windows the first
    // surviving grid entry stands.
    let (lambda, w) = if val_windows.is_empty() {
        log::debug!("no validation windows; keeping first ridge candidate");
        fits.swap_remove(0)
    } else {
        let mut best: Option<(f64, (f64, DMatrix<f64>))> = None;
        for (lambda, w) in fits {
            let scored: Vec<(Vec<f64>, &[f64])> = val_windows
                .iter()
                .map(|&i| {
                    (
                        predict(&w, &panel.design_row(cfg, i)),
                        panel.truth(cfg, i),
                    )
                })
                .collect();
            let (mse, _) = pooled_errors(&scored);
            if best.as_ref().map_or(true, |(m, _)| mse < *m) {
                best = Some((mse, (lambda, w)));
            }
        }
        best.expect("at least one fit").1
    };

    let scored: Vec<(Vec<f64>, &[f64])> = test_windows
        .iter()
        .map(|&i| {
            (
                predict(&w, &panel.design_row(cfg, i)),
                panel.truth(cfg, i),
            )
        })
        .collect();
    let (mse, mae) = pooled_errors(&scored);
    Ok(ForecastResult {
        model: cfg.model,
        history: cfg.history,
        horizon: cfg.horizon,
        predictions: test_windows
            .iter()
            .zip(&scored)
            .map(|(&i, (pred, _))| (panel.dates[i], pred.clone()))
            .collect(),
        mse,
        mae,
        lambda: Some(lambda),
    })
}

/// Scores one model over the pre-split dataset. The segments must come
/// from the same chronological split.
pub fn forecast(
    cfg: &ForecastConfig,
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    test: &FeatureMatrix,
) -> Result<ForecastResult, FeatureError> {
    assert!(cfg.history >= 1, "history must be positive");
    assert!(cfg.horizon >= 1, "horizon must be positive");
    let panel = Panel::build(train, val, test);
    match cfg.model {
        ForecastModel::Persistence => run_persistence(cfg, &panel),
        ForecastModel::LinearAr => run_linear_ar(cfg, &panel),
    }
}

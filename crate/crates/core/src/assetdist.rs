//! Asset-distribution metrics: top-x holding proportions, adjacent-group
//! differences, and the decentralization degree D_A.
//!
//! D_A is the complement of twice the area between the realized cumulative
//! holding curve C_r and the equal-holdings diagonal C_e on the unit rank
//! axis. The rescaling (the raw rank-axis integral would grow with N and can
//! go negative) pins the value to [0,1]: 1 when all top-N balances are
//! equal, about 1/N when a single address holds everything. The raw
//! unnormalized value is carried alongside for transparency.

use std::io::Write;

use chrono::NaiveDate;
use thiserror::Error;

use crate::ledger::RankingList;

#[derive(Debug, Error)]
pub enum AssetDistError {
    #[error("adjacent differences need a curve with at least 2 points")]
    SinglePoint,
    #[error("ranking on {0} has zero total balance")]
    ZeroBalance(NaiveDate),
    #[error("phase criteria need at least 2 dated curves")]
    TooFewDates,
}

/// Default rank cutoffs: 500 to 5000 in steps of 500.
pub fn default_xs() -> Vec<usize> {
    (1..=10).map(|k| k * 500).collect()
}

/// Share of total supply held by the top-x addresses, per cutoff x.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionCurve {
    pub date: NaiveDate,
    pub points: Vec<(usize, f64)>,
}

impl ProportionCurve {
    /// The largest-x proportion (the top-5000 share under default cutoffs).
    pub fn last_proportion(&self) -> f64 {
        self.points.last().map(|(_, p)| *p).unwrap_or(0.0)
    }

    pub fn proportion_at(&self, x: usize) -> Option<f64> {
        self.points.iter().find(|(px, _)| *px == x).map(|(_, p)| *p)
    }
}

/// Builds the top-x proportion curve against `supply`. Cutoffs beyond the
/// ranking size reuse the full ranking sum.
pub fn proportion_curve(ranking: &RankingList, supply: u128, xs: &[usize]) -> ProportionCurve {
    assert!(supply > 0, "supply must be positive");
    assert!(xs.windows(2).all(|w| w[0] < w[1]), "cutoffs must ascend");
    let mut cumulative: Vec<u128> = Vec::with_capacity(ranking.entries.len() + 1);
    cumulative.push(0);
    for e in &ranking.entries {
        cumulative.push(cumulative.last().unwrap() + e.balance as u128);
    }
    let points = xs
        .iter()
        .map(|x| {
            let idx = (*x).min(ranking.entries.len());
            (*x, cumulative[idx] as f64 / supply as f64)
        })
        .collect();
    ProportionCurve {
        date: ranking.date,
        points,
    }
}

/// Differences between consecutive top-x groups, labeled `x1-x2`.
pub fn adjacent_differences(
    curve: &ProportionCurve,
) -> Result<Vec<(String, f64)>, AssetDistError> {
    if curve.points.len() < 2 {
        return Err(AssetDistError::SinglePoint);
    }
    Ok(curve
        .points
        .windows(2)
        .map(|w| (format!("{}-{}", w[0].0, w[1].0), w[1].1 - w[0].1))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecentralizationPoint {
    pub date: NaiveDate,
    /// Normalized to [0,1]; 1 means all top-N balances equal.
    pub d_a: f64,
    /// The literal rank-axis form 1 − ∫₀ᴺ (C_r − C_e) dx.
    pub d_a_unnormalized: f64,
    pub n: usize,
}

/// Trapezoidal area between the cumulative-share curve and the diagonal on
/// the N+1 rank grid, normalizing shares by `pool`.
fn curve_area(balances_desc: &[u64], pool: u128) -> f64 {
    let n = balances_desc.len();
    let mut cum: u128 = 0;
    let mut area = 0.0;
    let mut prev_f = 0.0; // C_r(0) − C_e(0) = 0
    for (j, b) in balances_desc.iter().enumerate() {
        cum += *b as u128;
        let f = cum as f64 / pool as f64 - (j + 1) as f64 / n as f64;
        area += (prev_f + f) / 2.0;
        prev_f = f;
    }
    area / n as f64
}

/// D_A of a ranking, with C_r normalized within the top-N pool so the
/// diagonal is attainable.
pub fn decentralization_degree_asset(
    ranking: &RankingList,
) -> Result<DecentralizationPoint, AssetDistError> {
    assert!(!ranking.entries.is_empty(), "ranking must be non-empty");
    let pool = ranking.total_balance();
    if pool == 0 {
        return Err(AssetDistError::ZeroBalance(ranking.date));
    }
    let balances: Vec<u64> = ranking.entries.iter().map(|e| e.balance).collect();
    let n = balances.len();
    let area = curve_area(&balances, pool);
    Ok(DecentralizationPoint {
        date: ranking.date,
        d_a: 1.0 - 2.0 * area,
        d_a_unnormalized: 1.0 - area * n as f64,
        n,
    })
}

/// Variant normalizing C_r by global supply instead of the top-N pool; the
/// diagonal is then unattainable whenever the tail holds anything, so the
/// result is not confined to [0,1].
pub fn decentralization_degree_asset_global(
    ranking: &RankingList,
    supply: u128,
) -> Result<DecentralizationPoint, AssetDistError> {
    assert!(!ranking.entries.is_empty(), "ranking must be non-empty");
    assert!(supply > 0, "supply must be positive");
    if ranking.total_balance() == 0 {
        return Err(AssetDistError::ZeroBalance(ranking.date));
    }
    let balances: Vec<u64> = ranking.entries.iter().map(|e| e.balance).collect();
    let n = balances.len();
    let area = curve_area(&balances, supply);
    Ok(DecentralizationPoint {
        date: ranking.date,
        d_a: 1.0 - 2.0 * area,
        d_a_unnormalized: 1.0 - area * n as f64,
        n,
    })
}

/// Phase-start boundary dates for labeling the history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseBoundaries(pub [NaiveDate; 3]);

impl Default for PhaseBoundaries {
    fn default() -> Self {
        Self([
            NaiveDate::from_ymd_opt(2009, 1, 9).unwrap(),
            NaiveDate::from_ymd_opt(2010, 2, 10).unwrap(),
            NaiveDate::from_ymd_opt(2012, 3, 24).unwrap(),
        ])
    }
}

impl PhaseBoundaries {
    /// 1-based phase label; dates before the first boundary fall into
    /// phase 1.
    pub fn label(&self, date: NaiveDate) -> u8 {
        let mut phase = 1;
        for (i, b) in self.0.iter().enumerate() {
            if date >= *b {
                phase = i as u8 + 1;
            }
        }
        phase
    }
}

/// C1 (largest-cutoff proportion), C2 (max adjacent delta), and their
/// first differences per date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub date: NaiveDate,
    pub c1: f64,
    pub c2: f64,
    /// First differences; 0 on the first date.
    pub dc1: f64,
    pub dc2: f64,
    pub phase: u8,
}

/// Evaluates the phase criteria over a dated curve history.
pub fn phase_criteria(
    curves: &[ProportionCurve],
    boundaries: &PhaseBoundaries,
) -> Result<Vec<PhasePoint>, AssetDistError> {
    if curves.len() < 2 {
        return Err(AssetDistError::TooFewDates);
    }
    let mut sorted: Vec<&ProportionCurve> = curves.iter().collect();
    sorted.sort_by_key(|c| c.date);
    let mut out: Vec<PhasePoint> = Vec::with_capacity(sorted.len());
    for c in sorted {
        let c1 = c.last_proportion();
        let c2 = adjacent_differences(c)?
            .into_iter()
            .map(|(_, d)| d)
            .fold(f64::NEG_INFINITY, f64::max);
        let (dc1, dc2) = match out.last() {
            Some(prev) => (c1 - prev.c1, c2 - prev.c2),
            None => (0.0, 0.0),
        };
        out.push(PhasePoint {
            date: c.date,
            c1,
            c2,
            dc1,
            dc2,
            phase: boundaries.label(c.date),
        });
    }
    Ok(out)
}

pub fn write_curves_csv<W: Write>(curves: &[ProportionCurve], mut out: W) -> std::io::Result<()> {
    writeln!(out, "date,x,proportion")?;
    for c in curves {
        for (x, p) in &c.points {
            writeln!(out, "{},{},{}", c.date, x, p)?;
        }
    }
    Ok(())
}

pub fn write_deltas_csv<W: Write>(
    rows: &[(NaiveDate, Vec<(String, f64)>)],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "date,pair,delta")?;
    for (date, deltas) in rows {
        for (pair, delta) in deltas {
            writeln!(out, "{date},{pair},{delta}")?;
        }
    }
    Ok(())
}

pub fn write_da_csv<W: Write>(
    points: &[DecentralizationPoint],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "date,d_a,d_a_unnormalized")?;
    for p in points {
        writeln!(out, "{},{},{}", p.date, p.d_a, p.d_a_unnormalized)?;
    }
    Ok(())
}

pub fn write_phases_csv<W: Write>(points: &[PhasePoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "date,c1,c2,dc1,dc2,phase")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.date, p.c1, p.c2, p.dc1, p.dc2, p.phase
        )?;
    }
    Ok(())
}

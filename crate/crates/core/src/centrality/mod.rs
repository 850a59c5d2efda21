//! Per-snapshot centrality metrics and their dispersion summaries.
//!
//! All four metrics run on the unweighted directed structure except
//! PageRank, which uses edge weights for its transition probabilities.
//! Closeness accumulates its reciprocal-distance sum in ascending node-index
//! order so results are bit-for-bit reproducible across thread schedules.

mod betweenness;
mod pagerank;

pub use betweenness::{betweenness, betweenness_exact_rational, BetweennessOptions};
pub use pagerank::{pagerank, PageRankOptions};

use std::collections::VecDeque;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::graph::GraphSnapshot;
use crate::series::MetricSeries;

/// Cap parameter for the dispersion denominator when the median collapses
/// onto the minimum.
pub const DISPERSION_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Betweenness,
    Closeness,
    InDegree,
    PageRank,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Betweenness,
        Metric::Closeness,
        Metric::InDegree,
        Metric::PageRank,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Betweenness => "betweenness",
            Metric::Closeness => "closeness",
            Metric::InDegree => "indegree",
            Metric::PageRank => "pagerank",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One metric evaluated over a snapshot; `values` is parallel to the
/// snapshot's node order.
#[derive(Debug, Clone)]
pub struct CentralityMap {
    pub metric: Metric,
    pub values: Vec<f64>,
    /// False only when an iterative metric hit its iteration cap.
    pub converged: bool,
}

impl CentralityMap {
    pub fn value_of(&self, g: &GraphSnapshot, addr: &str) -> Option<f64> {
        g.node_id(addr).map(|i| self.values[i as usize])
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Number of distinct in-neighbors per node.
pub fn in_degree(g: &GraphSnapshot) -> CentralityMap {
    let values = (0..g.node_count() as u32)
        .map(|v| g.in_neighbors(v).len() as f64)
        .collect();
    CentralityMap {
        metric: Metric::InDegree,
        values,
        converged: true,
    }
}

/// BFS distances from `s` along out-edges; `usize::MAX` marks unreachable.
pub(crate) fn bfs_distances(g: &GraphSnapshot, s: u32) -> Vec<usize> {
    let n = g.node_count();
    let mut dist = vec![usize::MAX; n];
    dist[s as usize] = 0;
    let mut queue = VecDeque::new();
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        let dv = dist[v as usize];
        for &w in g.out_neighbors(v) {
            if dist[w as usize] == usize::MAX {
                dist[w as usize] = dv + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Harmonic out-closeness: c(v) = Σ 1/dist(v,u) over reachable u ≠ v.
pub fn closeness(g: &GraphSnapshot) -> CentralityMap {
    let n = g.node_count();
    let values: Vec<f64> = (0..n as u32)
        .into_par_iter()
        .map(|v| {
            let dist = bfs_distances(g, v);
            // Fixed ascending-index summation keeps the result independent
            // of BFS visit order.
            let mut c = 0.0;
            for (u, d) in dist.iter().enumerate() {
                if u as u32 != v && *d != usize::MAX {
                    c += 1.0 / *d as f64;
                }
            }
            c
        })
        .collect();
    CentralityMap {
        metric: Metric::Closeness,
        values,
        converged: true,
    }
}

/// Linear-interpolation percentile of a sorted slice; `p` in [0,100].
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Per-date percentile summaries of a metric's value distribution; one
/// series per requested percentile. Dates with empty maps are skipped with
/// a log line.
pub fn percentile_series(
    dated: &[(NaiveDate, &CentralityMap)],
    percentiles: &[f64],
) -> Vec<MetricSeries> {
    assert!(
        percentiles.iter().all(|p| (0.0..=100.0).contains(p)),
        "percentiles must lie in [0, 100]"
    );
    let metric = dated.first().map(|(_, m)| m.metric);
    let mut series: Vec<MetricSeries> = percentiles
        .iter()
        .map(|p| {
            let name = match metric {
                Some(m) => format!("{m}:p{p}"),
                None => format!("p{p}"),
            };
            MetricSeries::new(name)
        })
        .collect();
    for (date, map) in dated {
        if map.values.is_empty() {
            log::debug!("percentile series: no {:?} values on {date}, row omitted", map.metric);
            continue;
        }
        let mut sorted = map.values.clone();
        sorted.sort_by(f64::total_cmp);
        for (s, p) in series.iter_mut().zip(percentiles) {
            s.push(*date, percentile_sorted(&sorted, *p));
        }
    }
    series
}

/// The max/min/median summary of one metric distribution and its
/// log-scaled spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionPoint {
    pub metric: Metric,
    pub date: NaiveDate,
    pub high: f64,
    pub low: f64,
    pub median: f64,
    pub dispersion: f64,
}

/// d = log2(1 + (H − L)/max(M − L, ε·(H − L))); 0 when the distribution is
/// flat. The ε cap keeps the heavy-tailed common case (median equal to the
/// minimum) finite.
pub fn dispersion_rate(map: &CentralityMap, date: NaiveDate) -> DispersionPoint {
    assert!(!map.values.is_empty(), "dispersion of an empty map");
    let mut sorted = map.values.clone();
    sorted.sort_by(f64::total_cmp);
    let low = sorted[0];
    let high = sorted[sorted.len() - 1];
    let median = percentile_sorted(&sorted, 50.0);
    let dispersion = if high == low {
        0.0
    } else {
        let spread = high - low;
        let denom = (median - low).max(DISPERSION_EPSILON * spread);
        (1.0 + spread / denom).log2()
    };
    DispersionPoint {
        metric: map.metric,
        date,
        high,
        low,
        median,
        dispersion,
    }
}

/// Options bundle for computing the full metric set on one snapshot.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CentralityOptions {
    pub betweenness: BetweennessOptions,
    pub pagerank: PageRankOptions,
}

/// All four metrics for one snapshot, in `Metric::ALL` order.
pub fn compute_all(g: &GraphSnapshot, opts: &CentralityOptions) -> Vec<CentralityMap> {
    vec![
        betweenness(g, &opts.betweenness),
        closeness(g),
        in_degree(g),
        pagerank(g, &opts.pagerank),
    ]
}

/// Writes `date,metric,percentile,value` rows for percentile series
/// produced by [`percentile_series`].
pub fn write_percentiles_csv<W: std::io::Write>(
    rows: &[(Metric, f64, &MetricSeries)],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "date,metric,percentile,value")?;
    for (metric, p, series) in rows {
        for (date, value) in &series.points {
            writeln!(out, "{date},{metric},{p},{value}")?;
        }
    }
    Ok(())
}

/// Writes `date,metric,H,L,M,dispersion` rows.
pub fn write_dispersion_csv<W: std::io::Write>(
    points: &[DispersionPoint],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "date,metric,H,L,M,dispersion")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.date, p.metric, p.high, p.low, p.median, p.dispersion
        )?;
    }
    Ok(())
}

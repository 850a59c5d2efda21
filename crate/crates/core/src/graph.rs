//! Transaction-to-graph conversion.
//!
//! Every non-coinbase transaction expands to N×M directed edges between its
//! N distinct input addresses and M distinct output addresses. The default
//! weight rule is the bilinear split
//!
//! ```text
//! w(i -> o) = V_in(i) * V_out(o) / sum(V_out)
//! ```
//!
//! which is proportional in both marginals and conserves the transaction's
//! total input value exactly; weights are kept as arbitrary-precision
//! rationals so window totals can be checked against input sums with no
//! tolerance at all. The alternative `EqualInput` rule splits each output
//! evenly across inputs (`V_out(o) / N`) and conserves output value instead.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;

use chrono::NaiveDate;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;

use crate::series::{day_of, day_start};
use crate::txmodel::{Transaction, TransactionLog};

/// How a transaction's input value is attributed across its N×M edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// w(i→o) = V_in(i)·V_out(o)/ΣV_out; edge weights sum to ΣV_in.
    #[default]
    Bilinear,
    /// w(i→o) = V_out(o)/N; edge weights sum to ΣV_out (fee dropped).
    EqualInput,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ExpandOptions {
    pub rule: WeightRule,
    /// Change returned to a sending address creates a self-edge; kept by
    /// default since the ledger model does not identify change outputs.
    pub keep_self_edges: bool,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        Self {
            rule: WeightRule::Bilinear,
            keep_self_edges: true,
        }
    }
}

/// One directed value-flow edge with an exact rational weight in satoshis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedEdge {
    pub src: String,
    pub dst: String,
    pub weight: BigRational,
}

fn big(v: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Sums values per distinct address, dropping zero-value entries.
fn dedupe_side(entries: &[crate::txmodel::TxEntry]) -> BTreeMap<&str, u64> {
    let mut m: BTreeMap<&str, u64> = BTreeMap::new();
    for e in entries {
        *m.entry(e.addr.as_str()).or_insert(0) += e.value;
    }
    m.retain(|_, v| *v > 0);
    m
}

/// Expands a transaction into its N×M weighted edges.
///
/// Coinbase transactions have no source addresses and yield no edges, as
/// does the degenerate case of a transaction whose outputs are all
/// zero-valued (there is nothing to attribute flow to).
pub fn expand_edges(tx: &Transaction, opts: &ExpandOptions) -> Vec<WeightedEdge> {
    if tx.is_coinbase() {
        return Vec::new();
    }
    let ins = dedupe_side(&tx.inputs);
    let outs = dedupe_side(&tx.outputs);
    if ins.is_empty() || outs.is_empty() {
        return Vec::new();
    }
    let out_sum = big(outs.values().copied().sum::<u64>());
    let n_in = big(ins.len() as u64);
    let mut edges = Vec::with_capacity(ins.len() * outs.len());
    for (src, v_in) in &ins {
        for (dst, v_out) in &outs {
            if !opts.keep_self_edges && src == dst {
                continue;
            }
            let weight = match opts.rule {
                WeightRule::Bilinear => big(*v_in) * big(*v_out) / &out_sum,
                WeightRule::EqualInput => big(*v_out) / &n_in,
            };
            edges.push(WeightedEdge {
                src: (*src).to_string(),
                dst: (*dst).to_string(),
                weight,
            });
        }
    }
    edges
}

/// A transaction selection window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Inclusive block-height range.
    Blocks { start: u64, end: u64 },
    /// Half-open timestamp range `[start, end)`.
    Time { start: i64, end: i64 },
    All,
}

impl Window {
    pub fn contains(&self, tx: &Transaction) -> bool {
        match *self {
            Window::Blocks { start, end } => tx.height >= start && tx.height <= end,
            Window::Time { start, end } => tx.time >= start && tx.time < end,
            Window::All => true,
        }
    }

    /// The whole UTC day `date`.
    pub fn day(date: NaiveDate) -> Self {
        let start = day_start(date);
        Window::Time {
            start,
            end: start + 86_400,
        }
    }

    /// Everything up to and including the UTC day `date`.
    pub fn through_day(date: NaiveDate) -> Self {
        Window::Time {
            start: i64::MIN,
            end: day_start(date) + 86_400,
        }
    }
}

type EdgeKey = (String, String);

/// Incrementally aggregates expanded edges; `snapshot` freezes the current
/// aggregate. Used for cumulative windows where rebuilding from scratch per
/// cut point would be quadratic.
#[derive(Debug, Clone)]
pub struct SnapshotBuilder {
    opts: ExpandOptions,
    agg: BTreeMap<EdgeKey, BigRational>,
    nodes: BTreeSet<String>,
}

impl SnapshotBuilder {
    pub fn new(opts: ExpandOptions) -> Self {
        Self {
            opts,
            agg: BTreeMap::new(),
            nodes: BTreeSet::new(),
        }
    }

    pub fn add(&mut self, tx: &Transaction) {
        for e in expand_edges(tx, &self.opts) {
            self.nodes.insert(e.src.clone());
            self.nodes.insert(e.dst.clone());
            *self
                .agg
                .entry((e.src, e.dst))
                .or_insert_with(BigRational::zero) += e.weight;
        }
    }

    pub fn snapshot(&self, window: Window) -> GraphSnapshot {
        GraphSnapshot::from_aggregate(window, &self.nodes, &self.agg)
    }
}

/// An immutable aggregated graph over one window.
///
/// Nodes are interned in ascending address order; parallel edges are merged
/// by weight summation at build time. Adjacency is stored compressed (CSR)
/// in both directions with `f64` weights for iterative algorithms, while the
/// flat edge list keeps the exact rational weights.
#[derive(Debug, Clone)]
pub struct GraphSnapshot {
    pub window: Window,
    nodes: Vec<String>,
    index: HashMap<String, u32>,
    edges: Vec<(u32, u32, BigRational)>,
    out_off: Vec<usize>,
    out_to: Vec<u32>,
    out_w: Vec<f64>,
    out_w_sum: Vec<f64>,
    in_off: Vec<usize>,
    in_from: Vec<u32>,
}

impl GraphSnapshot {
    fn from_aggregate(
        window: Window,
        nodes: &BTreeSet<String>,
        agg: &BTreeMap<EdgeKey, BigRational>,
    ) -> Self {
        let nodes: Vec<String> = nodes.iter().cloned().collect();
        let index: HashMap<String, u32> = nodes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i as u32))
            .collect();
        let mut edges: Vec<(u32, u32, BigRational)> = agg
            .iter()
            .map(|((s, d), w)| (index[s], index[d], w.clone()))
            .collect();
        edges.sort_by_key(|(s, d, _)| (*s, *d));

        let n = nodes.len();
        let mut out_off = vec![0usize; n + 1];
        let mut in_deg = vec![0usize; n];
        for (s, d, _) in &edges {
            out_off[*s as usize + 1] += 1;
            in_deg[*d as usize] += 1;
        }
        for i in 0..n {
            out_off[i + 1] += out_off[i];
        }
        let mut out_to = Vec::with_capacity(edges.len());
        let mut out_w = Vec::with_capacity(edges.len());
        for (_, d, w) in &edges {
            out_to.push(*d);
            out_w.push(w.to_f64().unwrap_or(0.0));
        }
        let out_w_sum: Vec<f64> = (0..n)
            .map(|u| out_w[out_off[u]..out_off[u + 1]].iter().sum())
            .collect();

        let mut in_off = vec![0usize; n + 1];
        for (i, d) in in_deg.iter().enumerate() {
            in_off[i + 1] = in_off[i] + d;
        }
        let mut cursor = in_off.clone();
        let mut in_from = vec![0u32; edges.len()];
        for (s, d, _) in &edges {
            in_from[cursor[*d as usize]] = *s;
            cursor[*d as usize] += 1;
        }

        Self {
            window,
            nodes,
            index,
            edges,
            out_off,
            out_to,
            out_w,
            out_w_sum,
            in_off,
            in_from,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_names(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_id(&self, addr: &str) -> Option<u32> {
        self.index.get(addr).copied()
    }

    pub fn node_name(&self, id: u32) -> &str {
        &self.nodes[id as usize]
    }

    /// Distinct out-neighbors of `u`, ascending.
    pub fn out_neighbors(&self, u: u32) -> &[u32] {
        &self.out_to[self.out_off[u as usize]..self.out_off[u as usize + 1]]
    }

    /// Aggregated weights aligned with `out_neighbors(u)`.
    pub fn out_weights(&self, u: u32) -> &[f64] {
        &self.out_w[self.out_off[u as usize]..self.out_off[u as usize + 1]]
    }

    pub fn out_weight_sum(&self, u: u32) -> f64 {
        self.out_w_sum[u as usize]
    }

    /// Distinct in-neighbors of `u` (unordered within the row).
    pub fn in_neighbors(&self, u: u32) -> &[u32] {
        &self.in_from[self.in_off[u as usize]..self.in_off[u as usize + 1]]
    }

    /// Aggregated edges as (src id, dst id, exact weight), sorted by ids.
    pub fn raw_edges(&self) -> &[(u32, u32, BigRational)] {
        &self.edges
    }

    pub fn edges(&self) -> impl Iterator<Item = WeightedEdge> + '_ {
        self.edges.iter().map(|(s, d, w)| WeightedEdge {
            src: self.nodes[*s as usize].clone(),
            dst: self.nodes[*d as usize].clone(),
            weight: w.clone(),
        })
    }

    /// Exact sum of all aggregated edge weights.
    pub fn total_weight(&self) -> BigRational {
        self.edges
            .iter()
            .fold(BigRational::zero(), |acc, (_, _, w)| acc + w)
    }

    /// Subgraph induced on `keep`: surviving nodes are those present here,
    /// surviving edges need both endpoints kept.
    pub fn induced_subgraph(&self, keep: &HashSet<String>) -> GraphSnapshot {
        let nodes: BTreeSet<String> = self
            .nodes
            .iter()
            .filter(|a| keep.contains(*a))
            .cloned()
            .collect();
        let agg: BTreeMap<EdgeKey, BigRational> = self
            .edges
            .iter()
            .filter(|(s, d, _)| {
                nodes.contains(&self.nodes[*s as usize]) && nodes.contains(&self.nodes[*d as usize])
            })
            .map(|(s, d, w)| {
                (
                    (
                        self.nodes[*s as usize].clone(),
                        self.nodes[*d as usize].clone(),
                    ),
                    w.clone(),
                )
            })
            .collect();
        GraphSnapshot::from_aggregate(self.window, &nodes, &agg)
    }
}

/// Builds the aggregated snapshot for one window, processing disjoint
/// transaction partitions in parallel and merging the partial aggregates.
pub fn build_snapshot(
    log: &TransactionLog,
    window: Window,
    opts: &ExpandOptions,
) -> GraphSnapshot {
    let in_window: Vec<&Transaction> = log.iter().filter(|t| window.contains(t)).collect();
    let chunk = (in_window.len() / rayon::current_num_threads().max(1)).max(256);
    let agg = in_window
        .par_chunks(chunk)
        .map(|txs| {
            let mut part: BTreeMap<EdgeKey, BigRational> = BTreeMap::new();
            for tx in txs {
                for e in expand_edges(tx, opts) {
                    *part
                        .entry((e.src, e.dst))
                        .or_insert_with(BigRational::zero) += e.weight;
                }
            }
            part
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (k, w) in b {
                *a.entry(k).or_insert_with(BigRational::zero) += w;
            }
            a
        });
    let mut nodes = BTreeSet::new();
    for (s, d) in agg.keys() {
        nodes.insert(s.clone());
        nodes.insert(d.clone());
    }
    GraphSnapshot::from_aggregate(window, &nodes, &agg)
}

/// Windowing cadence for snapshot series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    #[default]
    #[serde(alias = "per-block", alias = "block")]
    PerBlock,
    #[serde(alias = "per-day", alias = "day")]
    PerDay,
    Cumulative,
}

impl std::str::FromStr for WindowMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-block" | "block" => Ok(WindowMode::PerBlock),
            "per-day" | "day" => Ok(WindowMode::PerDay),
            "cumulative" => Ok(WindowMode::Cumulative),
            other => Err(format!(
                "unknown window mode `{other}` (expected per-block, per-day, or cumulative)"
            )),
        }
    }
}

/// A snapshot labeled with the date used by downstream daily series.
pub struct DatedSnapshot {
    pub date: NaiveDate,
    pub height: Option<u64>,
    pub graph: GraphSnapshot,
}

/// Materializes the snapshot series for a window mode.
///
/// Per-block yields one snapshot per block present in the log (dated by the
/// block's first transaction); per-day and cumulative yield one snapshot per
/// calendar day from the first to the last transaction day, empty days
/// included.
pub fn snapshot_series(
    log: &TransactionLog,
    mode: WindowMode,
    opts: &ExpandOptions,
) -> Vec<DatedSnapshot> {
    match mode {
        WindowMode::PerBlock => {
            let mut by_height: BTreeMap<u64, NaiveDate> = BTreeMap::new();
            for tx in log.iter() {
                by_height.entry(tx.height).or_insert_with(|| day_of(tx.time));
            }
            let heights: Vec<(u64, NaiveDate)> = by_height.into_iter().collect();
            heights
                .into_par_iter()
                .map(|(h, date)| DatedSnapshot {
                    date,
                    height: Some(h),
                    graph: build_snapshot(log, Window::Blocks { start: h, end: h }, opts),
                })
                .collect()
        }
        WindowMode::PerDay => {
            let days = day_range(log);
            days.into_par_iter()
                .map(|date| DatedSnapshot {
                    date,
                    height: None,
                    graph: build_snapshot(log, Window::day(date), opts),
                })
                .collect()
        }
        WindowMode::Cumulative => {
            let days = day_range(log);
            let mut builder = SnapshotBuilder::new(*opts);
            let mut txs = log.iter().peekable();
            let mut out = Vec::with_capacity(days.len());
            for date in days {
                while let Some(tx) = txs.peek() {
                    if day_of(tx.time) <= date {
                        builder.add(tx);
                        txs.next();
                    } else {
                        break;
                    }
                }
                out.push(DatedSnapshot {
                    date,
                    height: None,
                    graph: builder.snapshot(Window::through_day(date)),
                });
            }
            out
        }
    }
}

/// Every UTC day from the first to the last transaction, inclusive.
pub fn day_range(log: &TransactionLog) -> Vec<NaiveDate> {
    let (Some(first), Some(last)) = (log.transactions.first(), log.transactions.last()) else {
        return Vec::new();
    };
    let mut d = day_of(first.time);
    let end = day_of(last.time);
    let mut days = Vec::new();
    while d <= end {
        days.push(d);
        d = d.succ_opt().expect("date overflow");
    }
    days
}

/// Writes the aggregated edge list as `src,dst,weight_sats`.
pub fn write_edges_csv<W: Write>(g: &GraphSnapshot, mut out: W) -> std::io::Result<()> {
    writeln!(out, "src,dst,weight_sats")?;
    for (s, d, w) in g.raw_edges() {
        writeln!(
            out,
            "{},{},{}",
            g.node_name(*s),
            g.node_name(*d),
            w.to_f64().unwrap_or(0.0)
        )?;
    }
    Ok(())
}

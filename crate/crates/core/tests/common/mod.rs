//! Shared fixtures and independent oracles for the acceptance suite.
//!
//! Every oracle here recomputes its quantity from first principles —
//! brute-force path enumeration, dense iteration, pairwise sums — so a
//! library bug cannot cancel out of both sides of an assertion.

#![allow(dead_code)]

use std::collections::BTreeSet;

use decprof_core::graph::{build_snapshot, ExpandOptions, GraphSnapshot, Window};
use decprof_core::txmodel::{Transaction, TransactionLog, TxEntry};
use decprof_core::SATS_PER_COIN;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn tx(
    txid: &str,
    height: u64,
    time: i64,
    inputs: &[(&str, u64)],
    outputs: &[(&str, u64)],
) -> Transaction {
    Transaction {
        txid: txid.into(),
        height,
        time,
        inputs: inputs.iter().map(|(a, v)| TxEntry::new(*a, *v)).collect(),
        outputs: outputs.iter().map(|(a, v)| TxEntry::new(*a, *v)).collect(),
    }
}

/// Unit-weight digraph: one single-input single-output transaction per
/// distinct edge, so every edge weight is exactly one coin.
pub fn graph_of(edges: &[(String, String)]) -> GraphSnapshot {
    let distinct: BTreeSet<(String, String)> = edges.iter().cloned().collect();
    let txs: Vec<Transaction> = distinct
        .iter()
        .enumerate()
        .map(|(i, (s, d))| {
            tx(
                &format!("t{i:06}"),
                1,
                0,
                &[(s.as_str(), SATS_PER_COIN)],
                &[(d.as_str(), SATS_PER_COIN)],
            )
        })
        .collect();
    build_snapshot(&TransactionLog::new(txs), Window::All, &ExpandOptions::default())
}

/// Random digraph on `n` named nodes with edge probability `p`; self-loops
/// excluded so path structure stays simple.
pub fn random_digraph(n: usize, p: f64, seed: u64) -> GraphSnapshot {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let name = |i: usize| format!("n{i:03}");
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen::<f64>() < p {
                edges.push((name(i), name(j)));
            }
        }
    }
    // Guarantee at least one edge so the snapshot is non-empty.
    if edges.is_empty() {
        edges.push((name(0), name(1.min(n - 1))));
    }
    graph_of(&edges)
}

/// Out-adjacency lists reconstructed from the snapshot's raw edge list,
/// using the snapshot's own node numbering.
pub fn adjacency(g: &GraphSnapshot) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); g.node_count()];
    for (s, d, _) in g.raw_edges() {
        adj[*s as usize].push(*d as usize);
    }
    for row in &mut adj {
        row.sort_unstable();
        row.dedup();
    }
    adj
}

/// Plain queue-based BFS over adjacency lists; usize::MAX = unreachable.
pub fn bfs(adj: &[Vec<usize>], s: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[s] = 0;
    let mut queue = std::collections::VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Harmonic closeness by direct definition: Σ 1/d(v,u) over reachable
/// u ≠ v, accumulated in ascending node order.
pub fn closeness_oracle(adj: &[Vec<usize>]) -> Vec<f64> {
    (0..adj.len())
        .map(|v| {
            let dist = bfs(adj, v);
            let mut c = 0.0;
            for (u, d) in dist.iter().enumerate() {
                if u != v && *d != usize::MAX && *d > 0 {
                    c += 1.0 / *d as f64;
                }
            }
            c
        })
        .collect()
}

/// Shortest-path counts from `s` as exact integers, via dynamic
/// programming over nodes in ascending distance order.
fn path_counts(adj: &[Vec<usize>], s: usize, dist: &[usize]) -> Vec<BigInt> {
    let n = adj.len();
    let mut sigma = vec![BigInt::zero(); n];
    sigma[s] = BigInt::one();
    let mut order: Vec<usize> = (0..n).filter(|&v| dist[v] != usize::MAX).collect();
    order.sort_by_key(|&v| dist[v]);
    for &v in &order {
        for &w in &adj[v] {
            if dist[w] == dist[v] + 1 {
                let add = sigma[v].clone();
                sigma[w] += add;
            }
        }
    }
    sigma
}

/// Betweenness by brute force over all (s, t) pairs: the exact rational
/// fraction of s→t shortest paths passing through each interior node.
pub fn betweenness_oracle(adj: &[Vec<usize>]) -> Vec<BigRational> {
    let n = adj.len();
    let dist: Vec<Vec<usize>> = (0..n).map(|s| bfs(adj, s)).collect();
    let sigma: Vec<Vec<BigInt>> = (0..n).map(|s| path_counts(adj, s, &dist[s])).collect();
    let mut score = vec![BigRational::zero(); n];
    for s in 0..n {
        for t in 0..n {
            if s == t || dist[s][t] == usize::MAX || dist[s][t] == 0 {
                continue;
            }
            let total = sigma[s][t].clone();
            for v in 0..n {
                if v == s
                    || v == t
                    || dist[s][v] == usize::MAX
                    || dist[v][t] == usize::MAX
                    || dist[s][v] + dist[v][t] != dist[s][t]
                {
                    continue;
                }
                let through = &sigma[s][v] * &sigma[v][t];
                score[v] += BigRational::new(through, total.clone());
            }
        }
    }
    score
}

/// PageRank by dense power iteration on the explicit transition matrix.
pub fn pagerank_oracle(g: &GraphSnapshot, damping: f64, iterations: usize) -> Vec<f64> {
    let n = g.node_count();
    let mut transition = vec![vec![0.0f64; n]; n]; // transition[src][dst]
    for v in 0..n as u32 {
        let total = g.out_weight_sum(v);
        if total > 0.0 {
            for (w, wt) in g.out_neighbors(v).iter().zip(g.out_weights(v)) {
                transition[v as usize][*w as usize] += wt / total;
            }
        } else {
            for entry in &mut transition[v as usize] {
                *entry = 1.0 / n as f64;
            }
        }
    }
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..iterations {
        let mut next = vec![(1.0 - damping) / n as f64; n];
        for (src, row) in transition.iter().enumerate() {
            for (dst, p) in row.iter().enumerate() {
                next[dst] += damping * x[src] * p;
            }
        }
        x = next;
    }
    x
}

/// Pairwise (mean absolute difference) Gini coefficient.
pub fn gini(balances: &[u64]) -> f64 {
    let n = balances.len() as f64;
    let total: u128 = balances.iter().map(|b| *b as u128).sum();
    let mean = total as f64 / n;
    let mut acc = 0.0;
    for a in balances {
        for b in balances {
            acc += (*a as f64 - *b as f64).abs();
        }
    }
    acc / (2.0 * n * n * mean)
}

/// Tie-corrected Spearman via the Σd² route: average ranks, squared rank
/// differences, and per-side tie adjustments Σ(t³−t)/12.
pub fn spearman_d2_oracle(pairs: &[(i64, i64)]) -> Option<f64> {
    let n = pairs.len();
    if n < 2 {
        return None;
    }
    let xs: Vec<i64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<i64> = pairs.iter().map(|p| p.1).collect();
    let (rx, tie_x) = average_ranks(&xs);
    let (ry, tie_y) = average_ranks(&ys);
    let nf = n as f64;
    let base = (nf * nf * nf - nf) / 12.0;
    let sx = base - tie_x;
    let sy = base - tie_y;
    if sx == 0.0 || sy == 0.0 {
        return None;
    }
    let d2: f64 = rx
        .iter()
        .zip(&ry)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum();
    Some((sx + sy - d2) / (2.0 * (sx * sy).sqrt()))
}

/// Average (fractional) ranks plus the tie correction Σ(t³−t)/12.
fn average_ranks(values: &[i64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by_key(|&i| values[i]);
    let mut ranks = vec![0.0; values.len()];
    let mut correction = 0.0;
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j + 1 < values.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        let t = (j - i + 1) as f64;
        correction += (t * t * t - t) / 12.0;
        i = j + 1;
    }
    (ranks, correction)
}

/// Rational → f64 for tolerance comparisons against exact oracles.
pub fn rat_to_f64(r: &BigRational) -> f64 {
    let numer = r.numer();
    let denom = r.denom();
    // Values in these tests are small; direct conversion suffices.
    str::parse::<f64>(&numer.to_string()).unwrap() / str::parse::<f64>(&denom.to_string()).unwrap()
}

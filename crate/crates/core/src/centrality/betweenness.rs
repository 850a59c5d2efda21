//! Brandes betweenness with optional pivot sampling.
//!
//! The accumulation is generic over the arithmetic: `f64` is the production
//! path, while `BigRational` gives exact values (shortest-path counts and
//! pair dependencies are rationals, so nothing is lost to rounding). Pivot
//! sampling trades exactness for speed on large snapshots; the estimate is
//! unbiased and scaled by |V|/k.

use std::collections::VecDeque;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::{CentralityMap, Metric};
use crate::graph::GraphSnapshot;

/// Arithmetic used by the Brandes accumulation.
pub(crate) trait Accum: Clone + Send + Sync {
    fn zero() -> Self;
    fn one() -> Self;
    fn add_from(&mut self, rhs: &Self);
    /// sigma_v / sigma_w * (1 + delta_w)
    fn dependency(sigma_v: &Self, sigma_w: &Self, delta_w: &Self) -> Self;
    /// Multiply by num/den (pivot scaling).
    fn scale(&mut self, num: usize, den: usize);
}

impl Accum for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn add_from(&mut self, rhs: &Self) {
        *self += rhs;
    }
    fn dependency(sigma_v: &Self, sigma_w: &Self, delta_w: &Self) -> Self {
        sigma_v / sigma_w * (1.0 + delta_w)
    }
    fn scale(&mut self, num: usize, den: usize) {
        *self *= num as f64 / den as f64;
    }
}

impl Accum for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn add_from(&mut self, rhs: &Self) {
        *self += rhs;
    }
    fn dependency(sigma_v: &Self, sigma_w: &Self, delta_w: &Self) -> Self {
        sigma_v / sigma_w * (<BigRational as One>::one() + delta_w)
    }
    fn scale(&mut self, num: usize, den: usize) {
        *self *= BigRational::new(BigInt::from(num), BigInt::from(den));
    }
}

/// One source's dependency contributions, added into `bc`.
fn accumulate_source<T: Accum>(g: &GraphSnapshot, s: u32, bc: &mut [T]) {
    let n = g.node_count();
    let mut dist = vec![usize::MAX; n];
    let mut sigma = vec![T::zero(); n];
    let mut preds: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut order: Vec<u32> = Vec::new();

    dist[s as usize] = 0;
    sigma[s as usize] = T::one();
    let mut queue = VecDeque::new();
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        let dv = dist[v as usize];
        for &w in g.out_neighbors(v) {
            if w == v {
                continue; // self-loops never lie on shortest paths
            }
            let wi = w as usize;
            if dist[wi] == usize::MAX {
                dist[wi] = dv + 1;
                queue.push_back(w);
            }
            if dist[wi] == dv + 1 {
                let sv = sigma[v as usize].clone();
                sigma[wi].add_from(&sv);
                preds[wi].push(v);
            }
        }
    }

    let mut delta = vec![T::zero(); n];
    for &w in order.iter().rev() {
        let wi = w as usize;
        for &v in &preds[wi] {
            let add = T::dependency(&sigma[v as usize], &sigma[wi], &delta[wi]);
            delta[v as usize].add_from(&add);
        }
        if w != s {
            bc[wi].add_from(&delta[wi]);
        }
    }
}

/// Sources are processed in fixed 64-wide chunks that are summed in chunk
/// order, so float results do not depend on the thread schedule.
fn brandes<T: Accum>(g: &GraphSnapshot, sources: &[u32]) -> Vec<T> {
    let n = g.node_count();
    let partials: Vec<Vec<T>> = sources
        .par_chunks(64)
        .map(|chunk| {
            let mut acc = vec![T::zero(); n];
            for &s in chunk {
                accumulate_source(g, s, &mut acc);
            }
            acc
        })
        .collect();
    let mut bc = vec![T::zero(); n];
    for part in partials {
        for (b, x) in bc.iter_mut().zip(&part) {
            b.add_from(x);
        }
    }
    bc
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BetweennessOptions {
    /// Explicit pivot count; `None` means exact unless the graph exceeds
    /// `auto_pivot_threshold` nodes.
    pub pivot_sample: Option<usize>,
    pub auto_pivot_threshold: usize,
    pub auto_pivot_count: usize,
    /// Seed for pivot selection; irrelevant when running exact.
    pub seed: u64,
}

impl Default for BetweennessOptions {
    fn default() -> Self {
        Self {
            pivot_sample: None,
            auto_pivot_threshold: 20_000,
            auto_pivot_count: 4_096,
            seed: 42,
        }
    }
}

/// Directed unweighted shortest-path betweenness.
pub fn betweenness(g: &GraphSnapshot, opts: &BetweennessOptions) -> CentralityMap {
    let n = g.node_count();
    let pivots = match opts.pivot_sample {
        Some(k) => Some(k),
        None if n > opts.auto_pivot_threshold => Some(opts.auto_pivot_count),
        None => None,
    }
    .filter(|k| *k > 0 && *k < n);

    let values = match pivots {
        None => {
            let sources: Vec<u32> = (0..n as u32).collect();
            brandes::<f64>(g, &sources)
        }
        Some(k) => {
            let mut ids: Vec<u32> = (0..n as u32).collect();
            let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
            ids.shuffle(&mut rng);
            ids.truncate(k);
            let mut bc = brandes::<f64>(g, &ids);
            for v in &mut bc {
                Accum::scale(v, n, k);
            }
            bc
        }
    };
    CentralityMap {
        metric: Metric::Betweenness,
        values,
        converged: true,
    }
}

/// Exact betweenness in rational arithmetic over all sources.
pub fn betweenness_exact_rational(g: &GraphSnapshot) -> Vec<BigRational> {
    let sources: Vec<u32> = (0..g.node_count() as u32).collect();
    brandes::<BigRational>(g, &sources)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centrality::test_support::{graph_of, random_graph};
    use num_traits::ToPrimitive;

    /// Independent check: Floyd–Warshall distances, distance-ordered DP for
    /// path counts, then the pair-dependency sum
    /// bc(v) = Σ σ(s,v)·σ(v,t)/σ(s,t) over s≠v≠t with
    /// dist(s,v)+dist(v,t) = dist(s,t).
    fn pairwise_oracle(g: &GraphSnapshot) -> Vec<BigRational> {
        let n = g.node_count();
        const INF: usize = usize::MAX / 4;
        let mut dist = vec![vec![INF; n]; n];
        for v in 0..n {
            dist[v][v] = 0;
        }
        for (s, d, _) in g.raw_edges() {
            if s != d {
                dist[*s as usize][*d as usize] = 1;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = dist[i][k] + dist[k][j];
                    if via < dist[i][j] {
                        dist[i][j] = via;
                    }
                }
            }
        }
        // Path counts per source, filled in ascending-distance order.
        let mut sigma = vec![vec![BigInt::from(0); n]; n];
        for s in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|v| dist[s][*v] < INF).collect();
            order.sort_by_key(|v| dist[s][*v]);
            sigma[s][s] = BigInt::from(1);
            for &v in &order {
                if v == s {
                    continue;
                }
                let mut count = BigInt::from(0);
                for &u in g.in_neighbors(v as u32) {
                    let u = u as usize;
                    if u != v && dist[s][u] + 1 == dist[s][v] {
                        count += &sigma[s][u];
                    }
                }
                sigma[s][v] = count;
            }
        }
        let mut bc = vec![<BigRational as Zero>::zero(); n];
        for v in 0..n {
            for s in 0..n {
                if s == v || dist[s][v] >= INF {
                    continue;
                }
                for t in 0..n {
                    if t == s || t == v || dist[v][t] >= INF || dist[s][t] >= INF {
                        continue;
                    }
                    if dist[s][v] + dist[v][t] == dist[s][t] {
                        let through = &sigma[s][v] * &sigma[v][t];
                        bc[v] += BigRational::new(through, sigma[s][t].clone());
                    }
                }
            }
        }
        bc
    }

    #[test]
    fn path_midpoint_scores_one() {
        let g = graph_of(&[("a", "b"), ("b", "c")]);
        let m = betweenness(&g, &BetweennessOptions::default());
        assert_eq!(m.value_of(&g, "b"), Some(1.0));
        assert_eq!(m.value_of(&g, "a"), Some(0.0));
        assert_eq!(m.value_of(&g, "c"), Some(0.0));
    }

    #[test]
    fn complete_digraph_has_no_intermediaries() {
        let nodes = ["a", "b", "c", "d"];
        let mut edges = Vec::new();
        for s in nodes {
            for d in nodes {
                if s != d {
                    edges.push((s, d));
                }
            }
        }
        let g = graph_of(&edges);
        let m = betweenness(&g, &BetweennessOptions::default());
        assert!(m.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exact_rational_matches_pairwise_oracle() {
        let g = random_graph(30, 0.12, 17);
        let got = betweenness_exact_rational(&g);
        let expect = pairwise_oracle(&g);
        assert_eq!(got, expect);
    }

    #[test]
    fn float_path_tracks_exact_within_1e9() {
        let g = random_graph(40, 0.1, 23);
        let float = betweenness(&g, &BetweennessOptions::default());
        let exact = betweenness_exact_rational(&g);
        for (f, e) in float.values.iter().zip(&exact) {
            assert!((f - e.to_f64().unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn full_pivot_count_equals_exact() {
        let g = random_graph(15, 0.2, 31);
        let exact = betweenness(&g, &BetweennessOptions::default());
        let pivoted = betweenness(
            &g,
            &BetweennessOptions {
                pivot_sample: Some(15),
                ..Default::default()
            },
        );
        assert_eq!(exact.values, pivoted.values);
    }

    #[test]
    fn pivot_sampling_is_seed_deterministic() {
        let g = random_graph(30, 0.15, 41);
        let opts = BetweennessOptions {
            pivot_sample: Some(10),
            ..Default::default()
        };
        let a = betweenness(&g, &opts);
        let b = betweenness(&g, &opts);
        assert_eq!(a.values, b.values);
        let other = betweenness(
            &g,
            &BetweennessOptions {
                seed: 43,
                ..opts
            },
        );
        assert_ne!(a.values, other.values);
    }
}

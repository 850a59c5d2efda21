//! Deterministic Louvain community detection.
//!
//! Works on the undirected projection of a snapshot (directed weights
//! summed per unordered pair, self-edges dropped — they carry no
//! cross-address information). Determinism comes from fixed sweep order
//! (ascending node index, or a seeded shuffle when a nonzero seed is
//! given), strictly-positive-gain moves, and smallest-community-id
//! tie-breaking; no RNG is consulted anywhere else.

use std::collections::BTreeMap;

use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::graph::GraphSnapshot;

/// Address → community id over the clustered subgraph, plus the modularity
/// of the partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityAssignment {
    pub communities: BTreeMap<String, u32>,
    pub modularity: f64,
}

impl CommunityAssignment {
    pub fn community_of(&self, addr: &str) -> Option<u32> {
        self.communities.get(addr).copied()
    }

    pub fn community_count(&self) -> usize {
        let mut seen: Vec<u32> = self.communities.values().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Undirected weighted adjacency without self-loops.
struct Undirected {
    adj: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
    total_weight: f64, // m: each unordered pair counted once
}

fn undirected_projection(g: &GraphSnapshot) -> Undirected {
    let n = g.node_count();
    let mut pair: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (s, d, w) in g.raw_edges() {
        let (s, d) = (*s as usize, *d as usize);
        if s == d {
            continue;
        }
        let key = (s.min(d), s.max(d));
        *pair.entry(key).or_insert(0.0) += w.to_f64().unwrap_or(0.0);
    }
    let mut adj = vec![Vec::new(); n];
    let mut degree = vec![0.0; n];
    let mut total_weight = 0.0;
    for ((a, b), w) in pair {
        adj[a].push((b, w));
        adj[b].push((a, w));
        degree[a] += w;
        degree[b] += w;
        total_weight += w;
    }
    Undirected {
        adj,
        degree,
        total_weight,
    }
}

/// One level of local moves; returns the community of each node and whether
/// anything moved.
fn local_moves(u: &Undirected, order: &[usize]) -> (Vec<usize>, bool) {
    let n = u.adj.len();
    let mut community: Vec<usize> = (0..n).collect();
    let mut sum_tot: Vec<f64> = u.degree.clone();
    let two_m = 2.0 * u.total_weight;
    let mut improved_any = false;
    if two_m == 0.0 {
        return (community, false);
    }
    loop {
        let mut moved = false;
        for &v in order {
            let cv = community[v];
            // Weights from v to each adjacent community. Self-loops are
            // excluded: v's internal weight travels with v, so it cancels
            // out of every gain comparison and must not bias staying put.
            let mut to_comm: BTreeMap<usize, f64> = BTreeMap::new();
            for (nb, w) in &u.adj[v] {
                if *nb == v {
                    continue;
                }
                *to_comm.entry(community[*nb]).or_insert(0.0) += w;
            }
            // Remove v from its community.
            sum_tot[cv] -= u.degree[v];
            let kv = u.degree[v];
            // A move needs strictly better gain than staying (ties keep v
            // put, so every executed move raises modularity and the sweep
            // terminates); among better communities, near-ties fall to the
            // smallest id via the ascending BTreeMap scan.
            let mut best_comm = cv;
            let mut best_gain = to_comm.get(&cv).copied().unwrap_or(0.0) - sum_tot[cv] * kv / two_m;
            for (c, w) in &to_comm {
                if *c == cv {
                    continue;
                }
                let gain = w - sum_tot[*c] * kv / two_m;
                if gain > best_gain + 1e-12 {
                    best_gain = gain;
                    best_comm = *c;
                }
            }
            sum_tot[best_comm] += kv;
            if best_comm != cv {
                community[v] = best_comm;
                moved = true;
                improved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    (community, improved_any)
}

/// Collapses communities into super-nodes.
fn aggregate(u: &Undirected, community: &[usize]) -> (Undirected, Vec<usize>) {
    // Renumber communities densely in ascending old-id order.
    let mut ids: Vec<usize> = community.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let remap: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let dense: Vec<usize> = community.iter().map(|c| remap[c]).collect();
    let n2 = ids.len();
    let mut pair: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut loops = vec![0.0; n2];
    for (a, row) in u.adj.iter().enumerate() {
        for (b, w) in row {
            if a == *b {
                // Self-loops from earlier levels stay internal weight.
                loops[dense[a]] += w;
            } else if a < *b {
                let (ca, cb) = (dense[a], dense[*b]);
                if ca == cb {
                    loops[ca] += w;
                } else {
                    *pair.entry((ca.min(cb), ca.max(cb))).or_insert(0.0) += w;
                }
            }
        }
    }
    let mut adj = vec![Vec::new(); n2];
    let mut degree = vec![0.0; n2];
    let mut total_weight = 0.0;
    for ((a, b), w) in pair {
        adj[a].push((b, w));
        adj[b].push((a, w));
        degree[a] += w;
        degree[b] += w;
        total_weight += w;
    }
    // Internal weight survives as a self-loop on the super-node: it still
    // counts toward degree (twice) and m, which modularity needs.
    for (c, w) in loops.iter().enumerate() {
        if *w > 0.0 {
            adj[c].push((c, *w));
            degree[c] += 2.0 * w;
            total_weight += w;
        }
    }
    (
        Undirected {
            adj,
            degree,
            total_weight,
        },
        dense,
    )
}

fn modularity(u: &Undirected, community: &[usize]) -> f64 {
    let m = u.total_weight;
    if m == 0.0 {
        return 0.0;
    }
    let nc = community.iter().max().map(|c| c + 1).unwrap_or(0);
    let mut internal = vec![0.0; nc];
    let mut sum_tot = vec![0.0; nc];
    for (a, row) in u.adj.iter().enumerate() {
        sum_tot[community[a]] += u.degree[a];
        for (b, w) in row {
            if a == *b {
                internal[community[a]] += w; // self-loop: internal once
            } else if a < *b && community[a] == community[*b] {
                internal[community[a]] += w;
            }
        }
    }
    (0..nc)
        .map(|c| internal[c] / m - (sum_tot[c] / (2.0 * m)).powi(2))
        .sum()
}

/// Clusters a snapshot's addresses by greedy modularity maximization.
///
/// Seed 0 sweeps nodes in ascending index order; any other seed applies one
/// deterministic shuffle to the sweep order. Final community ids are
/// renumbered by each community's lexicographically smallest address.
pub fn cluster_a2(g: &GraphSnapshot, seed: u64) -> CommunityAssignment {
    assert!(!g.is_empty(), "cannot cluster an empty graph");
    let n = g.node_count();
    let base = undirected_projection(g);

    let mut order: Vec<usize> = (0..n).collect();
    if seed != 0 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }

    // node → community at the finest level, refined across passes.
    let mut membership: Vec<usize> = (0..n).collect();
    let mut level = undirected_projection(g);
    let mut level_order = order;
    loop {
        let (community, improved) = local_moves(&level, &level_order);
        if !improved {
            break;
        }
        let (next, dense) = aggregate(&level, &community);
        for m in membership.iter_mut() {
            *m = dense[community[*m]];
        }
        level_order = (0..next.adj.len()).collect();
        level = next;
        if level.adj.len() <= 1 {
            break;
        }
    }

    let score = modularity(&base, &membership);

    // Stable ids: communities ordered by their smallest member address.
    let mut smallest: BTreeMap<usize, &str> = BTreeMap::new();
    for (v, c) in membership.iter().enumerate() {
        let name = g.node_name(v as u32);
        smallest
            .entry(*c)
            .and_modify(|s| {
                if name < *s {
                    *s = name;
                }
            })
            .or_insert(name);
    }
    let mut ordered: Vec<(&str, usize)> = smallest.iter().map(|(c, s)| (*s, *c)).collect();
    ordered.sort();
    let renumber: BTreeMap<usize, u32> = ordered
        .iter()
        .enumerate()
        .map(|(i, (_, c))| (*c, i as u32))
        .collect();
    let communities: BTreeMap<String, u32> = membership
        .iter()
        .enumerate()
        .map(|(v, c)| (g.node_name(v as u32).to_string(), renumber[c]))
        .collect();
    CommunityAssignment {
        communities,
        modularity: score,
    }
}

//! Weighted PageRank by power iteration.

use serde::{Deserialize, Serialize};

use super::{CentralityMap, Metric};
use crate::graph::GraphSnapshot;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PageRankOptions {
    pub damping: f64,
    /// L1 residual threshold for convergence.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankOptions {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Power iteration on the edge-weight-normalized transition matrix with
/// uniform teleport; dangling mass is redistributed uniformly.
///
/// If the L1 residual has not dropped below `tol` within `max_iter`
/// iterations the last iterate is returned with `converged` unset and a
/// warning logged.
pub fn pagerank(g: &GraphSnapshot, opts: &PageRankOptions) -> CentralityMap {
    assert!(
        opts.damping > 0.0 && opts.damping < 1.0,
        "damping must lie in (0, 1)"
    );
    let n = g.node_count();
    if n == 0 {
        return CentralityMap {
            metric: Metric::PageRank,
            values: Vec::new(),
            converged: true,
        };
    }
    let inv_n = 1.0 / n as f64;
    let d = opts.damping;
    let mut rank = vec![inv_n; n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let dangling: f64 = (0..n)
            .filter(|v| g.out_weight_sum(*v as u32) == 0.0)
            .map(|v| rank[v])
            .sum();
        let base = (1.0 - d) * inv_n + d * dangling * inv_n;
        next.iter_mut().for_each(|x| *x = base);
        for u in 0..n as u32 {
            let total = g.out_weight_sum(u);
            if total == 0.0 {
                continue;
            }
            let ru = rank[u as usize];
            for (v, w) in g.out_neighbors(u).iter().zip(g.out_weights(u)) {
                next[*v as usize] += d * ru * (w / total);
            }
        }
        let residual: f64 = rank
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .sum();
        std::mem::swap(&mut rank, &mut next);
        if residual < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "pagerank did not converge within {} iterations (n = {n})",
            opts.max_iter
        );
    }
    CentralityMap {
        metric: Metric::PageRank,
        values: rank,
        converged,
    }
}

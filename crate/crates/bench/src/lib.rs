//! Shared fixtures for the pipeline benchmarks: deterministic synthetic
//! chains and graphs at a few canonical sizes, so every benchmark measures
//! the same inputs run to run.

use decprof_core::graph::{build_snapshot, ExpandOptions, GraphSnapshot, Window};
use decprof_core::txmodel::{generate_synthetic_chain, SyntheticChainConfig, TransactionLog};

/// Chain sizes the benchmarks sweep over, in blocks.
pub const CHAIN_SIZES: [u64; 3] = [100, 400, 1600];

/// A deterministic benchmark chain: moderate activity, some whale
/// concentration, daily fee variation.
pub fn bench_chain(blocks: u64) -> TransactionLog {
    let cfg = SyntheticChainConfig {
        blocks,
        txs_per_block: 6,
        concentration: 0.3,
        fee_per_tx: 500,
        fee_jitter: 400,
        block_interval_secs: 3_600,
        seed: 20_240_101,
        ..SyntheticChainConfig::default()
    };
    generate_synthetic_chain(&cfg).expect("benchmark config is valid")
}

/// The cumulative graph over the whole chain.
pub fn bench_graph(blocks: u64) -> GraphSnapshot {
    let log = bench_chain(blocks);
    build_snapshot(&log, Window::All, &ExpandOptions::default())
}

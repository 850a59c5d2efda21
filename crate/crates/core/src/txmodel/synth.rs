//! Deterministic synthetic chain generation.
//!
//! The generator tracks a real UTXO set, so every spend references a
//! previously created, still-unspent output, including outputs created
//! earlier in the same block. Coinbase outputs become spendable in the
//! next block.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Transaction, TransactionLog, TxEntry};

/// Unix time of 2009-01-09T00:00:00Z, the default chain start.
pub const DEFAULT_START_TIME: i64 = 1_231_459_200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticChainConfig {
    /// Number of blocks to generate.
    pub blocks: u64,
    /// Non-coinbase transactions attempted per block.
    pub txs_per_block: u32,
    /// Expected number of brand-new recipient addresses per block.
    pub address_growth: f64,
    /// Coinbase subsidy per block, satoshis.
    pub coinbase_subsidy: u64,
    /// Probability that a non-coinbase output pays the whale set. At 1.0
    /// every non-coinbase output lands on a whale address.
    pub concentration: f64,
    /// Size of the fixed whale address set.
    pub whales: u32,
    /// Flat fee charged per non-coinbase transaction, satoshis. The block's
    /// coinbase mints subsidy plus the fees of its own transactions, so at
    /// the default of 0 the sum of balances equals the sum of coinbase
    /// outputs after replay.
    pub fee_per_tx: u64,
    /// Extra per-transaction fee drawn uniformly from `0..=fee_jitter`
    /// satoshis, giving the daily fee series day-to-day variation. At the
    /// default of 0 no extra randomness is drawn, so existing seeds keep
    /// producing byte-identical logs.
    pub fee_jitter: u64,
    /// Seconds between consecutive blocks.
    pub block_interval_secs: u64,
    /// Timestamp of block 0.
    pub start_time: i64,
    /// RNG seed; equal seeds yield byte-identical logs.
    pub seed: u64,
}

impl Default for SyntheticChainConfig {
    fn default() -> Self {
        Self {
            blocks: 100,
            txs_per_block: 4,
            address_growth: 2.0,
            coinbase_subsidy: 50 * super::SATS_PER_COIN,
            concentration: 0.3,
            whales: 10,
            fee_per_tx: 0,
            fee_jitter: 0,
            block_interval_secs: 600,
            start_time: DEFAULT_START_TIME,
            seed: 7,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{field} must be positive")]
    NonPositive { field: &'static str },
    #[error("concentration must lie in [0,1], got {value}")]
    ConcentrationRange { value: String },
    #[error("address_growth must be finite and >= 0")]
    GrowthRange,
}

impl SyntheticChainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.blocks == 0 {
            return Err(ConfigError::NonPositive { field: "blocks" });
        }
        if self.coinbase_subsidy == 0 {
            return Err(ConfigError::NonPositive {
                field: "coinbase_subsidy",
            });
        }
        if self.whales == 0 {
            return Err(ConfigError::NonPositive { field: "whales" });
        }
        if self.block_interval_secs == 0 {
            return Err(ConfigError::NonPositive {
                field: "block_interval_secs",
            });
        }
        if !(0.0..=1.0).contains(&self.concentration) {
            return Err(ConfigError::ConcentrationRange {
                value: self.concentration.to_string(),
            });
        }
        if !self.address_growth.is_finite() || self.address_growth < 0.0 {
            return Err(ConfigError::GrowthRange);
        }
        Ok(())
    }
}

const MINERS: u32 = 8;
const MAX_TX_INPUTS: usize = 3;
const MAX_TX_OUTPUTS: usize = 3;

struct AddressBook {
    whales: Vec<String>,
    pool: Vec<String>,
    next_id: u64,
}

impl AddressBook {
    fn new(whales: u32) -> Self {
        Self {
            whales: (0..whales).map(|i| format!("w{i:03}")).collect(),
            pool: Vec::new(),
            next_id: 0,
        }
    }

    fn fresh(&mut self) -> String {
        let a = format!("a{:07}", self.next_id);
        self.next_id += 1;
        self.pool.push(a.clone());
        a
    }
}

/// Generates a deterministic synthetic chain for the given config.
pub fn generate_synthetic_chain(
    cfg: &SyntheticChainConfig,
) -> Result<TransactionLog, ConfigError> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut book = AddressBook::new(cfg.whales);
    // Spendable outputs; swap_remove keeps selection O(1) and deterministic.
    let mut utxos: Vec<(String, u64)> = Vec::new();
    let mut txs: Vec<Transaction> = Vec::new();
    let mut tx_counter = 0u64;

    let expected_outputs_per_block =
        (cfg.txs_per_block as f64 * (1 + MAX_TX_OUTPUTS) as f64 / 2.0).max(1.0);
    let p_new = (cfg.address_growth / expected_outputs_per_block).clamp(0.0, 1.0);

    for height in 0..cfg.blocks {
        let time = cfg.start_time + height as i64 * cfg.block_interval_secs as i64;
        let mut block_txs: Vec<Transaction> = Vec::new();
        let mut block_fees: u64 = 0;

        for _ in 0..cfg.txs_per_block {
            if utxos.is_empty() {
                break;
            }
            let n_in = rng.gen_range(1..=MAX_TX_INPUTS.min(utxos.len()));
            let mut inputs = Vec::with_capacity(n_in);
            let mut v_in: u64 = 0;
            for _ in 0..n_in {
                let idx = rng.gen_range(0..utxos.len());
                let (addr, value) = utxos.swap_remove(idx);
                v_in += value;
                inputs.push(TxEntry::new(addr, value));
            }
            let asked_fee = if cfg.fee_jitter > 0 {
                cfg.fee_per_tx.saturating_add(rng.gen_range(0..=cfg.fee_jitter))
            } else {
                cfg.fee_per_tx
            };
            let fee = asked_fee.min(v_in.saturating_sub(1));
            let mut remaining = v_in - fee;
            if remaining == 0 {
                // A dust-only spend would need an empty output list; return
                // the inputs to the set and skip.
                for e in inputs {
                    utxos.push((e.addr, e.value));
                }
                continue;
            }
            block_fees += fee;
            let n_out = rng.gen_range(1..=MAX_TX_OUTPUTS.min(remaining as usize));
            let mut outputs = Vec::with_capacity(n_out);
            for k in 0..n_out {
                let value = if k + 1 == n_out {
                    remaining
                } else {
                    let left = (n_out - k - 1) as u64;
                    rng.gen_range(1..=remaining - left)
                };
                remaining -= value;
                let addr = if rng.gen_bool(cfg.concentration) {
                    book.whales[rng.gen_range(0..book.whales.len())].clone()
                } else if book.pool.is_empty() || rng.gen_bool(p_new) {
                    book.fresh()
                } else {
                    book.pool[rng.gen_range(0..book.pool.len())].clone()
                };
                outputs.push(TxEntry::new(addr, value));
            }
            for e in &outputs {
                utxos.push((e.addr.clone(), e.value));
            }
            block_txs.push(Transaction {
                txid: format!("tx{tx_counter:08}"),
                height,
                time,
                inputs,
                outputs,
            });
            tx_counter += 1;
        }

        let miner = format!("m{:02}", rng.gen_range(0..MINERS));
        let coinbase = Transaction {
            txid: format!("cb{height:08}"),
            height,
            time,
            inputs: Vec::new(),
            outputs: vec![TxEntry::new(miner.clone(), cfg.coinbase_subsidy + block_fees)],
        };
        // Coinbase matures next block: push its output after the block's
        // spends were drawn.
        utxos.push((miner, cfg.coinbase_subsidy + block_fees));
        txs.push(coinbase);
        txs.append(&mut block_txs);
    }
    Ok(TransactionLog::new(txs))
}

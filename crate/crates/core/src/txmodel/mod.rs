//! Transaction records, log parsing/serialization, and synthetic chains.
//!
//! A transaction is a flat record of `(address, value)` inputs and outputs.
//! Coinbase transactions are encoded with an empty input list. All amounts
//! are integer satoshis; coin-denominated I/O converts at [`SATS_PER_COIN`].

mod parse;
mod synth;

pub use parse::{parse_transactions, write_csv, write_jsonl, LogFormat, ParseError};
pub use synth::{generate_synthetic_chain, ConfigError, SyntheticChainConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Satoshis per whole coin.
pub const SATS_PER_COIN: u64 = 100_000_000;

/// One side of a transaction: an address and the value it pays or receives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxEntry {
    pub addr: String,
    pub value: u64,
}

impl TxEntry {
    pub fn new(addr: impl Into<String>, value: u64) -> Self {
        Self {
            addr: addr.into(),
            value,
        }
    }
}

/// A single UTXO-style transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub txid: String,
    pub height: u64,
    pub time: i64,
    pub inputs: Vec<TxEntry>,
    pub outputs: Vec<TxEntry>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TxError {
    #[error("transaction {txid}: fee undefined for coinbase")]
    CoinbaseFee { txid: String },
    #[error("transaction {txid}: outputs ({outputs}) exceed inputs ({inputs})")]
    OutputsExceedInputs {
        txid: String,
        inputs: u128,
        outputs: u128,
    },
    #[error("transaction {txid}: output list is empty")]
    EmptyOutputs { txid: String },
}

impl Transaction {
    /// Coinbase transactions mint new coin and have no inputs.
    pub fn is_coinbase(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_total(&self) -> u128 {
        self.inputs.iter().map(|e| e.value as u128).sum()
    }

    pub fn output_total(&self) -> u128 {
        self.outputs.iter().map(|e| e.value as u128).sum()
    }

    /// Miner fee: sum of inputs minus sum of outputs.
    ///
    /// Undefined for coinbase transactions, which have no inputs.
    pub fn fee(&self) -> Result<u64, TxError> {
        if self.is_coinbase() {
            return Err(TxError::CoinbaseFee {
                txid: self.txid.clone(),
            });
        }
        let (ins, outs) = (self.input_total(), self.output_total());
        if outs > ins {
            return Err(TxError::OutputsExceedInputs {
                txid: self.txid.clone(),
                inputs: ins,
                outputs: outs,
            });
        }
        Ok((ins - outs) as u64)
    }

    /// Checks the record-level invariants: outputs non-empty, and for
    /// non-coinbase transactions sum(inputs) >= sum(outputs).
    pub fn validate(&self) -> Result<(), TxError> {
        if self.outputs.is_empty() {
            return Err(TxError::EmptyOutputs {
                txid: self.txid.clone(),
            });
        }
        if !self.is_coinbase() {
            self.fee()?;
        }
        Ok(())
    }
}

/// An ordered transaction log, sorted by (block height, position in block).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionLog {
    /// Declared satoshis-per-coin constant for coin-denominated I/O.
    pub sats_per_coin: u64,
    pub transactions: Vec<Transaction>,
}

impl TransactionLog {
    pub fn new(transactions: Vec<Transaction>) -> Self {
        Self {
            sats_per_coin: SATS_PER_COIN,
            transactions,
        }
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transaction> {
        self.transactions.iter()
    }

    /// Height of the last block, if any.
    pub fn tip_height(&self) -> Option<u64> {
        self.transactions.last().map(|t| t.height)
    }
}

/// Summary statistics over a transaction log.
///
/// Transaction value is the sum of a transaction's output values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogStats {
    pub start_time: Option<i64>,
    pub end_time: Option<i64>,
    pub unique_addresses: u64,
    pub transactions: u64,
    pub blocks: u64,
    pub inputs: u64,
    pub outputs: u64,
    pub total_transacted_sats: u128,
    pub average_tx_value_sats: f64,
    pub max_tx_value_sats: u128,
    pub median_tx_value_sats: f64,
}

/// Computes the summary statistics for a log in one pass.
pub fn log_stats(log: &TransactionLog) -> LogStats {
    let mut addrs = std::collections::HashSet::new();
    let mut heights = std::collections::HashSet::new();
    let mut values: Vec<u128> = Vec::with_capacity(log.len());
    let (mut n_in, mut n_out) = (0u64, 0u64);
    for tx in log.iter() {
        heights.insert(tx.height);
        n_in += tx.inputs.len() as u64;
        n_out += tx.outputs.len() as u64;
        for e in tx.inputs.iter().chain(tx.outputs.iter()) {
            addrs.insert(e.addr.as_str());
        }
        values.push(tx.output_total());
    }
    let total: u128 = values.iter().sum();
    values.sort_unstable();
    let median = match values.len() {
        0 => 0.0,
        n if n % 2 == 1 => values[n / 2] as f64,
        n => (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0,
    };
    LogStats {
        start_time: log.transactions.first().map(|t| t.time),
        end_time: log.transactions.last().map(|t| t.time),
        unique_addresses: addrs.len() as u64,
        transactions: log.len() as u64,
        blocks: heights.len() as u64,
        inputs: n_in,
        outputs: n_out,
        total_transacted_sats: total,
        average_tx_value_sats: if values.is_empty() {
            0.0
        } else {
            total as f64 / values.len() as f64
        },
        max_tx_value_sats: values.last().copied().unwrap_or(0),
        median_tx_value_sats: median,
    }
}

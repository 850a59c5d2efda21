//! Transaction log readers and writers.
//!
//! Two on-disk formats carry the same records:
//!
//! * JSONL — one object per line with keys `txid`, `height`, `time`,
//!   `inputs`, `outputs`; each entry is `{"addr": ..., "value": ...}`.
//! * CSV — one row per input or output: `txid,height,time,side,addr,value`
//!   with `side` in `{in,out}`. Rows of one transaction are contiguous.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Transaction, TransactionLog, TxEntry, TxError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for LogFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown log format `{other}` (expected jsonl or csv)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: transaction rejected: {source}")]
    InvalidTransaction { line: usize, source: TxError },
    #[error("line {line}: block height {height} decreases below {prev}")]
    HeightOrder { line: usize, height: u64, prev: u64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Parses a byte stream in the declared format into a validated log.
///
/// Ordering is preserved; every record is checked against the transaction
/// invariants and the non-decreasing block-height rule.
pub fn parse_transactions<R: Read>(
    source: R,
    format: LogFormat,
) -> Result<TransactionLog, ParseError> {
    let transactions = match format {
        LogFormat::Jsonl => parse_jsonl(source)?,
        LogFormat::Csv => parse_csv(source)?,
    };
    Ok(TransactionLog::new(transactions))
}

fn check_order(
    prev: &mut Option<u64>,
    tx: &Transaction,
    line: usize,
) -> Result<(), ParseError> {
    if let Some(p) = *prev {
        if tx.height < p {
            return Err(ParseError::HeightOrder {
                line,
                height: tx.height,
                prev: p,
            });
        }
    }
    *prev = Some(tx.height);
    Ok(())
}

fn parse_jsonl<R: Read>(source: R) -> Result<Vec<Transaction>, ParseError> {
    let mut txs = Vec::new();
    let mut prev_height = None;
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tx: Transaction =
            serde_json::from_str(&line).map_err(|e| ParseError::Malformed {
                line: line_no,
                msg: e.to_string(),
            })?;
        tx.validate()
            .map_err(|source| ParseError::InvalidTransaction { line: line_no, source })?;
        check_order(&mut prev_height, &tx, line_no)?;
        txs.push(tx);
    }
    Ok(txs)
}

#[derive(Deserialize)]
struct CsvRow {
    txid: String,
    height: u64,
    time: i64,
    side: String,
    addr: String,
    value: i64,
}

fn parse_csv<R: Read>(source: R) -> Result<Vec<Transaction>, ParseError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let mut txs: Vec<Transaction> = Vec::new();
    let mut current: Option<(Transaction, usize)> = None;
    let mut prev_height = None;
    for (idx, row) in reader.deserialize::<CsvRow>().enumerate() {
        let line_no = idx + 2; // header occupies line 1
        let row = row.map_err(|e| ParseError::Malformed {
            line: line_no,
            msg: e.to_string(),
        })?;
        if row.value < 0 {
            return Err(ParseError::Malformed {
                line: line_no,
                msg: format!("negative value {}", row.value),
            });
        }
        let entry = TxEntry::new(row.addr, row.value as u64);
        let flush = match &current {
            Some((tx, _)) => tx.txid != row.txid,
            None => false,
        };
        if flush {
            let (tx, first_line) = current.take().expect("flush implies current");
            finish_csv_tx(&mut txs, &mut prev_height, tx, first_line)?;
        }
        let (tx, _) = current.get_or_insert_with(|| {
            (
                Transaction {
                    txid: row.txid.clone(),
                    height: row.height,
                    time: row.time,
                    inputs: Vec::new(),
                    outputs: Vec::new(),
                },
                line_no,
            )
        });
        match row.side.as_str() {
            "in" => tx.inputs.push(entry),
            "out" => tx.outputs.push(entry),
            other => {
                return Err(ParseError::Malformed {
                    line: line_no,
                    msg: format!("side must be `in` or `out`, got `{other}`"),
                })
            }
        }
    }
    if let Some((tx, first_line)) = current.take() {
        finish_csv_tx(&mut txs, &mut prev_height, tx, first_line)?;
    }
    Ok(txs)
}

fn finish_csv_tx(
    txs: &mut Vec<Transaction>,
    prev_height: &mut Option<u64>,
    tx: Transaction,
    line: usize,
) -> Result<(), ParseError> {
    tx.validate()
        .map_err(|source| ParseError::InvalidTransaction { line, source })?;
    check_order(prev_height, &tx, line)?;
    txs.push(tx);
    Ok(())
}

/// Writes the log as JSONL, one object per line.
pub fn write_jsonl<W: Write>(log: &TransactionLog, mut out: W) -> std::io::Result<()> {
    for tx in log.iter() {
        serde_json::to_writer(&mut out, tx)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes the log as CSV, inputs before outputs within each transaction.
pub fn write_csv<W: Write>(log: &TransactionLog, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["txid", "height", "time", "side", "addr", "value"])?;
    for tx in log.iter() {
        for (side, entries) in [("in", &tx.inputs), ("out", &tx.outputs)] {
            for e in entries {
                w.write_record([
                    tx.txid.as_str(),
                    &tx.height.to_string(),
                    &tx.time.to_string(),
                    side,
                    e.addr.as_str(),
                    &e.value.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

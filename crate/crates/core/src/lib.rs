//! Decentralization profiling for UTXO-style transaction ledgers.
//!
//! The crate turns a raw transaction log into a set of dated decentralization
//! measures: address-graph centralities and their dispersion, top-N asset
//! distribution curves, ranking-stability series, HHI market concentration,
//! and daily feature matrices for downstream forecasting.
//!
//! Pipeline order: [`txmodel`] (parse or generate a log) → [`ledger`] (replay
//! to daily balances and rankings) → [`graph`] (windowed address graphs) →
//! the analysis modules ([`centrality`], [`assetdist`], [`stability`],
//! [`concentration`]) → [`features`] (daily matrix + baseline forecasts).

pub mod assetdist;
pub mod centrality;
pub mod concentration;
pub mod features;
pub mod graph;
pub mod ledger;
pub mod series;
pub mod stability;
pub mod txmodel;

pub use graph::{GraphSnapshot, WeightedEdge, Window};
pub use ledger::{BalanceSnapshot, LedgerState, RankingList};
pub use series::MetricSeries;
pub use txmodel::{Transaction, TransactionLog, TxEntry, SATS_PER_COIN};

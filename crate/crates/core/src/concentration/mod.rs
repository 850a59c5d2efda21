//! Market concentration via the Herfindahl–Hirschman index under two
//! entity models: A1 treats every address as its own entity, A2 merges
//! addresses into community-detected entities. Merging can only push HHI up
//! (squares are superadditive), so A2 concentration dominates A1 on the
//! same balances.

mod louvain;

pub use louvain::{cluster_a2, CommunityAssignment};

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use thiserror::Error;

use crate::ledger::RankingList;
use crate::series::MetricSeries;

#[derive(Debug, Error)]
pub enum ConcentrationError {
    #[error("holdings on {0} have zero supply")]
    ZeroSupply(NaiveDate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityMode {
    #[serde(rename = "a1", alias = "a1_per_address")]
    A1PerAddress,
    #[serde(rename = "a2", alias = "a2_clustered")]
    A2Clustered,
}

impl std::fmt::Display for EntityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EntityMode::A1PerAddress => "a1",
            EntityMode::A2Clustered => "a2",
        })
    }
}

/// Entity → satoshi holdings at one date, against total supply `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityHoldings {
    pub date: NaiveDate,
    pub mode: EntityMode,
    pub holdings: BTreeMap<String, u64>,
    /// Total coin in circulation at `date` (the HHI denominator).
    pub supply: u128,
}

/// Every ranked address is its own entity.
pub fn a1_holdings(ranking: &RankingList, supply: u128) -> EntityHoldings {
    let holdings = ranking
        .entries
        .iter()
        .filter(|e| e.balance > 0)
        .map(|e| (e.addr.clone(), e.balance))
        .collect();
    EntityHoldings {
        date: ranking.date,
        mode: EntityMode::A1PerAddress,
        holdings,
        supply,
    }
}

/// Ranked balances summed per community. Addresses without an assignment
/// (never connected inside the clustered subgraph) stay singleton entities.
pub fn a2_holdings(
    ranking: &RankingList,
    assignment: &CommunityAssignment,
    supply: u128,
) -> EntityHoldings {
    let mut holdings: BTreeMap<String, u64> = BTreeMap::new();
    for e in &ranking.entries {
        if e.balance == 0 {
            continue;
        }
        let key = match assignment.community_of(&e.addr) {
            Some(c) => format!("c{c:06}"),
            None => format!("addr:{}", e.addr),
        };
        *holdings.entry(key).or_insert(0) += e.balance;
    }
    EntityHoldings {
        date: ranking.date,
        mode: EntityMode::A2Clustered,
        holdings,
        supply,
    }
}

/// Σ 10000·(h_i/C)², on the 0–10000 scale.
pub fn hhi(holdings: &EntityHoldings) -> Result<f64, ConcentrationError> {
    if holdings.supply == 0 {
        return Err(ConcentrationError::ZeroSupply(holdings.date));
    }
    let c = holdings.supply as f64;
    Ok(holdings
        .holdings
        .values()
        .map(|h| {
            let share = *h as f64 / c;
            10_000.0 * share * share
        })
        .sum())
}

/// 1 − HHI/10000: normalization by the analytic maximum keeps every point
/// a function of its own date only.
pub fn d_hhi(holdings: &EntityHoldings) -> Result<f64, ConcentrationError> {
    Ok(1.0 - hhi(holdings)? / 10_000.0)
}

/// Min-max variant over an observed HHI history: 1 − (h − min)/(max − min).
/// Non-causal (the whole history rescales every point), provided for figure
/// replication only. A flat history maps to all zeros.
pub fn d_hhi_minmax(hhi_series: &[f64]) -> Vec<f64> {
    let min = hhi_series.iter().copied().fold(f64::INFINITY, f64::min);
    let max = hhi_series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    hhi_series
        .iter()
        .map(|h| {
            if span == 0.0 {
                0.0
            } else {
                1.0 - (h - min) / span
            }
        })
        .collect()
}

/// Default event dates highlighted on concentration plots.
pub fn default_events() -> Vec<(NaiveDate, String)> {
    [(2011, 12, 7), (2014, 3, 16), (2018, 12, 5)]
        .iter()
        .map(|(y, m, d)| {
            let date = NaiveDate::from_ymd_opt(*y, *m, *d).unwrap();
            (date, format!("event-{date}"))
        })
        .collect()
}

/// An event pinned onto the nearest series row.
#[derive(Debug, Clone, PartialEq)]
pub struct EventAnnotation {
    pub label: String,
    pub event_date: NaiveDate,
    /// Index and date of the nearest row; `None` for an empty series.
    pub row_index: Option<usize>,
    pub row_date: Option<NaiveDate>,
}

/// Attaches dated labels to their nearest rows of `series`.
pub fn event_annotations(
    series: &MetricSeries,
    events: &[(NaiveDate, String)],
) -> Vec<EventAnnotation> {
    events
        .iter()
        .map(|(date, label)| {
            let row_index = series.nearest_index(*date);
            EventAnnotation {
                label: label.clone(),
                event_date: *date,
                row_index,
                row_date: row_index.map(|i| series.points[i].0),
            }
        })
        .collect()
}

/// Writes `date,mode,hhi,d_hhi` rows.
pub fn write_hhi_csv<W: Write>(
    rows: &[(NaiveDate, EntityMode, f64, f64)],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "date,mode,hhi,d_hhi")?;
    for (date, mode, h, d) in rows {
        writeln!(out, "{date},{mode},{h},{d}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::RankEntry;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2014, 1, 1).unwrap()
    }

    fn holdings(entries: &[(&str, u64)], supply: u128) -> EntityHoldings {
        EntityHoldings {
            date: date(),
            mode: EntityMode::A1PerAddress,
            holdings: entries.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            supply,
        }
    }

    #[test]
    fn monopoly_and_duopoly() {
        let mono = holdings(&[("a", 100)], 100);
        assert_eq!(hhi(&mono).unwrap(), 10_000.0);
        assert_eq!(d_hhi(&mono).unwrap(), 0.0);

        let duo = holdings(&[("a", 50), ("b", 50)], 100);
        assert_eq!(hhi(&duo).unwrap(), 5_000.0);
        assert_eq!(d_hhi(&duo).unwrap(), 0.5);
    }

    #[test]
    fn n_equal_entities() {
        for n in [3u64, 10, 100, 1000] {
            let entries: Vec<(String, u64)> = (0..n).map(|i| (format!("e{i}"), 7)).collect();
            let named: Vec<(&str, u64)> = entries.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            let h = holdings(&named, 7 * n as u128);
            assert!((hhi(&h).unwrap() - 10_000.0 / n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_supply_is_an_error() {
        let h = holdings(&[("a", 0)], 0);
        assert!(matches!(hhi(&h), Err(ConcentrationError::ZeroSupply(_))));
    }

    #[test]
    fn scale_invariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let entries: Vec<(String, u64)> = (0..50)
            .map(|i| (format!("e{i}"), rng.gen_range(1..10_000)))
            .collect();
        let named: Vec<(&str, u64)> = entries.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let supply: u128 = named.iter().map(|(_, v)| *v as u128).sum();
        let base = hhi(&holdings(&named, supply)).unwrap();
        for k in [2u64, 10, 1000] {
            let scaled: Vec<(String, u64)> =
                named.iter().map(|(a, v)| (a.to_string(), v * k)).collect();
            let scaled_named: Vec<(&str, u64)> =
                scaled.iter().map(|(a, v)| (a.as_str(), *v)).collect();
            let h = hhi(&holdings(&scaled_named, supply * k as u128)).unwrap();
            assert!((h - base).abs() < 1e-9 * base);
        }
    }

    #[test]
    fn merging_entities_never_decreases_hhi() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(14);
        for _ in 0..25 {
            // Shares of at least ~1e-4 keep the 2ab cross-term far above
            // float noise.
            let n = rng.gen_range(5..40);
            let entries: Vec<(String, u64)> = (0..n)
                .map(|i| (format!("e{i}"), rng.gen_range(1_000..100_000)))
                .collect();
            let named: Vec<(&str, u64)> = entries.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            let supply: u128 = named.iter().map(|(_, v)| *v as u128).sum();
            let before = hhi(&holdings(&named, supply)).unwrap();

            let i = rng.gen_range(0..n as usize);
            let mut j = rng.gen_range(0..n as usize);
            while j == i {
                j = rng.gen_range(0..n as usize);
            }
            let mut merged: Vec<(String, u64)> = Vec::new();
            for (k, (name, v)) in entries.iter().enumerate() {
                if k == j {
                    continue;
                }
                let v = if k == i { v + entries[j].1 } else { *v };
                merged.push((name.clone(), v));
            }
            let merged_named: Vec<(&str, u64)> =
                merged.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            let after = hhi(&holdings(&merged_named, supply)).unwrap();
            assert!(after > before, "merge lowered HHI: {after} vs {before}");
        }
    }

    #[test]
    fn matches_sum_of_squares_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(6);
        let entries: Vec<(String, u64)> = (0..200)
            .map(|i| (format!("e{i}"), rng.gen_range(1..1_000_000)))
            .collect();
        let named: Vec<(&str, u64)> = entries.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let supply: u128 = named.iter().map(|(_, v)| *v as u128).sum::<u128>() * 3;
        let got = hhi(&holdings(&named, supply)).unwrap();
        // Reverse-order accumulation of the same definition.
        let c = supply as f64;
        let expect: f64 = named
            .iter()
            .rev()
            .map(|(_, h)| 10_000.0 * (*h as f64 / c) * (*h as f64 / c))
            .sum();
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn clustered_entity_concentrates_holdings() {
        // One operator spread across 100 addresses, plus 100 independents.
        let mut entries: Vec<RankEntry> = Vec::new();
        for i in 0..100 {
            entries.push(RankEntry {
                rank: (i + 1) as u32,
                addr: format!("op{i:03}"),
                balance: 1_000,
            });
        }
        for i in 0..100 {
            entries.push(RankEntry {
                rank: (i + 101) as u32,
                addr: format!("ind{i:03}"),
                balance: 1_000,
            });
        }
        let ranking = RankingList {
            date: date(),
            entries,
            n: 200,
        };
        let supply = 200_000u128;

        let a1 = a1_holdings(&ranking, supply);

        let mut communities = BTreeMap::new();
        for i in 0..100 {
            communities.insert(format!("op{i:03}"), 0u32);
        }
        for i in 0..100 {
            communities.insert(format!("ind{i:03}"), (i + 1) as u32);
        }
        let assignment = CommunityAssignment {
            communities,
            modularity: 0.0,
        };
        let a2 = a2_holdings(&ranking, &assignment, supply);
        assert_eq!(a2.holdings.len(), 101);
        assert_eq!(a2.holdings["c000000"], 100_000);

        let d1 = d_hhi(&a1).unwrap();
        let d2 = d_hhi(&a2).unwrap();
        assert!(d1 > d2, "A1 should read as more decentralized");
    }

    #[test]
    fn minmax_variant() {
        let hhis = vec![100.0, 300.0, 200.0];
        let d = d_hhi_minmax(&hhis);
        assert_eq!(d, vec![1.0, 0.0, 0.5]);
        assert_eq!(d_hhi_minmax(&[42.0, 42.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn default_events_annotate_three_rows() {
        let mut series = MetricSeries::new("d_hhi");
        let start = NaiveDate::from_ymd_opt(2011, 1, 1).unwrap();
        for i in 0..3000 {
            series.push(start + chrono::Days::new(i), i as f64);
        }
        let ann = event_annotations(&series, &default_events());
        assert_eq!(ann.len(), 3);
        for a in &ann {
            assert_eq!(a.row_date, Some(a.event_date));
        }
    }

    #[test]
    fn custom_event_snaps_to_nearest_row() {
        let mut series = MetricSeries::new("d_hhi");
        let d1 = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();
        let d2 = NaiveDate::from_ymd_opt(2012, 1, 10).unwrap();
        series.push(d1, 0.1);
        series.push(d2, 0.2);
        let event = NaiveDate::from_ymd_opt(2012, 1, 7).unwrap();
        let ann = event_annotations(&series, &[(event, "custom".into())]);
        // Linear-scan oracle: |7−1| = 6 vs |10−7| = 3.
        assert_eq!(ann[0].row_date, Some(d2));

        let empty = MetricSeries::new("d_hhi");
        let none = event_annotations(&empty, &[(event, "custom".into())]);
        assert_eq!(none[0].row_index, None);

        assert!(event_annotations(&series, &[]).is_empty());
    }
}

//! Ranking stability over time: Spearman correlation and retention rate.
//!
//! Spearman runs on integer rank statistics (doubled average ranks, so tie
//! groups stay integral) with i128 sums; perfect correlations are detected
//! by the exact Cauchy–Schwarz equality instead of comparing a float
//! against 1.0. Overlap handling is intersection-based by default — order
//! changes and membership changes are deliberately separate signals, with
//! the latter captured by retention — and rank-(N+1) imputation for
//! dropouts is available as a variant.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use thiserror::Error;

use crate::ledger::RankingList;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("retention needs rankings of equal size (got {0} and {1})")]
    SizeMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpearmanMode {
    /// Correlate only addresses present in both lists.
    #[default]
    Intersection,
    /// Addresses missing from one list get rank N+1 there.
    Imputation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpearmanResult {
    /// `None` when fewer than 2 usable pairs exist or one side is constant.
    pub coefficient: Option<f64>,
    pub overlap: usize,
}

/// Doubled average ranks (1-based) of `values`; doubling keeps tie-group
/// averages integral.
fn doubled_average_ranks(values: &[i64]) -> Vec<i64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by_key(|&i| values[i]);
    let mut out = vec![0i64; values.len()];
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j + 1 < values.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // 0-based positions i..=j carry ranks i+1..=j+1; the doubled
        // average is (i+1) + (j+1).
        let doubled = (i + j + 2) as i64;
        for k in i..=j {
            out[idx[k]] = doubled;
        }
        i = j + 1;
    }
    out
}

/// Tie-corrected Spearman of paired observations.
pub(crate) fn spearman_of_pairs(pairs: &[(i64, i64)]) -> Option<f64> {
    let k = pairs.len();
    if k < 2 {
        return None;
    }
    let xs: Vec<i64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<i64> = pairs.iter().map(|p| p.1).collect();
    let rx = doubled_average_ranks(&xs);
    let ry = doubled_average_ranks(&ys);
    let n = k as i128;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for (a, b) in rx.iter().zip(&ry) {
        let (a, b) = (*a as i128, *b as i128);
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    let cov = n * sxy - sx * sy;
    let var_x = n * sxx - sx * sx;
    let var_y = n * syy - sy * sy;
    if var_x == 0 || var_y == 0 {
        return None; // a constant side has no defined rank correlation
    }
    // cov² = var_x·var_y is the exact equality condition for |ρ| = 1; the
    // squares stay inside i128 for any list under ~40k entries.
    if k <= 40_000 && cov * cov == var_x * var_y {
        return Some(if cov > 0 { 1.0 } else { -1.0 });
    }
    Some(cov as f64 / ((var_x as f64).sqrt() * (var_y as f64).sqrt()))
}

/// Spearman rank correlation between two rankings.
pub fn spearman(a: &RankingList, b: &RankingList, mode: SpearmanMode) -> SpearmanResult {
    assert!(
        !a.entries.is_empty() && !b.entries.is_empty(),
        "rankings must be non-empty"
    );
    let rank_b = b.rank_of();
    let overlap = a
        .entries
        .iter()
        .filter(|e| rank_b.contains_key(e.addr.as_str()))
        .count();
    let pairs: Vec<(i64, i64)> = match mode {
        SpearmanMode::Intersection => a
            .entries
            .iter()
            .filter_map(|e| {
                rank_b
                    .get(e.addr.as_str())
                    .map(|rb| (e.rank as i64, *rb as i64))
            })
            .collect(),
        SpearmanMode::Imputation => {
            let rank_a = a.rank_of();
            let miss_a = (a.n + 1) as i64;
            let miss_b = (b.n + 1) as i64;
            let mut pairs: Vec<(i64, i64)> = a
                .entries
                .iter()
                .map(|e| {
                    let y = rank_b
                        .get(e.addr.as_str())
                        .map(|r| *r as i64)
                        .unwrap_or(miss_b);
                    (e.rank as i64, y)
                })
                .collect();
            for e in &b.entries {
                if !rank_a.contains_key(e.addr.as_str()) {
                    pairs.push((miss_a, e.rank as i64));
                }
            }
            pairs
        }
    };
    SpearmanResult {
        coefficient: spearman_of_pairs(&pairs),
        overlap,
    }
}

/// |A ∩ B| / N for two same-size rankings.
pub fn retention_rate(a: &RankingList, b: &RankingList) -> Result<f64, StabilityError> {
    if a.n != b.n {
        return Err(StabilityError::SizeMismatch(a.n, b.n));
    }
    let in_b: std::collections::HashSet<&str> = b.addresses().collect();
    let kept = a.addresses().filter(|addr| in_b.contains(addr)).count();
    Ok(kept as f64 / a.n as f64)
}

/// An inclusive 1-based rank range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankGroup {
    pub lo: u32,
    pub hi: u32,
}

impl std::fmt::Display for RankGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

/// 1–500 through 4501–5000.
pub fn default_groups() -> Vec<RankGroup> {
    (0..10)
        .map(|i| RankGroup {
            lo: i * 500 + 1,
            hi: (i + 1) * 500,
        })
        .collect()
}

pub fn default_intervals() -> Vec<u32> {
    vec![1, 5, 10, 50, 100]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityPoint {
    pub date: NaiveDate,
    pub interval: u32,
    pub group: RankGroup,
    pub spearman: Option<f64>,
    pub retention: f64,
    pub overlap: usize,
}

/// Stability points for every (date, interval, group) with both endpoints
/// present. Groups track day-i membership forward: the question answered is
/// "where did the addresses ranked lo..hi on day i end up n days later".
pub fn stability_series(
    rankings: &[RankingList],
    intervals: &[u32],
    groups: &[RankGroup],
    mode: SpearmanMode,
) -> Vec<StabilityPoint> {
    let by_date: BTreeMap<NaiveDate, &RankingList> =
        rankings.iter().map(|r| (r.date, r)).collect();
    let dates: Vec<NaiveDate> = by_date.keys().copied().collect();
    dates
        .par_iter()
        .map(|date_i| {
            let a = by_date[date_i];
            let mut points = Vec::new();
            for &n in intervals {
                let date_j = *date_i + chrono::Days::new(n as u64);
                let Some(b) = by_date.get(&date_j) else {
                    if date_j <= *dates.last().unwrap() {
                        log::debug!("stability: no ranking on {date_j}, skipping {date_i}+{n}");
                    }
                    continue;
                };
                let rank_b = b.rank_of();
                for g in groups {
                    let members: Vec<&crate::ledger::RankEntry> = a
                        .entries
                        .iter()
                        .filter(|e| e.rank >= g.lo && e.rank <= g.hi)
                        .collect();
                    if members.is_empty() {
                        log::debug!("stability: group {g} empty on {date_i}, skipping");
                        continue;
                    }
                    let mut pairs: Vec<(i64, i64)> = Vec::with_capacity(members.len());
                    let mut overlap = 0usize;
                    let miss_b = (b.n + 1) as i64;
                    for e in &members {
                        match rank_b.get(e.addr.as_str()) {
                            Some(rb) => {
                                overlap += 1;
                                pairs.push((e.rank as i64, *rb as i64));
                            }
                            None if mode == SpearmanMode::Imputation => {
                                pairs.push((e.rank as i64, miss_b));
                            }
                            None => {}
                        }
                    }
                    points.push(StabilityPoint {
                        date: *date_i,
                        interval: n,
                        group: *g,
                        spearman: spearman_of_pairs(&pairs),
                        retention: overlap as f64 / members.len() as f64,
                        overlap,
                    });
                }
            }
            points
        })
        .flatten()
        .collect()
}

/// Writes `date,interval,group,spearman,retention,overlap`; an undefined
/// coefficient leaves the field empty.
pub fn write_stability_csv<W: Write>(
    points: &[StabilityPoint],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "date,interval,group,spearman,retention,overlap")?;
    for p in points {
        let s = p.spearman.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.date, p.interval, p.group, s, p.retention, p.overlap
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::RankEntry;

    fn list(date: NaiveDate, addrs: &[&str]) -> RankingList {
        RankingList {
            date,
            entries: addrs
                .iter()
                .enumerate()
                .map(|(i, a)| RankEntry {
                    rank: (i + 1) as u32,
                    addr: a.to_string(),
                    balance: 1_000 - i as u64,
                })
                .collect(),
            n: addrs.len(),
        }
    }

    fn d0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2013, 4, 1).unwrap()
    }

    #[test]
    fn identical_rankings_score_exactly_one() {
        let a = list(d0(), &["a", "b", "c", "d", "e"]);
        let r = spearman(&a, &a, SpearmanMode::Intersection);
        assert_eq!(r.coefficient, Some(1.0));
        assert_eq!(r.overlap, 5);
    }

    #[test]
    fn reversed_rankings_score_exactly_minus_one() {
        let a = list(d0(), &["a", "b", "c", "d", "e"]);
        let b = list(d0(), &["e", "d", "c", "b", "a"]);
        let r = spearman(&a, &b, SpearmanMode::Intersection);
        assert_eq!(r.coefficient, Some(-1.0));
    }

    #[test]
    fn swap_of_first_two_matches_d_squared_formula() {
        let a = list(d0(), &["a", "b", "c", "d", "e"]);
        let b = list(d0(), &["b", "a", "c", "d", "e"]);
        let r = spearman(&a, &b, SpearmanMode::Intersection);
        // Tie-free case: rho = 1 − 6·Σd²/(k(k²−1)) with Σd² = 2.
        let expect = 1.0 - 6.0 * 2.0 / (5.0 * 24.0);
        assert!((r.coefficient.unwrap() - expect).abs() < 1e-12);
        assert!((r.coefficient.unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_bounded_on_random_lists() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(4);
        for trial in 0..10 {
            let pool: Vec<String> = (0..60).map(|i| format!("x{i:02}")).collect();
            let mut m1 = pool.clone();
            let mut m2 = pool.clone();
            m1.shuffle(&mut rng);
            m2.shuffle(&mut rng);
            let a_addrs: Vec<&str> = m1.iter().take(40).map(|s| s.as_str()).collect();
            let b_addrs: Vec<&str> = m2.iter().take(40).map(|s| s.as_str()).collect();
            let a = list(d0(), &a_addrs);
            let b = list(d0(), &b_addrs);
            let ab = spearman(&a, &b, SpearmanMode::Intersection);
            let ba = spearman(&b, &a, SpearmanMode::Intersection);
            assert_eq!(ab.overlap, ba.overlap);
            if let (Some(x), Some(y)) = (ab.coefficient, ba.coefficient) {
                assert!((x - y).abs() < 1e-15, "trial {trial}: asymmetric");
                assert!((-1.0..=1.0).contains(&x));
            }
        }
    }

    #[test]
    fn matches_pearson_on_ranks_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(21);
        for _ in 0..5 {
            // Duplicate-prone values force the tie-correction path.
            let pairs: Vec<(i64, i64)> = (0..1000)
                .map(|_| (rng.gen_range(0..200), rng.gen_range(0..200)))
                .collect();
            let got = spearman_of_pairs(&pairs).unwrap();

            let xs: Vec<i64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<i64> = pairs.iter().map(|p| p.1).collect();
            let fr = |v: &[i64]| -> Vec<f64> {
                // Plain float average ranks.
                let mut idx: Vec<usize> = (0..v.len()).collect();
                idx.sort_by_key(|&i| v[i]);
                let mut out = vec![0.0; v.len()];
                let mut i = 0;
                while i < v.len() {
                    let mut j = i;
                    while j + 1 < v.len() && v[idx[j + 1]] == v[idx[i]] {
                        j += 1;
                    }
                    let avg = (i + 1 + j + 1) as f64 / 2.0;
                    for k in i..=j {
                        out[idx[k]] = avg;
                    }
                    i = j + 1;
                }
                out
            };
            let rx = fr(&xs);
            let ry = fr(&ys);
            let n = rx.len() as f64;
            let mx = rx.iter().sum::<f64>() / n;
            let my = ry.iter().sum::<f64>() / n;
            let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
            let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
            let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
            let expect = cov / (vx.sqrt() * vy.sqrt());
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_or_constant_intersections_are_undefined() {
        let a = list(d0(), &["a", "b", "c"]);
        let b = list(d0(), &["a", "x", "y"]);
        let r = spearman(&a, &b, SpearmanMode::Intersection);
        assert_eq!(r.coefficient, None);
        assert_eq!(r.overlap, 1);
    }

    #[test]
    fn imputation_ranks_dropouts_last() {
        let a = list(d0(), &["a", "b", "c", "d"]);
        let b = list(d0(), &["a", "b", "x", "y"]);
        let with_imputation = spearman(&a, &b, SpearmanMode::Imputation);
        let intersect_only = spearman(&a, &b, SpearmanMode::Intersection);
        // a,b agree perfectly on the intersection; the imputed dropouts and
        // entrants (all tied at rank 5) drag the coefficient below 1.
        assert_eq!(intersect_only.coefficient, Some(1.0));
        let v = with_imputation.coefficient.unwrap();
        assert!(v < 1.0 && v > 0.0);
        assert_eq!(with_imputation.overlap, 2);
    }

    #[test]
    fn retention_worked_examples() {
        let a = list(d0(), &["a", "b", "c", "d"]);
        assert_eq!(retention_rate(&a, &a).unwrap(), 1.0);
        let disjoint = list(d0(), &["w", "x", "y", "z"]);
        assert_eq!(retention_rate(&a, &disjoint).unwrap(), 0.0);
        let half = list(d0(), &["a", "b", "e", "f"]);
        assert_eq!(retention_rate(&a, &half).unwrap(), 0.5);
        let smaller = list(d0(), &["a", "b"]);
        assert!(retention_rate(&a, &smaller).is_err());
    }

    #[test]
    fn static_history_is_perfectly_stable() {
        let addrs: Vec<String> = (0..20).map(|i| format!("s{i:02}")).collect();
        let refs: Vec<&str> = addrs.iter().map(|s| s.as_str()).collect();
        let rankings: Vec<RankingList> = (0..8)
            .map(|day| list(d0() + chrono::Days::new(day), &refs))
            .collect();
        let groups = [RankGroup { lo: 1, hi: 20 }];
        let points = stability_series(&rankings, &[1, 5], &groups, SpearmanMode::Intersection);
        assert!(!points.is_empty());
        for p in &points {
            assert_eq!(p.spearman, Some(1.0));
            assert_eq!(p.retention, 1.0);
        }
        // 7 one-day pairs + 3 five-day pairs.
        assert_eq!(points.len(), 10);
    }

    #[test]
    fn shuffle_retention_matches_direct_set_overlap() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(31);
        let pool: Vec<String> = (0..100).map(|i| format!("p{i:03}")).collect();
        let mut day2 = pool.clone();
        day2.shuffle(&mut rng);
        let a_addrs: Vec<&str> = pool.iter().take(50).map(|s| s.as_str()).collect();
        let b_addrs: Vec<&str> = day2.iter().take(50).map(|s| s.as_str()).collect();
        let a = list(d0(), &a_addrs);
        let b = list(d0() + chrono::Days::new(1), &b_addrs);
        let points = stability_series(
            &[a.clone(), b.clone()],
            &[1],
            &[RankGroup { lo: 1, hi: 50 }],
            SpearmanMode::Intersection,
        );
        assert_eq!(points.len(), 1);
        let direct: std::collections::HashSet<&str> =
            a_addrs.iter().copied().collect::<std::collections::HashSet<_>>()
                .intersection(&b_addrs.iter().copied().collect())
                .copied()
                .collect();
        assert_eq!(points[0].overlap, direct.len());
        assert_eq!(points[0].retention, direct.len() as f64 / 50.0);
    }

    #[test]
    fn whale_preserving_churn_keeps_top_group_stable() {
        let mut day1: Vec<String> = (0..10).map(|i| format!("w{i:02}")).collect();
        day1.extend((0..40).map(|i| format!("old{i:02}")));
        let mut day2: Vec<String> = (0..10).map(|i| format!("w{i:02}")).collect();
        day2.extend((0..40).map(|i| format!("new{i:02}")));
        let r1: Vec<&str> = day1.iter().map(|s| s.as_str()).collect();
        let r2: Vec<&str> = day2.iter().map(|s| s.as_str()).collect();
        let rankings = [
            list(d0(), &r1),
            list(d0() + chrono::Days::new(1), &r2),
        ];
        let groups = [RankGroup { lo: 1, hi: 10 }, RankGroup { lo: 41, hi: 50 }];
        let points = stability_series(&rankings, &[1], &groups, SpearmanMode::Intersection);
        assert_eq!(points.len(), 2);
        let top = points.iter().find(|p| p.group.lo == 1).unwrap();
        let tail = points.iter().find(|p| p.group.lo == 41).unwrap();
        assert_eq!(top.retention, 1.0);
        assert_eq!(tail.retention, 0.0);
        assert!(top.retention > tail.retention);
    }

    #[test]
    fn missing_end_date_skips_points() {
        let addrs: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        let refs: Vec<&str> = addrs.iter().map(|s| s.as_str()).collect();
        // Only two days, so interval 5 has no end date anywhere.
        let rankings = [
            list(d0(), &refs),
            list(d0() + chrono::Days::new(1), &refs),
        ];
        let groups = [RankGroup { lo: 1, hi: 5 }];
        let points = stability_series(&rankings, &[1, 5], &groups, SpearmanMode::Intersection);
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].interval, 1);
    }
}

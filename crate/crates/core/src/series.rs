//! Dated scalar series shared by the analysis modules.

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

/// UTC calendar day containing the given unix timestamp.
pub fn day_of(timestamp: i64) -> NaiveDate {
    DateTime::from_timestamp(timestamp, 0)
        .expect("timestamp out of chrono range")
        .date_naive()
}

/// First unix second of the given UTC day.
pub fn day_start(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0)
        .expect("midnight always exists")
        .and_utc()
        .timestamp()
}

/// A named sequence of (date, value) points, sorted by date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub points: Vec<(NaiveDate, f64)>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            points: Vec::new(),
        }
    }

    pub fn from_points(name: impl Into<String>, mut points: Vec<(NaiveDate, f64)>) -> Self {
        points.sort_by_key(|(d, _)| *d);
        Self {
            name: name.into(),
            points,
        }
    }

    pub fn push(&mut self, date: NaiveDate, value: f64) {
        debug_assert!(
            self.points.last().map_or(true, |(d, _)| *d <= date),
            "points must be appended in date order"
        );
        self.points.push((date, value));
    }

    pub fn value_at(&self, date: NaiveDate) -> Option<f64> {
        self.points
            .binary_search_by_key(&date, |(d, _)| *d)
            .ok()
            .map(|i| self.points[i].1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the point whose date is closest to `target` (earlier wins ties).
    pub fn nearest_index(&self, target: NaiveDate) -> Option<usize> {
        if self.points.is_empty() {
            return None;
        }
        let best = self
            .points
            .iter()
            .enumerate()
            .min_by_key(|(_, (d, _))| {
                let delta = (*d - target).num_days().abs();
                (delta, *d)
            })
            .map(|(i, _)| i);
        best
    }
}

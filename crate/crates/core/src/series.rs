//! Hour-indexed time series with explicit gap markers.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncates a timestamp to the start of its clock hour.
pub fn floor_hour(ts: NaiveDateTime) -> NaiveDateTime {
    ts.date().and_hms_opt(ts.hour(), 0, 0).expect("valid hour")
}

pub fn is_hour_aligned(ts: NaiveDateTime) -> bool {
    ts.minute() == 0 && ts.second() == 0 && ts.nanosecond() == 0
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// A contiguous run of clock hours starting at `start`; `None` marks a gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlySeries {
    start: NaiveDateTime,
    values: Vec<Option<f64>>,
}

impl HourlySeries {
    pub fn new(start: NaiveDateTime, values: Vec<Option<f64>>) -> Result<Self> {
        if !is_hour_aligned(start) {
            return Err(Error::InvalidParameter(format!(
                "series start {start} is not on an hour boundary"
            )));
        }
        Ok(Self { start, values })
    }

    /// Builds a series from dense values with no gaps.
    pub fn from_dense(start: NaiveDateTime, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        Self::new(start, values.into_iter().map(Some).collect())
    }

    /// Builds a series from sorted, hour-aligned points; missing hours become gaps.
    pub fn from_points(points: &[(NaiveDateTime, f64)]) -> Result<Self> {
        let Some(&(start, _)) = points.first() else {
            return Err(Error::EmptyInput);
        };
        if !is_hour_aligned(start) {
            return Err(Error::InvalidParameter(format!(
                "{start} is not hour-aligned"
            )));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidParameter(format!(
                    "timestamps not strictly increasing at {}",
                    w[1].0
                )));
            }
        }
        let last = points[points.len() - 1].0;
        let len = (last - start).num_hours() as usize + 1;
        let mut values = vec![None; len];
        for &(ts, v) in points {
            if !is_hour_aligned(ts) {
                return Err(Error::InvalidParameter(format!("{ts} is not hour-aligned")));
            }
            values[(ts - start).num_hours() as usize] = Some(v);
        }
        Ok(Self { start, values })
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    /// Last hour covered (inclusive). Equal to `start` for an empty series.
    pub fn end(&self) -> NaiveDateTime {
        self.start + Duration::hours(self.values.len().saturating_sub(1) as i64)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn timestamp(&self, idx: usize) -> NaiveDateTime {
        self.start + Duration::hours(idx as i64)
    }

    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        if ts < self.start || !is_hour_aligned(ts) {
            return None;
        }
        let idx = (ts - self.start).num_hours() as usize;
        (idx < self.values.len()).then_some(idx)
    }

    pub fn get(&self, ts: NaiveDateTime) -> Option<f64> {
        self.index_of(ts).and_then(|i| self.values[i])
    }

    /// Iterates `(timestamp, value)` over present (non-gap) hours.
    pub fn present(&self) -> impl Iterator<Item = (NaiveDateTime, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (self.timestamp(i), v)))
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            start: self.start,
            values: self.values.iter().map(|v| v.map(&f)).collect(),
        }
    }

    /// Marks the given hours as gaps.
    pub fn mask<'a>(&self, hours: impl IntoIterator<Item = &'a NaiveDateTime>) -> Self {
        let mut out = self.clone();
        for ts in hours {
            if let Some(i) = self.index_of(*ts) {
                out.values[i] = None;
            }
        }
        out
    }

    /// Restricts to `[from, to]` inclusive, padding with gaps if needed.
    pub fn window(&self, from: NaiveDateTime, to: NaiveDateTime) -> Self {
        let len = if to >= from {
            (to - from).num_hours() as usize + 1
        } else {
            0
        };
        let values = (0..len)
            .map(|i| self.get(from + Duration::hours(i as i64)))
            .collect();
        Self {
            start: from,
            values,
        }
    }

    /// Drops leading and trailing gaps.
    pub fn trimmed(&self) -> Self {
        let first = self.values.iter().position(Option::is_some);
        let last = self.values.iter().rposition(Option::is_some);
        match (first, last) {
            (Some(a), Some(b)) => Self {
                start: self.timestamp(a),
                values: self.values[a..=b].to_vec(),
            },
            _ => Self {
                start: self.start,
                values: Vec::new(),
            },
        }
    }

    /// Longest run of consecutive present values.
    pub fn longest_run(&self) -> Vec<f64> {
        let mut best: &[Option<f64>] = &[];
        let mut run_start = 0;
        for i in 0..=self.values.len() {
            if i == self.values.len() || self.values[i].is_none() {
                if i - run_start > best.len() {
                    best = &self.values[run_start..i];
                }
                run_start = i + 1;
            }
        }
        best.iter().map(|v| v.expect("run is gap-free")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap()
    }

    #[test]
    fn from_points_fills_gaps() {
        let s = HourlySeries::from_points(&[
            (ts("2014-01-01 00:00"), 1.0),
            (ts("2014-01-01 03:00"), 4.0),
        ])
        .unwrap();
        assert_eq!(s.values(), &[Some(1.0), None, None, Some(4.0)]);
        assert_eq!(s.end(), ts("2014-01-01 03:00"));
        assert_eq!(s.present_count(), 2);
    }

    #[test]
    fn rejects_unaligned_and_unsorted() {
        assert!(HourlySeries::from_points(&[(ts("2014-01-01 00:30"), 1.0)]).is_err());
        assert!(HourlySeries::from_points(&[
            (ts("2014-01-01 02:00"), 1.0),
            (ts("2014-01-01 01:00"), 1.0)
        ])
        .is_err());
    }

    #[test]
    fn trimmed_and_longest_run() {
        let s = HourlySeries::new(
            ts("2014-01-01 00:00"),
            vec![
                None,
                Some(1.0),
                Some(2.0),
                None,
                Some(3.0),
                Some(4.0),
                Some(5.0),
                None,
            ],
        )
        .unwrap();
        let t = s.trimmed();
        assert_eq!(t.start(), ts("2014-01-01 01:00"));
        assert_eq!(t.len(), 6);
        assert_eq!(s.longest_run(), vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn window_pads_outside_range() {
        let s = HourlySeries::from_dense(ts("2014-01-01 00:00"), [1.0, 2.0]).unwrap();
        let w = s.window(ts("2013-12-31 23:00"), ts("2014-01-01 02:00"));
        assert_eq!(w.values(), &[None, Some(1.0), Some(2.0), None]);
    }
}

//! "10 in 10" baseline with load-point adjustment.
//!
//! The baseline for an hour on a weekday is the mean of that clock hour over
//! the 10 most recent prior weekdays without an event; weekends and holidays
//! use the 4 most recent prior weekend days or holidays. Only days with all
//! 24 hours present qualify. On a day with an event, every hourly value is
//! scaled by the ratio of observed to baseline consumption over the three
//! hours `s-4, s-3, s-2`, where `s` is the day's first event hour.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::ingest::DrEvent;
use crate::series::{is_weekend, HourlySeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsoConfig {
    pub weekday_days: usize,
    pub weekend_days: usize,
    pub holidays: BTreeSet<NaiveDate>,
    pub load_point_adjustment: bool,
}

impl Default for IsoConfig {
    fn default() -> Self {
        Self {
            weekday_days: 10,
            weekend_days: 4,
            holidays: BTreeSet::new(),
            load_point_adjustment: true,
        }
    }
}

pub struct IsoBaseline<'a> {
    history: &'a HourlySeries,
    cfg: &'a IsoConfig,
    /// First event hour on each event day.
    event_days: BTreeMap<NaiveDate, NaiveDateTime>,
    memo: BTreeMap<NaiveDate, Option<[f64; 24]>>,
}

impl<'a> IsoBaseline<'a> {
    pub fn new(history: &'a HourlySeries, events: &[DrEvent], cfg: &'a IsoConfig) -> Self {
        let mut event_days = BTreeMap::new();
        for h in events.iter().flat_map(DrEvent::hours) {
            event_days
                .entry(h.date())
                .and_modify(|first: &mut NaiveDateTime| *first = (*first).min(h))
                .or_insert(h);
        }
        Self {
            history,
            cfg,
            event_days,
            memo: BTreeMap::new(),
        }
    }

    fn weekend_like(&self, d: NaiveDate) -> bool {
        is_weekend(d) || self.cfg.holidays.contains(&d)
    }

    fn day_values(&self, d: NaiveDate) -> Option<[f64; 24]> {
        let start = d.and_hms_opt(0, 0, 0).expect("midnight");
        let mut out = [0.0; 24];
        for (h, v) in out.iter_mut().enumerate() {
            *v = self.history.get(start + Duration::hours(h as i64))?;
        }
        Some(out)
    }

    /// Unadjusted 24-hour baseline for day `d`, if enough history exists.
    pub fn raw_day(&mut self, d: NaiveDate) -> Option<[f64; 24]> {
        if let Some(v) = self.memo.get(&d) {
            return *v;
        }
        let weekend = self.weekend_like(d);
        let need = if weekend {
            self.cfg.weekend_days
        } else {
            self.cfg.weekday_days
        };
        let first_day = self.history.start().date();
        let mut picked = Vec::with_capacity(need);
        let mut day = d;
        while picked.len() < need && day > first_day {
            day = day.pred_opt().expect("date in range");
            if self.weekend_like(day) != weekend || self.event_days.contains_key(&day) {
                continue;
            }
            if let Some(v) = self.day_values(day) {
                picked.push(v);
            }
        }
        let result = (need > 0 && picked.len() == need).then(|| {
            let mut mean = [0.0; 24];
            for (h, m) in mean.iter_mut().enumerate() {
                *m = picked.iter().map(|v| v[h]).sum::<f64>() / need as f64;
            }
            mean
        });
        self.memo.insert(d, result);
        result
    }

    pub fn raw(&mut self, ts: NaiveDateTime) -> Option<f64> {
        self.raw_day(ts.date()).map(|v| v[ts.hour() as usize])
    }

    /// Load-point adjustment ratio for day `d`; 1 on days without an event.
    pub fn adjustment(&mut self, d: NaiveDate) -> Option<f64> {
        let Some(&first) = self.event_days.get(&d) else {
            return Some(1.0);
        };
        if !self.cfg.load_point_adjustment {
            return Some(1.0);
        }
        let (mut observed, mut baseline) = (0.0, 0.0);
        for back in 2..=4 {
            let h = first - Duration::hours(back);
            observed += self.history.get(h)?;
            baseline += self.raw(h)?;
        }
        (baseline != 0.0).then(|| (observed / 3.0) / (baseline / 3.0))
    }

    pub fn predict(&mut self, ts: NaiveDateTime) -> Option<f64> {
        let raw = self.raw(ts)?;
        Some(raw * self.adjustment(ts.date())?)
    }
}

/// Baseline predictions at `targets`; `None` where history is insufficient.
pub fn iso_baseline(
    history: &HourlySeries,
    events: &[DrEvent],
    targets: &[NaiveDateTime],
    cfg: &IsoConfig,
) -> Vec<Option<f64>> {
    let mut b = IsoBaseline::new(history, events, cfg);
    targets.iter().map(|&t| b.predict(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monday() -> NaiveDateTime {
        // 2014-06-02 is a Monday.
        NaiveDate::from_ymd_opt(2014, 6, 2)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    #[test]
    fn constant_history_gives_constant_baseline() {
        let h = HourlySeries::from_dense(monday(), vec![2.5; 24 * 21]).unwrap();
        let ev = DrEvent::new("u", monday() + Duration::hours(24 * 20 + 15), 1).unwrap();
        let cfg = IsoConfig::default();
        let mut b = IsoBaseline::new(&h, std::slice::from_ref(&ev), &cfg);
        assert_eq!(b.adjustment(ev.start.date()), Some(1.0));
        assert_eq!(b.predict(ev.start), Some(2.5));
    }

    #[test]
    fn mean_of_last_ten_weekdays() {
        // Weekday k (counting from 1) reads k at every hour; weekends read 100.
        let mut vals = Vec::new();
        let mut weekday = 0;
        for d in 0..26 {
            let date = (monday() + Duration::days(d)).date();
            let v = if is_weekend(date) {
                100.0
            } else {
                weekday += 1;
                weekday as f64
            };
            vals.extend(std::iter::repeat_n(v, 24));
        }
        let h = HourlySeries::from_dense(monday(), vals).unwrap();
        // Day 18 is a Friday, the 15th weekday; the prior ten read 5..=14.
        let target = monday() + Duration::days(18) + Duration::hours(14);
        let got = iso_baseline(&h, &[], &[target], &IsoConfig::default())[0].unwrap();
        assert_eq!(got, 9.5);
    }

    #[test]
    fn insufficient_history_is_unavailable() {
        let h = HourlySeries::from_dense(monday(), vec![1.0; 24 * 7]).unwrap();
        let target = monday() + Duration::days(6);
        assert_eq!(
            iso_baseline(&h, &[], &[target], &IsoConfig::default()),
            vec![None]
        );
    }

    #[test]
    fn holidays_use_weekend_pool() {
        let h = HourlySeries::from_dense(
            monday(),
            (0..24 * 28).map(|i| {
                if is_weekend((monday() + Duration::hours(i)).date()) {
                    7.0
                } else {
                    1.0
                }
            }),
        )
        .unwrap();
        let holiday = (monday() + Duration::days(23)).date();
        let cfg = IsoConfig {
            holidays: [holiday].into(),
            ..IsoConfig::default()
        };
        let got = iso_baseline(&h, &[], &[holiday.and_hms_opt(9, 0, 0).unwrap()], &cfg);
        assert_eq!(got, vec![Some(7.0)]);
    }
}

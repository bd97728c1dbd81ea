//! Lagged covariates and the training / DR partition.
//!
//! Each row predicting consumption at hour `t` holds, in order:
//! consumption at `t-1..t-5`, temperature at `t-1..t-5`, and a one-hot block
//! of 48 entries indexed by `24 * weekend + hour_of_day` (weekend = Saturday
//! or Sunday). Rows whose lag window touches a gap, a DR hour or a spillover
//! hour are dropped.

use std::io::{BufRead, Write};

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{format_timestamp, parse_timestamp, DrEvent};
use crate::matrix::Matrix;
use crate::prep::spillover::{remove_spillover, SpilloverSplit};
use crate::series::{is_weekend, HourlySeries};

pub const CONS_LAGS: usize = 5;
pub const TEMP_LAGS: usize = 5;
pub const CATEGORIES: usize = 48;
pub const WIDTH: usize = CONS_LAGS + TEMP_LAGS + CATEGORIES;

const SCHEMA_PREFIX: &str = "#schema=";

pub fn category_index(ts: NaiveDateTime) -> usize {
    let weekend = usize::from(is_weekend(ts.date()));
    weekend * 24 + ts.hour() as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub columns: Vec<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        let mut columns = Vec::with_capacity(WIDTH);
        columns.extend((1..=CONS_LAGS).map(|l| format!("cons_lag{l}")));
        columns.extend((1..=TEMP_LAGS).map(|l| format!("temp_lag{l}")));
        columns.extend((0..24).map(|h| format!("wd_h{h:02}")));
        columns.extend((0..24).map(|h| format!("we_h{h:02}")));
        Self { columns }
    }
}

impl ColumnSchema {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn descriptor(&self) -> String {
        self.columns.join(",")
    }

    /// First 16 hex digits of the SHA-256 of the descriptor.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.descriptor().as_bytes());
        hex::encode(&digest[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub spillover_hours: u32,
    pub min_training_rows: usize,
    pub min_dr_rows: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            spillover_hours: 8,
            min_training_rows: 1000,
            min_dr_rows: 10,
        }
    }
}

/// Covariates and outcomes for one user: `(x0, y0)` from clean hours,
/// `(x1, y1)` from DR hours. Rows are in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub schema: ColumnSchema,
    pub x0: Matrix,
    pub y0: Vec<f64>,
    pub t0: Vec<NaiveDateTime>,
    pub x1: Matrix,
    pub y1: Vec<f64>,
    pub t1: Vec<NaiveDateTime>,
}

/// Indices (into the aligned series) of the hours that become rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RowPlan {
    pub training: Vec<usize>,
    pub dr: Vec<usize>,
}

pub fn plan_rows(
    cons: &HourlySeries,
    temp: &HourlySeries,
    split: &SpilloverSplit,
) -> Result<RowPlan> {
    if cons.start() != temp.start() || cons.len() != temp.len() {
        return Err(Error::InvalidParameter(
            "consumption and temperature series are not aligned".into(),
        ));
    }
    let c = cons.values();
    let t = temp.values();
    let max_lag = CONS_LAGS.max(TEMP_LAGS);
    let mut plan = RowPlan::default();
    for i in max_lag..cons.len() {
        if c[i].is_none() {
            continue;
        }
        let window_ok = (1..=max_lag).all(|l| {
            let j = i - l;
            (l > CONS_LAGS || c[j].is_some())
                && (l > TEMP_LAGS || t[j].is_some())
                && split.is_clean(cons.timestamp(j))
        });
        if !window_ok {
            continue;
        }
        let target = cons.timestamp(i);
        if split.dr_hours.contains(&target) {
            plan.dr.push(i);
        } else if !split.removed.contains(&target) {
            plan.training.push(i);
        }
    }
    Ok(plan)
}

fn feature_row(cons: &HourlySeries, temp: &HourlySeries, i: usize, out: &mut [f64]) {
    let c = cons.values();
    let t = temp.values();
    out.fill(0.0);
    for l in 1..=CONS_LAGS {
        out[l - 1] = c[i - l].expect("planned lag present");
    }
    for l in 1..=TEMP_LAGS {
        out[CONS_LAGS + l - 1] = t[i - l].expect("planned lag present");
    }
    out[CONS_LAGS + TEMP_LAGS + category_index(cons.timestamp(i))] = 1.0;
}

fn materialize(
    cons: &HourlySeries,
    temp: &HourlySeries,
    idx: &[usize],
) -> (Matrix, Vec<f64>, Vec<NaiveDateTime>) {
    let mut x = Matrix::zeros(idx.len(), WIDTH);
    let mut y = Vec::with_capacity(idx.len());
    let mut ts = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        feature_row(cons, temp, i, x.row_mut(r));
        y.push(cons.values()[i].expect("planned target present"));
        ts.push(cons.timestamp(i));
    }
    (x, y, ts)
}

/// Builds rows from aligned series using a precomputed spillover split.
pub fn build_from_split(
    cons: &HourlySeries,
    temp: &HourlySeries,
    split: &SpilloverSplit,
    cfg: &FeatureConfig,
) -> Result<FeatureSet> {
    let plan = plan_rows(cons, temp, split)?;
    if plan.training.len() < cfg.min_training_rows || plan.dr.len() < cfg.min_dr_rows {
        return Err(Error::InsufficientRows {
            training: plan.training.len(),
            dr: plan.dr.len(),
            min_training: cfg.min_training_rows,
            min_dr: cfg.min_dr_rows,
        });
    }
    let (x0, y0, t0) = materialize(cons, temp, &plan.training);
    let (x1, y1, t1) = materialize(cons, temp, &plan.dr);
    Ok(FeatureSet {
        schema: ColumnSchema::default(),
        x0,
        y0,
        t0,
        x1,
        y1,
        t1,
    })
}

pub fn build_features(
    cons: &HourlySeries,
    temp: &HourlySeries,
    events: &[DrEvent],
    cfg: &FeatureConfig,
) -> Result<FeatureSet> {
    let split = remove_spillover(cons, events, cfg.spillover_hours);
    build_from_split(cons, temp, &split, cfg)
}

/// Writes a feature set as CSV preceded by a `#schema=` line.
pub fn write_features<W: Write>(fs: &FeatureSet, mut out: W) -> Result<()> {
    writeln!(out, "{SCHEMA_PREFIX}{}", fs.schema.descriptor())
        .map_err(|e| Error::io("<features>", e))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["partition".to_string(), "timestamp".into(), "y".into()];
    header.extend(fs.schema.columns.iter().cloned());
    w.write_record(&header)?;
    for (part, x, y, t) in [
        ("train", &fs.x0, &fs.y0, &fs.t0),
        ("dr", &fs.x1, &fs.y1, &fs.t1),
    ] {
        for r in 0..x.nrows() {
            let mut rec = Vec::with_capacity(3 + x.ncols());
            rec.push(part.to_string());
            rec.push(format_timestamp(t[r]));
            rec.push(y[r].to_string());
            rec.extend(x.row(r).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<features>", e))?;
    Ok(())
}

pub fn read_features<R: BufRead>(mut input: R) -> Result<FeatureSet> {
    let mut first = String::new();
    input
        .read_line(&mut first)
        .map_err(|e| Error::io("<features>", e))?;
    let descriptor = first
        .trim_end()
        .strip_prefix(SCHEMA_PREFIX)
        .ok_or_else(|| Error::Row {
            line: 1,
            message: "missing #schema= line".into(),
        })?;
    let schema = ColumnSchema {
        columns: descriptor.split(',').map(str::to_string).collect(),
    };
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() != 3 + schema.width() || header[3..] != schema.columns[..] {
        return Err(Error::Header {
            expected: descriptor.to_string(),
            found: header.join(","),
        });
    }
    let utc = chrono::FixedOffset::east_opt(0).expect("zero offset");
    let width = schema.width();
    let (mut d0, mut y0, mut t0, mut d1, mut y1, mut t1) =
        (vec![], vec![], vec![], vec![], vec![], vec![]);
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Row { line, message };
        let ts = parse_timestamp(&rec[1], utc).map_err(bad)?;
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(format!("invalid number `{s}`")))
        };
        let y = num(&rec[2])?;
        let (d, ys, tt) = match &rec[0] {
            "train" => (&mut d0, &mut y0, &mut t0),
            "dr" => (&mut d1, &mut y1, &mut t1),
            other => return Err(bad(format!("unknown partition `{other}`"))),
        };
        for f in rec.iter().skip(3) {
            d.push(num(f)?);
        }
        ys.push(y);
        tt.push(ts);
    }
    Ok(FeatureSet {
        x0: Matrix::from_row_major(y0.len(), width, d0)?,
        x1: Matrix::from_row_major(y1.len(), width, d1)?,
        schema,
        y0,
        t0,
        y1,
        t1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap()
    }

    fn lenient() -> FeatureConfig {
        FeatureConfig {
            spillover_hours: 8,
            min_training_rows: 0,
            min_dr_rows: 0,
        }
    }

    fn pair(start: &str, n: usize) -> (HourlySeries, HourlySeries) {
        let c = HourlySeries::from_dense(ts(start), (0..n).map(|i| i as f64)).unwrap();
        let t = HourlySeries::from_dense(ts(start), (0..n).map(|i| 100.0 + i as f64)).unwrap();
        (c, t)
    }

    #[test]
    fn width_is_fifty_eight() {
        assert_eq!(ColumnSchema::default().width(), 58);
        assert_eq!(WIDTH, 58);
    }

    #[test]
    fn saturday_midnight_maps_to_weekend_block() {
        // 2014-07-05 is a Saturday.
        assert_eq!(category_index(ts("2014-07-05 00:00")), 24);
        assert_eq!(category_index(ts("2014-07-06 23:00")), 47);
        assert_eq!(category_index(ts("2014-07-07 13:00")), 13);
    }

    #[test]
    fn row_layout() {
        let (c, t) = pair("2014-07-01 00:00", 24);
        let fs = build_features(&c, &t, &[], &lenient()).unwrap();
        assert_eq!(fs.x0.nrows(), 19);
        assert!(fs.x1.nrows() == 0);
        let row = fs.x0.row(0);
        assert_eq!(fs.t0[0], ts("2014-07-01 05:00"));
        assert_eq!(fs.y0[0], 5.0);
        assert_eq!(&row[..5], &[4.0, 3.0, 2.0, 1.0, 0.0]);
        assert_eq!(&row[5..10], &[104.0, 103.0, 102.0, 101.0, 100.0]);
        assert_eq!(row[10 + 5], 1.0);
        assert_eq!(row[10..].iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn one_dr_hour_gives_one_dr_row() {
        let (c, t) = pair("2014-07-01 00:00", 72);
        let ev = DrEvent::new("u", ts("2014-07-02 14:00"), 1).unwrap();
        let fs = build_features(&c, &t, &[ev], &lenient()).unwrap();
        assert_eq!(fs.y1.len(), 1);
        assert_eq!(fs.t1[0], ts("2014-07-02 14:00"));
        // Targets 14:00..=22:00 are excluded, and so are the 5 hours after
        // the spillover whose lag windows still reach into it.
        let n_excluded = 1 + 8 + 5;
        assert_eq!(fs.y0.len(), 72 - 5 - n_excluded);
    }

    #[test]
    fn partitions_disjoint_and_lag_windows_clean() {
        let (c, t) = pair("2014-07-01 00:00", 24 * 10);
        let events: Vec<_> = [
            "2014-07-02 10:00",
            "2014-07-04 18:00",
            "2014-07-04 19:00",
            "2014-07-07 03:00",
        ]
        .iter()
        .map(|s| DrEvent::new("u", ts(s), 1).unwrap())
        .collect();
        let split = remove_spillover(&c, &events, 8);
        let fs = build_from_split(&c, &t, &split, &lenient()).unwrap();
        for &target in &fs.t0 {
            assert!(split.is_clean(target));
        }
        for &target in fs.t0.iter().chain(&fs.t1) {
            for l in 1..=5 {
                assert!(split.is_clean(target - Duration::hours(l)));
            }
        }
        // 19:00 follows a DR hour so its lag window is not clean.
        assert_eq!(
            fs.t1,
            vec![
                ts("2014-07-02 10:00"),
                ts("2014-07-04 18:00"),
                ts("2014-07-07 03:00")
            ]
        );
    }

    #[test]
    fn gaps_drop_rows() {
        let (c, t) = pair("2014-07-01 00:00", 24);
        let c = c.mask(&[ts("2014-07-01 10:00")]);
        let fs = build_features(&c, &t, &[], &lenient()).unwrap();
        // Target 10:00 and the 5 targets after it are lost.
        assert_eq!(fs.y0.len(), 19 - 6);
    }

    #[test]
    fn minimum_rows_enforced() {
        let (c, t) = pair("2014-07-01 00:00", 48);
        let err = build_features(&c, &t, &[], &FeatureConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientRows {
                training: 43,
                dr: 0,
                ..
            }
        ));
    }

    #[test]
    fn week_shift_leaves_covariates_unchanged() {
        let (c, t) = pair("2014-07-01 00:00", 24 * 9);
        let ev = DrEvent::new("u", ts("2014-07-03 12:00"), 2).unwrap();
        let fs = build_features(&c, &t, &[ev.clone()], &lenient()).unwrap();
        let week = Duration::days(7);
        let c2 = HourlySeries::new(c.start() + week, c.values().to_vec()).unwrap();
        let t2 = HourlySeries::new(t.start() + week, t.values().to_vec()).unwrap();
        let ev2 = DrEvent::new("u", ev.start + week, 2).unwrap();
        let fs2 = build_features(&c2, &t2, &[ev2], &lenient()).unwrap();
        assert_eq!(fs.x0, fs2.x0);
        assert_eq!(fs.x1, fs2.x1);
    }

    #[test]
    fn file_round_trip() {
        let (c, t) = pair("2014-07-01 00:00", 72);
        let c = c.map(|v| v * 0.1 + 1.0 / 3.0);
        let ev = DrEvent::new("u", ts("2014-07-02 14:00"), 1).unwrap();
        let fs = build_features(&c, &t, &[ev], &lenient()).unwrap();
        let mut buf = Vec::new();
        write_features(&fs, &mut buf).unwrap();
        assert!(buf.starts_with(b"#schema=cons_lag1,"));
        let back = read_features(&buf[..]).unwrap();
        assert_eq!(back, fs);
    }
}

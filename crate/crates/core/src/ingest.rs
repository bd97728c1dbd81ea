//! Reading meter, temperature, DR-event and flag files into per-user hourly series.
//!
//! File formats (all UTF-8 CSV with a header row, comma separated):
//!
//! | file        | header                         |
//! |-------------|--------------------------------|
//! | meter       | `user_id,timestamp,kwh`        |
//! | temperature | `timestamp,temp_c`             |
//! | DR events   | `user_id,start,duration_hours` |
//! | flags       | `user_id,has_solar`            |
//!
//! Timestamps are ISO-8601 (`2014-07-01T14:00:00`, a space separator and
//! omitted seconds are also accepted). A timestamp without an offset is taken
//! as local clock time; one carrying an offset (`Z`, `+02:00`) is converted to
//! the configured local offset. Meter and event timestamps must fall on the
//! hour. In strict mode any column beyond the documented ones is an error and
//! the first malformed row aborts the load; otherwise extra columns are
//! ignored and malformed rows are counted and reported.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{floor_hour, is_hour_aligned, HourlySeries};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    /// Reject unknown columns and abort on the first malformed row.
    pub strict: bool,
    /// Readings above this many kWh in one hour mark the user corrupt.
    pub max_kwh: f64,
    /// Local UTC offset all timestamps are normalized to, e.g. `-08:00`.
    pub timezone: String,
    /// Hours with no temperature observation this close become gaps.
    pub max_temperature_gap_hours: i64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            strict: false,
            max_kwh: 50.0,
            timezone: "+00:00".into(),
            max_temperature_gap_hours: 3,
        }
    }
}

impl IngestOptions {
    pub fn offset(&self) -> Result<FixedOffset> {
        self.timezone
            .parse::<FixedOffset>()
            .map_err(|_| Error::Config(format!("invalid timezone offset `{}`", self.timezone)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterReading {
    pub timestamp: NaiveDateTime,
    pub kwh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureObservation {
    pub timestamp: NaiveDateTime,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DrEvent {
    pub user_id: String,
    pub start: NaiveDateTime,
    pub duration_hours: u32,
}

impl DrEvent {
    pub fn new(
        user_id: impl Into<String>,
        start: NaiveDateTime,
        duration_hours: u32,
    ) -> Result<Self> {
        if duration_hours == 0 {
            return Err(Error::InvalidParameter(
                "event duration must be >= 1 hour".into(),
            ));
        }
        if !is_hour_aligned(start) {
            return Err(Error::InvalidParameter(format!(
                "event start {start} not on the hour"
            )));
        }
        Ok(Self {
            user_id: user_id.into(),
            start,
            duration_hours,
        })
    }

    pub fn hours(&self) -> impl Iterator<Item = NaiveDateTime> + '_ {
        (0..self.duration_hours as i64).map(move |h| self.start + Duration::hours(h))
    }

    pub fn last_hour(&self) -> NaiveDateTime {
        self.start + Duration::hours(self.duration_hours as i64 - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserFlags {
    pub user_id: String,
    pub has_solar: bool,
    pub corrupt: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: u64,
    pub user_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseStats {
    pub rows: usize,
    pub rejected: usize,
    pub issues: Vec<RowIssue>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeterData {
    /// Readings per user, sorted by timestamp.
    pub users: BTreeMap<String, Vec<MeterReading>>,
    /// Users with at least one negative or excessive reading.
    pub corrupt: BTreeSet<String>,
    pub stats: ParseStats,
}

impl MeterData {
    pub fn series(&self, user_id: &str) -> Option<HourlySeries> {
        let readings = self.users.get(user_id)?;
        let points: Vec<_> = readings.iter().map(|r| (r.timestamp, r.kwh)).collect();
        HourlySeries::from_points(&points).ok()
    }
}

pub fn parse_timestamp(raw: &str, tz: FixedOffset) -> Result<NaiveDateTime, String> {
    let s = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&tz).naive_local());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%:z",
        "%Y-%m-%d %H:%M:%S%:z",
        "%Y-%m-%dT%H:%M%:z",
        "%Y-%m-%d %H:%M%:z",
    ] {
        if let Ok(dt) = DateTime::parse_from_str(s, fmt) {
            return Ok(dt.with_timezone(&tz).naive_local());
        }
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt);
        }
    }
    Err(format!("invalid timestamp `{s}`"))
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

fn parse_finite(raw: &str, what: &str) -> Result<f64, String> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| format!("invalid {what} `{}`", raw.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {what} `{}`", raw.trim()))
    }
}

fn parse_bool(raw: &str) -> Result<bool, String> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("invalid boolean `{other}`")),
    }
}

/// CSV reader that resolves the documented columns by name.
struct Table<R> {
    reader: csv::Reader<R>,
    columns: Vec<usize>,
}

impl<R: Read> Table<R> {
    fn new(inner: R, expected: &[&str], strict: bool) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(inner);
        let header = reader.headers()?.clone();
        let found: Vec<&str> = header.iter().collect();
        let mismatch = || Error::Header {
            expected: expected.join(","),
            found: found.join(","),
        };
        if found.is_empty() || (found.len() == 1 && found[0].is_empty()) {
            return Ok(Self {
                reader,
                columns: Vec::new(),
            });
        }
        if strict && found.len() != expected.len() {
            return Err(mismatch());
        }
        let columns = expected
            .iter()
            .map(|name| found.iter().position(|f| f == name).ok_or_else(mismatch))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { reader, columns })
    }

    /// Yields (line, fields-in-expected-order) for each record.
    fn for_each(mut self, mut f: impl FnMut(u64, Vec<&str>) -> Result<()>) -> Result<()> {
        if self.columns.is_empty() {
            return Ok(());
        }
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    let fields = self
                        .columns
                        .iter()
                        .map(|&c| record.get(c).unwrap_or(""))
                        .collect();
                    f(line, fields)?;
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    return Err(Error::Row {
                        line,
                        message: e.to_string(),
                    });
                }
            }
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn load_meter_csv(path: &Path, opts: &IngestOptions) -> Result<MeterData> {
    read_meter(open(path)?, opts)
}

pub fn read_meter<R: Read>(input: R, opts: &IngestOptions) -> Result<MeterData> {
    let tz = opts.offset()?;
    let table = Table::new(input, &["user_id", "timestamp", "kwh"], opts.strict)?;
    let mut data = MeterData::default();
    table.for_each(|line, f| {
        data.stats.rows += 1;
        let user = f[0].to_string();
        let parsed = (|| {
            if user.is_empty() {
                return Err("empty user_id".to_string());
            }
            let ts = parse_timestamp(f[1], tz)?;
            if !is_hour_aligned(ts) {
                return Err(format!("timestamp {ts} not at hour resolution"));
            }
            Ok((ts, parse_finite(f[2], "kwh")?))
        })();
        match parsed {
            Ok((timestamp, kwh)) => {
                if kwh < 0.0 || kwh > opts.max_kwh {
                    data.stats.rejected += 1;
                    data.stats.issues.push(RowIssue {
                        line,
                        user_id: Some(user.clone()),
                        message: format!("implausible consumption {kwh} kWh"),
                    });
                    data.corrupt.insert(user);
                } else {
                    data.users
                        .entry(user)
                        .or_default()
                        .push(MeterReading { timestamp, kwh });
                }
                Ok(())
            }
            Err(message) if opts.strict => Err(Error::Row { line, message }),
            Err(message) => {
                data.stats.rejected += 1;
                data.stats.issues.push(RowIssue {
                    line,
                    user_id: (!user.is_empty()).then_some(user),
                    message,
                });
                Ok(())
            }
        }
    })?;
    for (user, readings) in data.users.iter_mut() {
        readings.sort_by_key(|r| r.timestamp);
        if let Some(w) = readings
            .windows(2)
            .find(|w| w[0].timestamp == w[1].timestamp)
        {
            return Err(Error::DuplicateTimestamp {
                user_id: user.clone(),
                timestamp: w[0].timestamp,
            });
        }
    }
    Ok(data)
}

pub fn load_temperature_csv(
    path: &Path,
    opts: &IngestOptions,
) -> Result<(Vec<TemperatureObservation>, ParseStats)> {
    read_temperature(open(path)?, opts)
}

pub fn read_temperature<R: Read>(
    input: R,
    opts: &IngestOptions,
) -> Result<(Vec<TemperatureObservation>, ParseStats)> {
    let tz = opts.offset()?;
    let table = Table::new(input, &["timestamp", "temp_c"], opts.strict)?;
    let mut obs = Vec::new();
    let mut stats = ParseStats::default();
    table.for_each(|line, f| {
        stats.rows += 1;
        let parsed =
            parse_timestamp(f[0], tz).and_then(|ts| Ok((ts, parse_finite(f[1], "temp_c")?)));
        match parsed {
            Ok((timestamp, value)) => {
                obs.push(TemperatureObservation { timestamp, value });
                Ok(())
            }
            Err(message) if opts.strict => Err(Error::Row { line, message }),
            Err(message) => {
                stats.rejected += 1;
                stats.issues.push(RowIssue {
                    line,
                    user_id: None,
                    message,
                });
                Ok(())
            }
        }
    })?;
    obs.sort_by_key(|o| o.timestamp);
    Ok((obs, stats))
}

pub fn load_events_csv(
    path: &Path,
    opts: &IngestOptions,
) -> Result<BTreeMap<String, Vec<DrEvent>>> {
    read_events(open(path)?, opts)
}

pub fn read_events<R: Read>(
    input: R,
    opts: &IngestOptions,
) -> Result<BTreeMap<String, Vec<DrEvent>>> {
    let tz = opts.offset()?;
    let table = Table::new(input, &["user_id", "start", "duration_hours"], opts.strict)?;
    let mut events: BTreeMap<String, Vec<DrEvent>> = BTreeMap::new();
    table.for_each(|line, f| {
        let row_err = |message: String| Error::Row { line, message };
        let start = parse_timestamp(f[1], tz).map_err(row_err)?;
        let duration: u32 = f[2]
            .parse()
            .map_err(|_| row_err(format!("invalid duration_hours `{}`", f[2])))?;
        let ev = DrEvent::new(f[0], start, duration).map_err(|e| row_err(e.to_string()))?;
        events.entry(ev.user_id.clone()).or_default().push(ev);
        Ok(())
    })?;
    for (user, evs) in events.iter_mut() {
        evs.sort();
        if let Some(w) = evs.windows(2).find(|w| w[1].start <= w[0].last_hour()) {
            return Err(Error::OverlappingEvents {
                user_id: user.clone(),
                start: w[1].start,
            });
        }
    }
    Ok(events)
}

pub fn load_flags_csv(path: &Path, opts: &IngestOptions) -> Result<BTreeMap<String, UserFlags>> {
    read_flags(open(path)?, opts)
}

pub fn read_flags<R: Read>(input: R, opts: &IngestOptions) -> Result<BTreeMap<String, UserFlags>> {
    let table = Table::new(input, &["user_id", "has_solar"], opts.strict)?;
    let mut flags = BTreeMap::new();
    table.for_each(|line, f| {
        let has_solar = parse_bool(f[1]).map_err(|message| Error::Row { line, message })?;
        flags.insert(
            f[0].to_string(),
            UserFlags {
                user_id: f[0].to_string(),
                has_solar,
                corrupt: false,
            },
        );
        Ok(())
    })?;
    Ok(flags)
}

/// Resamples irregular temperature observations onto clock hours.
///
/// Within an hour holding observations, each observation stands for the span
/// from its own timestamp to the next observation in that hour; the first one
/// also covers the part of the hour before it and the last one runs to the end
/// of the hour. The hourly value is the span-weighted mean. An hour without
/// observations takes the value of the nearest observation if one lies within
/// `max_gap_hours` of the hour, else it is a gap.
pub fn resample_temperature(
    obs: &[TemperatureObservation],
    max_gap_hours: i64,
) -> Result<HourlySeries> {
    let mut obs: Vec<TemperatureObservation> = obs.to_vec();
    obs.sort_by_key(|o| o.timestamp);
    // Average observations sharing a timestamp.
    let mut merged: Vec<(NaiveDateTime, f64, usize)> = Vec::with_capacity(obs.len());
    for o in obs {
        match merged.last_mut() {
            Some(last) if last.0 == o.timestamp => {
                last.1 += o.value;
                last.2 += 1;
            }
            _ => merged.push((o.timestamp, o.value, 1)),
        }
    }
    let points: Vec<(NaiveDateTime, f64)> = merged
        .into_iter()
        .map(|(t, s, n)| (t, s / n as f64))
        .collect();
    let (Some(first), Some(last)) = (points.first(), points.last()) else {
        return Err(Error::EmptyInput);
    };
    let start = floor_hour(first.0);
    let n_hours = (floor_hour(last.0) - start).num_hours() as usize + 1;
    let max_gap = Duration::hours(max_gap_hours);
    let mut values = Vec::with_capacity(n_hours);
    let mut cursor = 0usize;
    for h in 0..n_hours {
        let hour = start + Duration::hours(h as i64);
        let next_hour = hour + Duration::hours(1);
        while cursor < points.len() && points[cursor].0 < hour {
            cursor += 1;
        }
        let mut end = cursor;
        while end < points.len() && points[end].0 < next_hour {
            end += 1;
        }
        let inside = &points[cursor..end];
        if !inside.is_empty() {
            let mut acc = 0.0;
            for (k, &(ts, v)) in inside.iter().enumerate() {
                let from = if k == 0 { hour } else { ts };
                let to = inside.get(k + 1).map_or(next_hour, |p| p.0);
                acc += v * (to - from).num_milliseconds() as f64;
            }
            values.push(Some(acc / 3_600_000.0));
            continue;
        }
        let prev = cursor
            .checked_sub(1)
            .map(|i| (hour - points[i].0, points[i].1));
        let next = points.get(end).map(|p| (p.0 - next_hour, p.1));
        let nearest = match (prev, next) {
            (Some(a), Some(b)) => Some(if b.0 < a.0 { b } else { a }),
            (a, b) => a.or(b),
        };
        values.push(nearest.filter(|(gap, _)| *gap <= max_gap).map(|(_, v)| v));
    }
    HourlySeries::new(start, values)
}

/// Restricts both series to the hours present in each of them.
pub fn align_series(
    cons: &HourlySeries,
    temp: &HourlySeries,
) -> Result<(HourlySeries, HourlySeries)> {
    if cons.is_empty() || temp.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let from = cons.start().max(temp.start());
    let to = cons.end().min(temp.end());
    if from > to {
        return Err(Error::EmptyIntersection);
    }
    let c = cons.window(from, to);
    let t = temp.window(from, to);
    let both: Vec<bool> = c
        .values()
        .iter()
        .zip(t.values())
        .map(|(a, b)| a.is_some() && b.is_some())
        .collect();
    let first = both
        .iter()
        .position(|&b| b)
        .ok_or(Error::EmptyIntersection)?;
    let last = both.iter().rposition(|&b| b).expect("non-empty");
    let keep = |s: &HourlySeries| {
        let vals = (first..=last)
            .map(|i| if both[i] { s.values()[i] } else { None })
            .collect();
        HourlySeries::new(s.timestamp(first), vals)
    };
    Ok((keep(&c)?, keep(&t)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub user_id: String,
    pub reason: String,
}

/// Drops users with solar panels or corrupt readings.
pub fn filter_users<T>(
    flags: &BTreeMap<String, UserFlags>,
    users: BTreeMap<String, T>,
) -> Result<(BTreeMap<String, T>, Vec<Removal>)> {
    if let Some(missing) = users.keys().find(|u| !flags.contains_key(*u)) {
        return Err(Error::MissingFlags(missing.clone()));
    }
    let mut kept = BTreeMap::new();
    let mut log = Vec::new();
    for (user, data) in users {
        let f = &flags[&user];
        let reason = match (f.has_solar, f.corrupt) {
            (true, true) => Some("solar,corrupt"),
            (true, false) => Some("solar"),
            (false, true) => Some("corrupt"),
            (false, false) => None,
        };
        match reason {
            Some(r) => log.push(Removal {
                user_id: user,
                reason: r.into(),
            }),
            None => {
                kept.insert(user, data);
            }
        }
    }
    Ok((kept, log))
}

/// Marks corrupt users found during meter parsing in the flag table.
pub fn apply_corrupt(flags: &mut BTreeMap<String, UserFlags>, corrupt: &BTreeSet<String>) {
    for user in corrupt {
        if let Some(f) = flags.get_mut(user) {
            f.corrupt = true;
        }
    }
}

pub fn write_meter<W: Write>(out: W, rows: &[(String, MeterReading)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "timestamp", "kwh"])?;
    for (user, r) in rows {
        w.write_record([
            user.as_str(),
            &format_timestamp(r.timestamp),
            &r.kwh.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<meter>", e))?;
    Ok(())
}

pub fn write_temperature<W: Write>(out: W, obs: &[TemperatureObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "temp_c"])?;
    for o in obs {
        w.write_record([format_timestamp(o.timestamp), o.value.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<temperature>", e))?;
    Ok(())
}

pub fn write_events<W: Write>(out: W, events: &[DrEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "start", "duration_hours"])?;
    for e in events {
        w.write_record([
            e.user_id.clone(),
            format_timestamp(e.start),
            e.duration_hours.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<events>", e))?;
    Ok(())
}

pub fn write_flags<W: Write>(out: W, flags: &[UserFlags]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "has_solar"])?;
    for f in flags {
        w.write_record([
            f.user_id.as_str(),
            if f.has_solar { "true" } else { "false" },
        ])?;
    }
    w.flush().map_err(|e| Error::io("<flags>", e))?;
    Ok(())
}

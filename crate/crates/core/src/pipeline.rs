//! File-based stages. Each stage reads the checkpoints of earlier stages
//! under one output directory and writes its own; `run_all` chains them.
//! Every table is sorted by user id (then method, then time), so outputs
//! depend only on inputs, configuration and seed.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::effects::{estimate, output_order, read_estimates, write_estimates, TreatmentEstimate};
use crate::error::{Error, Result};
use crate::evaluate::evaluate_method;
use crate::forecast::Method;
use crate::ingest::{
    apply_corrupt, filter_users, format_timestamp, load_events_csv, load_flags_csv, load_meter_csv,
    load_temperature_csv, read_events, resample_temperature, write_events, write_flags,
    write_meter, write_temperature, DrEvent, IngestOptions, MeterReading, TemperatureObservation,
    TIMESTAMP_FORMAT,
};
use crate::prep::{features::write_features, prepare_user, PreparedUser};
use crate::report::{
    distribution_summary, read_mape, rejection_rates, write_mape, write_outliers, write_rejections,
    write_summary, MapeRecord,
};
use crate::segment::{read_scores, segment_population, write_centroids, write_scores};
use crate::series::HourlySeries;
use crate::synth::{generate_population, recovery_experiment, write_recovery};

pub const CONSUMPTION: &str = "ingest/consumption.csv";
pub const TEMPERATURE: &str = "ingest/temperature.csv";
pub const EVENTS: &str = "ingest/events.csv";
pub const REMOVED: &str = "ingest/removed.csv";
pub const ISSUES: &str = "ingest/issues.csv";
pub const PREP_SUMMARY: &str = "prep/summary.csv";
pub const PREP_EXCLUDED: &str = "prep/excluded.csv";
pub const FEATURES_DIR: &str = "prep/features";
pub const PREDICTIONS: &str = "forecast/predictions.csv";
pub const FITS: &str = "forecast/fits.csv";
pub const MAPE: &str = "forecast/mape.csv";
pub const FORECAST_FAILURES: &str = "forecast/failures.csv";
pub const MODELS_DIR: &str = "forecast/models";
pub const ESTIMATES: &str = "effects/estimates.csv";
pub const EFFECTS_DIAGNOSTICS: &str = "effects/diagnostics.csv";
pub const CENTROIDS: &str = "segment/centroids.csv";
pub const SCORES: &str = "segment/scores.csv";
pub const SEGMENT_EXCLUDED: &str = "segment/excluded.csv";
pub const SUMMARY: &str = "report/summary.csv";
pub const OUTLIERS: &str = "report/outliers.csv";
pub const REJECTION: &str = "report/rejection.csv";
pub const UNSCORED: &str = "report/unscored.csv";
pub const SYNTH_METER: &str = "synth/meter.csv";
pub const SYNTH_TEMPERATURE: &str = "synth/temperature.csv";
pub const SYNTH_EVENTS: &str = "synth/events.csv";
pub const SYNTH_FLAGS: &str = "synth/flags.csv";
pub const SYNTH_TRUTH: &str = "synth/truth.csv";
pub const RECOVERY: &str = "synth/recovery.csv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Inputs {
    pub meter: PathBuf,
    pub temperature: PathBuf,
    pub events: PathBuf,
    pub flags: PathBuf,
}

fn create(out: &Path, rel: &str) -> Result<BufWriter<File>> {
    let path = out.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(&path, e))
}

fn open(out: &Path, rel: &str) -> Result<BufReader<File>> {
    let path = out.join(rel);
    File::open(&path)
        .map(BufReader::new)
        .map_err(|e| Error::io(&path, e))
}

fn write_rows<W: Write>(
    out: W,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io("<table>", e))?;
    Ok(())
}

fn parse_ts(raw: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT).map_err(|_| Error::Row {
        line: 0,
        message: format!("invalid timestamp `{raw}`"),
    })
}

fn parse_f64(raw: &str) -> Result<f64> {
    raw.parse().map_err(|_| Error::Row {
        line: 0,
        message: format!("invalid number `{raw}`"),
    })
}

/// Reads raw inputs, drops solar and corrupt users, resamples temperature
/// to hours and writes the cleaned tables.
pub fn ingest(inputs: &Inputs, cfg: &Config, out: &Path) -> Result<()> {
    let opts = &cfg.ingest;
    let meter = load_meter_csv(&inputs.meter, opts)?;
    let (temp_obs, temp_stats) = load_temperature_csv(&inputs.temperature, opts)?;
    let mut events = load_events_csv(&inputs.events, opts)?;
    let mut flags = load_flags_csv(&inputs.flags, opts)?;
    apply_corrupt(&mut flags, &meter.corrupt);
    let (kept, removed) = filter_users(&flags, meter.users.clone())?;
    let temp = resample_temperature(&temp_obs, opts.max_temperature_gap_hours)?;

    let rows: Vec<(String, MeterReading)> = kept
        .iter()
        .flat_map(|(u, rs)| rs.iter().map(move |r| (u.clone(), *r)))
        .collect();
    write_meter(create(out, CONSUMPTION)?, &rows)?;
    let hourly: Vec<TemperatureObservation> = temp
        .present()
        .map(|(timestamp, value)| TemperatureObservation { timestamp, value })
        .collect();
    write_temperature(create(out, TEMPERATURE)?, &hourly)?;
    events.retain(|u, _| kept.contains_key(u));
    let ev: Vec<DrEvent> = events.into_values().flatten().collect();
    write_events(create(out, EVENTS)?, &ev)?;
    write_rows(
        create(out, REMOVED)?,
        &["user_id", "reason"],
        removed.into_iter().map(|r| vec![r.user_id, r.reason]),
    )?;
    let issues = meter
        .stats
        .issues
        .iter()
        .map(|i| ("meter", i))
        .chain(temp_stats.issues.iter().map(|i| ("temperature", i)));
    write_rows(
        create(out, ISSUES)?,
        &["file", "line", "user_id", "message"],
        issues.map(|(f, i)| {
            vec![
                f.to_string(),
                i.line.to_string(),
                i.user_id.clone().unwrap_or_default(),
                i.message.clone(),
            ]
        }),
    )?;
    Ok(())
}

/// Cleaned data as written by [`ingest`].
#[derive(Debug, Clone)]
pub struct Ingested {
    pub users: BTreeMap<String, HourlySeries>,
    pub temperature: HourlySeries,
    pub events: BTreeMap<String, Vec<DrEvent>>,
}

pub fn load_ingested(out: &Path) -> Result<Ingested> {
    let opts = IngestOptions::default();
    let meter = crate::ingest::read_meter(open(out, CONSUMPTION)?, &opts)?;
    let users = meter
        .users
        .iter()
        .map(|(u, rs)| {
            let pts: Vec<_> = rs.iter().map(|r| (r.timestamp, r.kwh)).collect();
            Ok((u.clone(), HourlySeries::from_points(&pts)?))
        })
        .collect::<Result<_>>()?;
    let (obs, _) = crate::ingest::read_temperature(open(out, TEMPERATURE)?, &opts)?;
    let pts: Vec<_> = obs.iter().map(|o| (o.timestamp, o.value)).collect();
    let temperature = HourlySeries::from_points(&pts)?;
    let events = read_events(open(out, EVENTS)?, &opts)?;
    Ok(Ingested {
        users,
        temperature,
        events,
    })
}

fn prepare_all(data: &Ingested, cfg: &Config) -> Vec<(String, Result<PreparedUser>)> {
    let users: Vec<(&String, &HourlySeries)> = data.users.iter().collect();
    users
        .par_iter()
        .map(|(u, s)| {
            let ev = data.events.get(*u).map_or(&[][..], Vec::as_slice);
            (
                (*u).clone(),
                prepare_user(s, &data.temperature, ev, &cfg.prep),
            )
        })
        .collect()
}

/// Builds and writes per-user features and standardization diagnostics.
pub fn prep(cfg: &Config, out: &Path) -> Result<()> {
    let data = load_ingested(out)?;
    let mut summary = Vec::new();
    let mut excluded = Vec::new();
    for (u, r) in prepare_all(&data, cfg) {
        match r {
            Ok(p) => {
                write_features(
                    &p.features,
                    create(out, &format!("{FEATURES_DIR}/{u}.csv"))?,
                )?;
                let adf = p.adf.as_ref();
                summary.push(vec![
                    u,
                    p.features.y0.len().to_string(),
                    p.features.y1.len().to_string(),
                    p.cons_params.mean.to_string(),
                    p.cons_params.std.to_string(),
                    p.temp_params.mean.to_string(),
                    p.temp_params.std.to_string(),
                    adf.map_or(String::new(), |a| a.test_statistic.to_string()),
                    adf.map_or(String::new(), |a| a.used_lags.to_string()),
                    adf.map_or(String::new(), |a| a.stationary_at_99.to_string()),
                ]);
            }
            Err(e) => excluded.push(vec![u, e.to_string()]),
        }
    }
    write_rows(
        create(out, PREP_SUMMARY)?,
        &[
            "user_id",
            "n_training",
            "n_dr",
            "kwh_mean",
            "kwh_std",
            "temp_mean",
            "temp_std",
            "adf_statistic",
            "adf_lags",
            "stationary_99",
        ],
        summary,
    )?;
    write_rows(
        create(out, PREP_EXCLUDED)?,
        &["user_id", "reason"],
        excluded,
    )?;
    Ok(())
}

/// Fits every configured method per user and writes DR-hour predictions,
/// training bias, held-out MAPE and the serialized models.
pub fn forecast(cfg: &Config, out: &Path) -> Result<()> {
    let data = load_ingested(out)?;
    let prepared: Vec<(String, PreparedUser)> = prepare_all(&data, cfg)
        .into_iter()
        .filter_map(|(u, r)| r.ok().map(|p| (u, p)))
        .collect();
    let eval = cfg.eval();
    let jobs: Vec<(usize, Method)> = (0..prepared.len())
        .flat_map(|i| cfg.methods.iter().map(move |&m| (i, m)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(i, m)| {
            let (u, p) = &prepared[i];
            let ev = data.events.get(u).map_or(&[][..], Vec::as_slice);
            (u, p, m, evaluate_method(u, m, p, ev, &eval))
        })
        .collect();

    let (mut preds, mut fits, mut mapes, mut failures) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (u, p, m, r) in results {
        match r {
            Ok(o) => {
                let fs = &p.features;
                for (&row, &yh) in o.dr_rows.iter().zip(&o.predictions) {
                    preds.push(vec![
                        u.clone(),
                        m.to_string(),
                        format_timestamp(fs.t1[row]),
                        fs.y1[row].to_string(),
                        yh.to_string(),
                    ]);
                }
                let chosen = o
                    .model
                    .as_ref()
                    .and_then(|md| md.cv.as_ref())
                    .map(|c| c.chosen_label().to_string());
                fits.push(vec![
                    u.clone(),
                    m.to_string(),
                    o.estimate.bias.to_string(),
                    fs.y0.len().to_string(),
                    chosen.unwrap_or_default(),
                ]);
                match o.mape {
                    Some(v) => mapes.push(MapeRecord {
                        user_id: u.clone(),
                        method: m,
                        mape: v,
                    }),
                    None => failures.push(vec![
                        u.clone(),
                        m.to_string(),
                        "mape undefined: all values below floor".into(),
                    ]),
                }
                if let Some(model) = &o.model {
                    let rel = format!("{MODELS_DIR}/{u}/{m}.json");
                    let mut w = create(out, &rel)?;
                    w.write_all(model.to_json()?.as_bytes())
                        .map_err(|e| Error::io(&rel, e))?;
                }
            }
            Err(e) => failures.push(vec![u.clone(), m.to_string(), e.to_string()]),
        }
    }
    write_rows(
        create(out, PREDICTIONS)?,
        &["user_id", "method", "timestamp", "y", "y_hat"],
        preds,
    )?;
    write_rows(
        create(out, FITS)?,
        &["user_id", "method", "bias", "n_training", "cv_choice"],
        fits,
    )?;
    write_mape(create(out, MAPE)?, &mapes)?;
    write_rows(
        create(out, FORECAST_FAILURES)?,
        &["user_id", "method", "error"],
        failures,
    )?;
    Ok(())
}

/// Turns stored predictions into per-user estimates.
pub fn effects(cfg: &Config, out: &Path) -> Result<()> {
    let mut bias: BTreeMap<(String, Method), f64> = BTreeMap::new();
    for rec in csv::Reader::from_reader(open(out, FITS)?).records() {
        let rec = rec?;
        bias.insert((rec[0].to_string(), rec[1].parse()?), parse_f64(&rec[2])?);
    }
    let mut pairs: BTreeMap<(String, Method), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for rec in csv::Reader::from_reader(open(out, PREDICTIONS)?).records() {
        let rec = rec?;
        parse_ts(&rec[2])?;
        let e = pairs
            .entry((rec[0].to_string(), rec[1].parse()?))
            .or_default();
        e.0.push(parse_f64(&rec[3])?);
        e.1.push(parse_f64(&rec[4])?);
    }
    let mut rows: Vec<TreatmentEstimate> = pairs
        .iter()
        .map(|((u, m), (y, yh))| {
            let b = bias.get(&(u.clone(), *m)).copied().unwrap_or(0.0);
            estimate(u, *m, y, yh, b, &cfg.effects)
        })
        .collect::<Result<_>>()?;
    rows.sort_by(output_order);
    write_estimates(create(out, ESTIMATES)?, &rows)?;
    write_rows(
        create(out, EFFECTS_DIAGNOSTICS)?,
        &["user_id", "method", "diagnostic"],
        rows.iter().filter(|r| r.mpr_diverged).map(|r| {
            vec![
                r.user_id.clone(),
                r.method.to_string(),
                "mpr denominators below floor".into(),
            ]
        }),
    )?;
    Ok(())
}

pub fn segment(cfg: &Config, out: &Path) -> Result<()> {
    let data = load_ingested(out)?;
    let seg = segment_population(&data.users, &cfg.segment, cfg.seed)?;
    write_centroids(create(out, CENTROIDS)?, &seg.models)?;
    write_scores(create(out, SCORES)?, &seg.ks, &seg.scores)?;
    write_rows(
        create(out, SEGMENT_EXCLUDED)?,
        &["user_id", "reason"],
        seg.excluded.into_iter().map(|(u, r)| vec![u, r]),
    )?;
    Ok(())
}

/// Pure function of the estimates, MAPE and score tables.
pub fn report(cfg: &Config, out: &Path) -> Result<()> {
    let estimates = read_estimates(open(out, ESTIMATES)?)?;
    let mapes = read_mape(open(out, MAPE)?)?;
    let (ks, scores) = read_scores(open(out, SCORES)?)?;
    let summary = distribution_summary(&estimates, &mapes);
    write_summary(create(out, SUMMARY)?, &summary)?;
    write_outliers(create(out, OUTLIERS)?, &summary)?;
    let (rows, missing) = rejection_rates(
        &estimates,
        &ks,
        &scores,
        &cfg.report.significance,
        cfg.report.n_bins,
    )?;
    write_rejections(create(out, REJECTION)?, &rows)?;
    write_rows(
        create(out, UNSCORED)?,
        &["user_id"],
        missing.into_iter().map(|u| vec![u]),
    )?;
    Ok(())
}

/// Writes a synthetic population in the raw input format and returns the
/// paths for [`ingest`].
pub fn synth(cfg: &Config, out: &Path) -> Result<Inputs> {
    let pop = generate_population(&cfg.population, cfg.seed)?;
    write_meter(create(out, SYNTH_METER)?, &pop.meter_rows())?;
    write_temperature(create(out, SYNTH_TEMPERATURE)?, &pop.temperature)?;
    write_events(create(out, SYNTH_EVENTS)?, &pop.events())?;
    write_flags(create(out, SYNTH_FLAGS)?, &pop.flags())?;
    let k = cfg.population.base.dictionary.len();
    write_rows(
        create(out, SYNTH_TRUTH)?,
        &[
            "user_id",
            "entropy",
            "c_dr",
            "c_dr_kwh",
            "unit_scale",
            "clipped",
        ],
        pop.users.iter().map(|(u, s)| {
            let t = &s.truth;
            vec![
                u.clone(),
                t.realized_entropy(k).to_string(),
                t.true_reduction.to_string(),
                t.c_dr_kwh.to_string(),
                t.unit_scale.to_string(),
                t.clipped.len().to_string(),
            ]
        }),
    )?;
    Ok(Inputs {
        meter: out.join(SYNTH_METER),
        temperature: out.join(SYNTH_TEMPERATURE),
        events: out.join(SYNTH_EVENTS),
        flags: out.join(SYNTH_FLAGS),
    })
}

pub fn recovery(cfg: &Config, out: &Path) -> Result<()> {
    let rows = recovery_experiment(&cfg.recovery, &cfg.prep, &cfg.eval())?;
    write_recovery(create(out, RECOVERY)?, &rows)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(root: &Path, dir: &Path, acc: &mut Vec<String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, acc)?;
        } else {
            let rel = p
                .strip_prefix(root)
                .expect("under root")
                .to_string_lossy()
                .replace('\\', "/");
            if rel != MANIFEST {
                acc.push(rel);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    config_sha256: String,
    methods: Vec<Method>,
    inputs: BTreeMap<&'static str, String>,
    outputs: BTreeMap<String, String>,
}

/// Records input and output hashes. Paths are relative to `out`; no clock
/// values are written.
pub fn write_manifest(cfg: &Config, inputs: &Inputs, out: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(out, out, &mut files)?;
    let outputs = files
        .into_iter()
        .map(|rel| Ok((rel.clone(), sha256_file(&out.join(&rel))?)))
        .collect::<Result<_>>()?;
    let m = Manifest {
        tool: "drtarget",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_sha256: cfg.hash()?,
        methods: cfg.methods.clone(),
        inputs: BTreeMap::from([
            ("meter", sha256_file(&inputs.meter)?),
            ("temperature", sha256_file(&inputs.temperature)?),
            ("events", sha256_file(&inputs.events)?),
            ("flags", sha256_file(&inputs.flags)?),
        ]),
        outputs,
    };
    let mut w = create(out, MANIFEST)?;
    serde_json::to_writer_pretty(&mut w, &m)?;
    w.write_all(b"\n").map_err(|e| Error::io(MANIFEST, e))?;
    Ok(())
}

/// Runs every stage. Without inputs a synthetic population is generated
/// first.
pub fn run_all(inputs: Option<&Inputs>, cfg: &Config, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let inputs = match inputs {
        Some(i) => i.clone(),
        None => synth(cfg, out)?,
    };
    ingest(&inputs, cfg, out)?;
    prep(cfg, out)?;
    forecast(cfg, out)?;
    effects(cfg, out)?;
    segment(cfg, out)?;
    report(cfg, out)?;
    write_manifest(cfg, &inputs, out)
}

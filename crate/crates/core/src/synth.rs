//! Synthetic consumption with a known DR reduction.
//!
//! Hourly load is a constant base plus a per-day dictionary shape scaled to
//! a daily total, plus a linear temperature term and Gaussian noise, minus `c_dr` on DR hours.
//! `sigma` and `c_dr` are given in units of the standard deviation of the
//! noiseless load, so they line up with the standardized series downstream.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{delta_hat, mpr};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_method, EvalConfig};
use crate::forecast::Method;
use crate::ingest::{DrEvent, MeterReading, TemperatureObservation, UserFlags};
use crate::prep::{prepare_user, PrepConfig};
use crate::segment::{entropy, HOURS};
use crate::series::HourlySeries;

/// Clipped share of hours at or above which generation fails.
pub const MAX_CLIP_RATE: f64 = 1e-3;

const STREAM_DAYS: u64 = 0;
const STREAM_TEMPERATURE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_DR: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(24.0);
    d.min(24.0 - d)
}

/// A flat base plus Gaussian bumps `(center hour, width, height)` on the
/// 24-hour circle, normalized to sum to 1.
pub fn bump_shape(base: f64, bumps: &[(f64, f64, f64)]) -> Vec<f64> {
    let raw: Vec<f64> = (0..HOURS)
        .map(|h| {
            base + bumps
                .iter()
                .map(|&(c, w, a)| a * (-(circular_distance(h as f64, c) / w).powi(2) / 2.0).exp())
                .sum::<f64>()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Twelve stylized daily shapes: six morning+evening, two daytime, two
/// night and two evening peaks.
pub fn default_dictionary() -> Vec<Vec<f64>> {
    let specs: [&[(f64, f64, f64)]; 12] = [
        &[(7.0, 1.5, 1.0), (19.0, 2.0, 1.4)],
        &[(6.0, 1.2, 0.8), (18.0, 1.5, 1.2)],
        &[(8.0, 1.5, 1.2), (20.0, 1.5, 1.0)],
        &[(7.0, 1.0, 1.4), (21.0, 1.8, 1.2)],
        &[(6.0, 2.0, 0.7), (19.0, 1.2, 1.8)],
        &[(9.0, 1.5, 0.9), (18.0, 2.5, 1.1)],
        &[(12.0, 3.0, 1.2)],
        &[(14.0, 2.5, 1.5)],
        &[(1.0, 2.5, 1.3)],
        &[(23.0, 2.0, 1.5)],
        &[(19.0, 2.0, 2.0)],
        &[(21.0, 1.5, 2.2)],
    ];
    specs.iter().map(|b| bump_shape(0.4, b)).collect()
}

/// Weight `w0` on the first of `k` shapes, the rest spread evenly.
pub fn dominant_mixture(w0: f64, k: usize) -> Vec<f64> {
    let rest = if k > 1 {
        (1.0 - w0) / (k - 1) as f64
    } else {
        0.0
    };
    (0..k).map(|i| if i == 0 { w0 } else { rest }).collect()
}

/// Natural-log entropy of a probability vector.
pub fn mixture_entropy(w: &[f64]) -> f64 {
    -w.iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemperatureModel {
    /// °C
    pub mean: f64,
    pub seasonal_amplitude: f64,
    /// Day of year of the seasonal maximum.
    pub seasonal_peak_day: f64,
    pub daily_amplitude: f64,
    pub daily_peak_hour: f64,
    pub noise_std: f64,
}

impl Default for TemperatureModel {
    fn default() -> Self {
        Self {
            mean: 15.0,
            seasonal_amplitude: 8.0,
            seasonal_peak_day: 196.0,
            daily_amplitude: 5.0,
            daily_peak_hour: 15.0,
            noise_std: 1.0,
        }
    }
}

/// Hourly temperatures from `start`, sinusoidal in season and hour of day.
pub fn temperature_profile(
    model: &TemperatureModel,
    start: NaiveDateTime,
    n_hours: usize,
    seed: u64,
) -> Vec<f64> {
    use chrono::{Datelike, Timelike};
    let mut r = rng(seed, STREAM_TEMPERATURE);
    (0..n_hours)
        .map(|i| {
            let ts = start + Duration::hours(i as i64);
            let doy = ts.ordinal0() as f64;
            let hour = ts.hour() as f64;
            let z: f64 = StandardNormal.sample(&mut r);
            model.mean
                + model.seasonal_amplitude
                    * (2.0 * PI * (doy - model.seasonal_peak_day) / 365.25).cos()
                + model.daily_amplitude * (2.0 * PI * (hour - model.daily_peak_hour) / 24.0).cos()
                + model.noise_std * z
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Daily shapes; each has 24 non-negative values.
    pub dictionary: Vec<Vec<f64>>,
    /// Probability of each dictionary shape per day; sums to 1.
    pub mixture_weights: Vec<f64>,
    /// kWh per day carried by the shape.
    pub daily_kwh: f64,
    /// Constant kWh per hour added to every hour.
    pub base_load_kwh: f64,
    /// kWh per °C.
    pub c_t: f64,
    pub temperature: TemperatureModel,
    /// Noise std in units of the noiseless load std.
    pub sigma: f64,
    /// Reduction on DR hours in units of the noiseless load std.
    pub c_dr: f64,
    /// Share of hours (after the first day) that are one-hour DR events.
    pub dr_fraction: f64,
    pub n_days: usize,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let dictionary = default_dictionary();
        let k = dictionary.len();
        Self {
            dictionary,
            mixture_weights: vec![1.0 / k as f64; k],
            daily_kwh: 24.0,
            base_load_kwh: 1.0,
            c_t: 0.03,
            temperature: TemperatureModel::default(),
            sigma: 0.2,
            c_dr: 0.5,
            dr_fraction: 0.01,
            n_days: 365,
            start: NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date"),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dictionary.is_empty() {
            return bad("dictionary is empty".into());
        }
        if self
            .dictionary
            .iter()
            .any(|s| s.len() != HOURS || s.iter().any(|v| !(*v >= 0.0)))
        {
            return bad("dictionary shapes need 24 non-negative values".into());
        }
        if self.mixture_weights.len() != self.dictionary.len() {
            return bad(format!(
                "{} mixture weights for {} shapes",
                self.mixture_weights.len(),
                self.dictionary.len()
            ));
        }
        let total: f64 = self.mixture_weights.iter().sum();
        if self.mixture_weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad(format!(
                "mixture weights must be non-negative and sum to 1, got {total}"
            ));
        }
        if !(self.sigma >= 0.0) || !(self.c_dr >= 0.0) {
            return bad("sigma and c_dr must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dr_fraction) {
            return bad("dr_fraction must be in [0, 1)".into());
        }
        if self.n_days < 2 {
            return bad("n_days must be at least 2".into());
        }
        Ok(())
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.start.and_hms_opt(0, 0, 0).expect("midnight")
    }

    pub fn n_hours(&self) -> usize {
        self.n_days * HOURS
    }
}

/// Per-hour components of the generated load, in kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dr_hours: Vec<NaiveDateTime>,
    /// Reduction in noiseless-std units (`SynthConfig::c_dr`).
    pub true_reduction: f64,
    pub c_dr_kwh: f64,
    pub sigma_kwh: f64,
    /// Std of the noiseless load; the unit of `sigma` and `c_dr`.
    pub unit_scale: f64,
    /// Dictionary index per day.
    pub base_assignments: Vec<usize>,
    pub base: Vec<f64>,
    pub temperature_term: Vec<f64>,
    pub noise: Vec<f64>,
    pub dr_indicator: Vec<bool>,
    /// Hours whose value was raised to 0.
    pub clipped: Vec<usize>,
}

impl GroundTruth {
    /// Load without the DR reduction.
    pub fn counterfactual(&self, idx: usize) -> f64 {
        self.base[idx] + self.temperature_term[idx] + self.noise[idx]
    }

    /// Entropy of the realized day-to-shape assignment.
    pub fn realized_entropy(&self, k: usize) -> f64 {
        let mut counts = vec![0usize; k];
        self.base_assignments.iter().for_each(|&i| counts[i] += 1);
        entropy(&counts)
    }

    /// `(y − ŷ)/|ŷ|` in percent per DR hour, against the counterfactual.
    pub fn true_mpr(&self, consumption: &HourlySeries) -> Vec<f64> {
        self.dr_indicator
            .iter()
            .enumerate()
            .filter(|(_, d)| **d)
            .map(|(i, _)| {
                let y = consumption.values()[i].expect("dense");
                let cf = self.counterfactual(i);
                100.0 * (y - cf) / cf.abs()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticUser {
    pub consumption: HourlySeries,
    pub temperature: HourlySeries,
    pub events: Vec<DrEvent>,
    pub truth: GroundTruth,
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn std_population(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticUser> {
    let temps = temperature_profile(&cfg.temperature, cfg.start_time(), cfg.n_hours(), cfg.seed);
    generate_with_temperature(cfg, "synthetic", &temps)
}

/// Generates one user against a given hourly temperature trace.
pub fn generate_with_temperature(
    cfg: &SynthConfig,
    user_id: &str,
    temps: &[f64],
) -> Result<SyntheticUser> {
    cfg.validate()?;
    let n = cfg.n_hours();
    if temps.len() != n {
        return Err(Error::LengthMismatch(temps.len(), n));
    }
    let mut day_rng = rng(cfg.seed, STREAM_DAYS);
    let base_assignments: Vec<usize> = (0..cfg.n_days)
        .map(|_| pick(&cfg.mixture_weights, day_rng.random::<f64>()))
        .collect();
    let base: Vec<f64> = (0..n)
        .map(|i| {
            cfg.base_load_kwh
                + cfg.daily_kwh * cfg.dictionary[base_assignments[i / HOURS]][i % HOURS]
        })
        .collect();
    let temperature_term: Vec<f64> = temps.iter().map(|t| cfg.c_t * t).collect();
    let noiseless: Vec<f64> = base
        .iter()
        .zip(&temperature_term)
        .map(|(b, t)| b + t)
        .collect();
    let unit_scale = std_population(&noiseless);
    if !(unit_scale > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let sigma_kwh = cfg.sigma * unit_scale;
    let c_dr_kwh = cfg.c_dr * unit_scale;

    // Noise is drawn for every hour regardless of sigma so that runs that
    // differ only in sigma share the same standard normal draws.
    let mut noise_rng = rng(cfg.seed, STREAM_NOISE);
    let noise: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut noise_rng);
            sigma_kwh * z
        })
        .collect();

    let m = ((n - HOURS) as f64 * cfg.dr_fraction).round() as usize;
    let mut dr_idx: Vec<usize> = sample(&mut rng(cfg.seed, STREAM_DR), n - HOURS, m)
        .into_iter()
        .map(|i| i + HOURS)
        .collect();
    dr_idx.sort_unstable();
    let mut dr_indicator = vec![false; n];
    dr_idx.iter().for_each(|&i| dr_indicator[i] = true);

    let mut clipped = Vec::new();
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let v = base[i] + temperature_term[i] - if dr_indicator[i] { c_dr_kwh } else { 0.0 }
                + noise[i];
            if v < 0.0 {
                clipped.push(i);
                0.0
            } else {
                v
            }
        })
        .collect();
    if clipped.len() as f64 >= MAX_CLIP_RATE * n as f64 {
        return Err(Error::Config(format!(
            "{} of {n} hours clipped at 0; lower sigma or c_dr",
            clipped.len()
        )));
    }

    let start = cfg.start_time();
    let ts = |i: usize| start + Duration::hours(i as i64);
    let events = dr_idx
        .iter()
        .map(|&i| DrEvent::new(user_id, ts(i), 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticUser {
        consumption: HourlySeries::from_dense(start, values)?,
        temperature: HourlySeries::from_dense(start, temps.iter().copied())?,
        events,
        truth: GroundTruth {
            dr_hours: dr_idx.iter().map(|&i| ts(i)).collect(),
            true_reduction: cfg.c_dr,
            c_dr_kwh,
            sigma_kwh,
            unit_scale,
            base_assignments,
            base,
            temperature_term,
            noise,
            dr_indicator,
            clipped,
        },
    })
}

/// A population of synthetic users sharing one temperature trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub n_users: usize,
    /// Weight of each user's dominant shape, cycled over users.
    pub dominant_weights: Vec<f64>,
    /// Users whose mixture entropy is below this get no reduction.
    pub zero_effect_below_entropy: Option<f64>,
    pub base: SynthConfig,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_users: 20,
            dominant_weights: vec![1.0, 0.8, 0.6, 0.4, 1.0 / 12.0],
            zero_effect_below_entropy: None,
            base: SynthConfig {
                n_days: 120,
                ..SynthConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Population {
    pub users: BTreeMap<String, SyntheticUser>,
    pub temperature: Vec<TemperatureObservation>,
}

impl Population {
    pub fn meter_rows(&self) -> Vec<(String, MeterReading)> {
        self.users
            .iter()
            .flat_map(|(id, u)| {
                u.consumption
                    .present()
                    .map(move |(timestamp, kwh)| (id.clone(), MeterReading { timestamp, kwh }))
            })
            .collect()
    }

    pub fn events(&self) -> Vec<DrEvent> {
        self.users
            .values()
            .flat_map(|u| u.events.iter().cloned())
            .collect()
    }

    pub fn flags(&self) -> Vec<UserFlags> {
        self.users
            .keys()
            .map(|id| UserFlags {
                user_id: id.clone(),
                has_solar: false,
                corrupt: false,
            })
            .collect()
    }
}

/// Deterministic per-user seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_population(cfg: &PopulationConfig, seed: u64) -> Result<Population> {
    if cfg.n_users == 0 || cfg.dominant_weights.is_empty() {
        return Err(Error::Config(
            "population needs users and dominant weights".into(),
        ));
    }
    let base = &cfg.base;
    let k = base.dictionary.len();
    let start = base.start_time();
    let temps = temperature_profile(&base.temperature, start, base.n_hours(), seed);
    let users = (0..cfg.n_users)
        .into_par_iter()
        .map(|i| {
            let w0 = cfg.dominant_weights[i % cfg.dominant_weights.len()];
            let mut weights = dominant_mixture(w0, k);
            weights.rotate_right(i % k);
            let h = mixture_entropy(&weights);
            let c_dr = match cfg.zero_effect_below_entropy {
                Some(t) if h < t => 0.0,
                _ => base.c_dr,
            };
            let ucfg = SynthConfig {
                mixture_weights: weights,
                c_dr,
                seed: derive_seed(seed, i as u64),
                ..base.clone()
            };
            let id = format!("synth_{i:04}");
            let u = generate_with_temperature(&ucfg, &id, &temps)?;
            Ok((id, u))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let temperature = temps
        .iter()
        .enumerate()
        .map(|(i, &value)| TemperatureObservation {
            timestamp: start + Duration::hours(i as i64),
            value,
        })
        .collect();
    Ok(Population { users, temperature })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    /// Runs per grid cell; run `r` uses seed `base_seed + r` in every cell.
    pub runs: usize,
    pub base_seed: u64,
    pub dominant_weights: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub methods: Vec<Method>,
    pub base: SynthConfig,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            runs: 30,
            base_seed: 0,
            dominant_weights: vec![1.0, 0.8, 0.6, 0.4, 1.0 / 12.0],
            sigmas: vec![0.05, 0.2, 0.5],
            methods: vec![Method::Ridge, Method::Ols],
            base: SynthConfig::default(),
        }
    }
}

/// One method on one generated series. Errors are in `c_dr` units except
/// `mpr_err` (percentage points) and `mape` (percent, kWh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub seed: u64,
    pub dominant_weight: f64,
    pub entropy: f64,
    pub sigma: f64,
    pub method: Method,
    /// Actual minus predicted MPR.
    pub mpr_err: f64,
    /// Actual minus predicted Δ̂.
    pub delta_err: f64,
    pub hl_shift: f64,
    pub mape: f64,
}

/// Generates one series and runs prep, every method and effects on it.
/// Actual values use the logged counterfactual, standardized like the data.
pub fn recover(
    cfg: &SynthConfig,
    dominant_weight: f64,
    methods: &[Method],
    prep: &PrepConfig,
    eval: &EvalConfig,
) -> Result<Vec<RecoveryRow>> {
    let u = generate(cfg)?;
    let prepared = prepare_user(&u.consumption, &u.temperature, &u.events, prep)?;
    let fs = &prepared.features;
    let p = prepared.cons_params;
    let to_c = p.std / u.truth.unit_scale;
    let entropy = u.truth.realized_entropy(cfg.dictionary.len());
    let start = u.consumption.start();
    let cf: Vec<f64> = fs
        .t1
        .iter()
        .map(|t| p.apply(u.truth.counterfactual((*t - start).num_hours() as usize)))
        .collect();
    methods
        .iter()
        .map(|&method| {
            let out = evaluate_method("synthetic", method, &prepared, &u.events, eval)?;
            let y: Vec<f64> = out.dr_rows.iter().map(|&i| fs.y1[i]).collect();
            let actual: Vec<f64> = out.dr_rows.iter().map(|&i| cf[i]).collect();
            let actual_mpr = mpr(&y, &actual, eval.effects.mpr_floor)?.value;
            let actual_delta = delta_hat(&y, &actual)?;
            Ok(RecoveryRow {
                seed: cfg.seed,
                dominant_weight,
                entropy,
                sigma: cfg.sigma,
                method,
                mpr_err: actual_mpr - out.estimate.mpr,
                delta_err: (actual_delta - out.estimate.delta_hat) * to_c,
                hl_shift: out.estimate.hl_shift * to_c,
                mape: out.mape.unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Every (dominant weight, sigma, run) cell, in that nesting order.
pub fn recovery_experiment(
    rc: &RecoveryConfig,
    prep: &PrepConfig,
    eval: &EvalConfig,
) -> Result<Vec<RecoveryRow>> {
    let k = rc.base.dictionary.len();
    let mut cells = Vec::new();
    for &w0 in &rc.dominant_weights {
        for &sigma in &rc.sigmas {
            for r in 0..rc.runs {
                cells.push((w0, sigma, rc.base_seed + r as u64));
            }
        }
    }
    let rows: Vec<Vec<RecoveryRow>> = cells
        .par_iter()
        .map(|&(w0, sigma, seed)| {
            let cfg = SynthConfig {
                mixture_weights: dominant_mixture(w0, k),
                sigma,
                seed,
                ..rc.base.clone()
            };
            recover(&cfg, w0, &rc.methods, prep, eval)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub const RECOVERY_HEADER: [&str; 9] = [
    "seed",
    "dominant_weight",
    "entropy",
    "sigma",
    "method",
    "mpr_err",
    "delta_err",
    "hl_shift",
    "mape",
];

pub fn write_recovery<W: std::io::Write>(out: W, rows: &[RecoveryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECOVERY_HEADER)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.dominant_weight.to_string(),
            r.entropy.to_string(),
            r.sigma.to_string(),
            r.method.to_string(),
            r.mpr_err.to_string(),
            r.delta_err.to_string(),
            r.hl_shift.to_string(),
            r.mape.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<recovery>", e))?;
    Ok(())
}

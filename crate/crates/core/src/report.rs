//! Aggregation of per-user results into plot-ready tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::effects::TreatmentEstimate;
use crate::error::{Error, Result};
use crate::forecast::Method;
use crate::segment::{percentile_bins, VariabilityScore};

/// Mean of `|y − ŷ| / |y|` in percent over terms with `|y| ≥ floor`;
/// `None` when no term qualifies.
pub fn mape(y_true: &[f64], y_pred: &[f64], floor: f64) -> Result<Option<f64>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let (mut sum, mut used) = (0.0, 0usize);
    for (&y, &p) in y_true.iter().zip(y_pred) {
        if y.abs() >= floor {
            sum += (y - p).abs() / y.abs();
            used += 1;
        }
    }
    Ok((used > 0).then(|| 100.0 * sum / used as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapeRecord {
    pub user_id: String,
    pub method: Method,
    pub mape: f64,
}

pub fn write_mape<W: Write>(out: W, rows: &[MapeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "method", "mape"])?;
    for r in rows {
        w.write_record([r.user_id.clone(), r.method.to_string(), r.mape.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<mape>", e))?;
    Ok(())
}

pub fn read_mape<R: Read>(input: R) -> Result<Vec<MapeRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["user_id", "method", "mape"] {
        return Err(Error::Header {
            expected: "user_id,method,mape".into(),
            found: header.join(","),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(MapeRecord {
            user_id: rec[0].to_string(),
            method: rec[1].parse()?,
            mape: rec[2].parse().map_err(|_| Error::Row {
                line,
                message: format!("invalid number `{}`", &rec[2]),
            })?,
        });
    }
    Ok(out)
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Sample standard deviation; 0 for a single value.
    pub fn std(&self) -> f64 {
        match self.n {
            0 => f64::NAN,
            1 => 0.0,
            n => (self.m2 / (n - 1) as f64).sqrt(),
        }
    }
}

/// Quantile of sorted data by linear interpolation between order
/// statistics at position `p · (n − 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    /// Most extreme values within 1.5 IQR of the quartiles.
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

/// Five-number summary with box-plot whiskers; non-finite values skipped.
pub fn summarize(values: &[f64]) -> Option<BoxSummary> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    let mut m = Moments::default();
    v.iter().for_each(|&x| m.push(x));
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v
        .iter()
        .copied()
        .filter(|&x| x >= lo_fence && x <= hi_fence)
        .collect();
    Some(BoxSummary {
        n: v.len(),
        min: v[0],
        q1,
        median: quantile_sorted(&v, 0.5),
        q3,
        max: v[v.len() - 1],
        mean: m.mean(),
        std: m.std(),
        lower_whisker: inside.first().copied().unwrap_or(q1),
        upper_whisker: inside.last().copied().unwrap_or(q3),
        outliers: v
            .iter()
            .copied()
            .filter(|&x| x < lo_fence || x > hi_fence)
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: &'static str,
    pub method: Method,
    pub summary: BoxSummary,
}

/// Per-method summaries of MAPE, Δ̂, HL shift and MPR.
pub fn distribution_summary(
    estimates: &[TreatmentEstimate],
    mapes: &[MapeRecord],
) -> Vec<SummaryRow> {
    let mut by: BTreeMap<(&'static str, Method), Vec<f64>> = BTreeMap::new();
    for m in mapes {
        by.entry(("mape", m.method)).or_default().push(m.mape);
    }
    for e in estimates {
        by.entry(("delta_hat", e.method))
            .or_default()
            .push(e.delta_hat);
        by.entry(("hl_shift", e.method))
            .or_default()
            .push(e.hl_shift);
        by.entry(("mpr", e.method)).or_default().push(e.mpr);
    }
    by.into_iter()
        .filter_map(|((metric, method), vals)| {
            summarize(&vals).map(|summary| SummaryRow {
                metric,
                method,
                summary,
            })
        })
        .collect()
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "metric",
        "method",
        "n",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "mean",
        "std",
        "lower_whisker",
        "upper_whisker",
        "n_outliers",
    ])?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.metric.to_string(),
            r.method.to_string(),
            s.n.to_string(),
            s.min.to_string(),
            s.q1.to_string(),
            s.median.to_string(),
            s.q3.to_string(),
            s.max.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.lower_whisker.to_string(),
            s.upper_whisker.to_string(),
            s.outliers.len().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

pub fn write_outliers<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "method", "value"])?;
    for r in rows {
        for v in &r.summary.outliers {
            w.write_record([r.metric.to_string(), r.method.to_string(), v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<outliers>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRow {
    /// `k<k>` for an entropy column or `hourly_std`.
    pub k_setting: String,
    pub significance: f64,
    pub method: Method,
    pub bin: usize,
    pub n_users: usize,
    pub n_rejected: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub n_bins: usize,
    pub significance: Vec<f64>,
    /// kWh below which a true value is left out of the MAPE.
    pub mape_floor: f64,
    /// Share of training rows held out at the end for MAPE.
    pub holdout_fraction: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            n_bins: 10,
            significance: vec![0.95, 0.90, 0.80],
            mape_floor: 0.01,
            holdout_fraction: 0.2,
        }
    }
}

/// Rejection counts per variability bin. A user is rejected at
/// significance `s` when `wilcoxon_p < 1 − s`. Returns the rows and the
/// users whose estimates had no score.
pub fn rejection_rates(
    estimates: &[TreatmentEstimate],
    ks: &[usize],
    scores: &[VariabilityScore],
    significance: &[f64],
    n_bins: usize,
) -> Result<(Vec<RejectionRow>, Vec<String>)> {
    let mut settings: Vec<(String, Vec<(String, f64)>)> = ks
        .iter()
        .enumerate()
        .map(|(i, k)| {
            (
                format!("k{k}"),
                scores
                    .iter()
                    .map(|s| (s.user_id.clone(), s.entropy[i]))
                    .collect(),
            )
        })
        .collect();
    settings.push((
        "hourly_std".into(),
        scores
            .iter()
            .map(|s| (s.user_id.clone(), s.hourly_std))
            .collect(),
    ));
    let mut methods: Vec<Method> = estimates.iter().map(|e| e.method).collect();
    methods.sort();
    methods.dedup();
    let mut missing: Vec<String> = estimates
        .iter()
        .filter(|e| !scores.iter().any(|s| s.user_id == e.user_id))
        .map(|e| e.user_id.clone())
        .collect();
    missing.sort();
    missing.dedup();
    let mut rows = Vec::new();
    for (name, keyed) in &settings {
        let bins = percentile_bins(keyed, n_bins)?;
        let bin_of: BTreeMap<&str, usize> = keyed
            .iter()
            .zip(&bins)
            .map(|((u, _), (_, b))| (u.as_str(), *b))
            .collect();
        for &sig in significance {
            for &method in &methods {
                let mut users = vec![0usize; n_bins];
                let mut rejected = vec![0usize; n_bins];
                for e in estimates.iter().filter(|e| e.method == method) {
                    if let Some(&b) = bin_of.get(e.user_id.as_str()) {
                        users[b] += 1;
                        if e.wilcoxon_p < 1.0 - sig {
                            rejected[b] += 1;
                        }
                    }
                }
                for b in 0..n_bins {
                    rows.push(RejectionRow {
                        k_setting: name.clone(),
                        significance: sig,
                        method,
                        bin: b,
                        n_users: users[b],
                        n_rejected: rejected[b],
                        rate: if users[b] > 0 {
                            rejected[b] as f64 / users[b] as f64
                        } else {
                            0.0
                        },
                    });
                }
            }
        }
    }
    Ok((rows, missing))
}

pub fn write_rejections<W: Write>(out: W, rows: &[RejectionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "k_setting",
        "significance",
        "method",
        "bin",
        "n_users",
        "n_rejected",
        "rate",
    ])?;
    for r in rows {
        w.write_record([
            r.k_setting.clone(),
            r.significance.to_string(),
            r.method.to_string(),
            r.bin.to_string(),
            r.n_users.to_string(),
            r.n_rejected.to_string(),
            r.rate.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<rejections>", e))?;
    Ok(())
}

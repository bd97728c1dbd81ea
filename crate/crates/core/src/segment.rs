//! Daily load shapes, k-means clustering and per-user variability scores.
//!
//! A load shape is a weekday's 24 hourly readings divided by their daily
//! total. Clustering runs on averages of consecutive, non-overlapping groups
//! of 5 weekday shapes. A user's entropy is computed from the centroids
//! matched by each of their single-day shapes.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::squared_distance;
use crate::series::{is_weekend, HourlySeries};

pub const HOURS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadShape {
    pub values: Vec<f64>,
    pub user_id: String,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
}

/// Raw 24-hour profiles of complete weekdays, in date order.
pub fn weekday_profiles(cons: &HourlySeries) -> Vec<(NaiveDate, [f64; HOURS])> {
    let mut out = Vec::new();
    if cons.is_empty() {
        return out;
    }
    let mut day = cons.start().date();
    let last = cons.end().date();
    while day <= last {
        if !is_weekend(day) {
            let start = day.and_hms_opt(0, 0, 0).expect("midnight");
            let mut p = [0.0; HOURS];
            let complete = (0..HOURS).all(|h| match cons.get(start + Duration::hours(h as i64)) {
                Some(v) => {
                    p[h] = v;
                    true
                }
                None => false,
            });
            if complete {
                out.push((day, p));
            }
        }
        day = day.succ_opt().expect("date in range");
    }
    out
}

/// `l / Σl`; `None` for days with a non-positive total or a negative hour.
pub fn normalize(profile: &[f64; HOURS]) -> Option<[f64; HOURS]> {
    let total: f64 = profile.iter().sum();
    if !(total > 0.0) || profile.iter().any(|&v| v < 0.0) {
        return None;
    }
    Some(profile.map(|v| v / total))
}

/// Normalized single-day weekday shapes.
pub fn daily_shapes(user_id: &str, cons: &HourlySeries) -> Vec<LoadShape> {
    weekday_profiles(cons)
        .into_iter()
        .filter_map(|(d, p)| {
            normalize(&p).map(|s| LoadShape {
                values: s.to_vec(),
                user_id: user_id.to_string(),
                first_day: d,
                last_day: d,
            })
        })
        .collect()
}

/// Averages of consecutive groups of `group` daily shapes, renormalized;
/// a trailing partial group is dropped.
pub fn averaged_shapes(daily: &[LoadShape], group: usize) -> Result<Vec<LoadShape>> {
    if group == 0 {
        return Err(Error::InvalidParameter(
            "group size must be positive".into(),
        ));
    }
    if daily.len() < group {
        return Err(Error::TooFewItems {
            needed: group,
            got: daily.len(),
        });
    }
    Ok(daily
        .chunks_exact(group)
        .map(|c| {
            let mut v = vec![0.0; HOURS];
            for s in c {
                for (a, b) in v.iter_mut().zip(&s.values) {
                    *a += b / group as f64;
                }
            }
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|a| *a /= total);
            LoadShape {
                values: v,
                user_id: c[0].user_id.clone(),
                first_day: c[0].first_day,
                last_day: c[group - 1].last_day,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub se: f64,
    pub seed: u64,
    /// Restart that produced this model.
    pub restart: usize,
    pub n_iter: usize,
    /// SE after each assignment step; non-increasing.
    pub se_history: Vec<f64>,
}

impl ClusterModel {
    pub fn nearest(&self, point: &[f64]) -> usize {
        nearest(&self.centroids, point)
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &a in &self.assignments {
            c[a] += 1;
        }
        c
    }
}

/// Nearest centroid index; ties go to the lower index.
pub fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, point);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Total squared distance of each point to its assigned centroid.
pub fn squared_error(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn update_centroids(points: &[Vec<f64>], assignments: &[usize], old: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = old.len();
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut out: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .zip(old)
        .map(|((s, &n), o)| {
            if n > 0 {
                s.into_iter().map(|v| v / n as f64).collect()
            } else {
                o.clone()
            }
        })
        .collect();
    // Empty clusters take the point farthest from its own centroid.
    let mut taken = vec![false; points.len()];
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let far = points
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(i, p)| (squared_distance(p, &out[assignments[i]]), i))
            .fold((f64::NEG_INFINITY, 0), |b, x| if x.0 > b.0 { x } else { b });
        taken[far.1] = true;
        out[c] = points[far.1].clone();
    }
    out
}

fn lloyd(
    points: &[Vec<f64>],
    k: usize,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>, usize) {
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
    let mut history = vec![squared_error(points, &centroids, &assign)];
    let mut iters = 0;
    while iters < max_iter {
        iters += 1;
        centroids = update_centroids(points, &assign, &centroids);
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
        history.push(squared_error(points, &centroids, &next));
        if next == assign {
            break;
        }
        assign = next;
    }
    (centroids, assign, history, iters)
}

/// Best of several seeded Lloyd runs with k-means++ initialization.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if points.len() < k {
        return Err(Error::TooFewItems {
            needed: k,
            got: points.len(),
        });
    }
    let runs: Vec<ClusterModel> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let (centroids, assignments, se_history, n_iter) =
                lloyd(points, k, cfg.max_iter, &mut rng);
            ClusterModel {
                k,
                se: *se_history.last().expect("at least one step"),
                centroids,
                assignments,
                seed,
                restart: r,
                n_iter,
                se_history,
            }
        })
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, m| if m.se < best.se { m } else { best })
        .expect("at least one restart"))
}

/// Shannon entropy (natural log) of assignment frequencies.
pub fn entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Sum over hours of the population standard deviation across days.
pub fn hourly_std(days: &[Vec<f64>]) -> Result<f64> {
    if days.len() < 2 {
        return Err(Error::TooFewItems {
            needed: 2,
            got: days.len(),
        });
    }
    let n = days.len() as f64;
    Ok((0..HOURS)
        .map(|h| {
            let mean = days.iter().map(|d| d[h]).sum::<f64>() / n;
            (days.iter().map(|d| (d[h] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .sum())
}

/// Equal-count bins by ascending score; ties go by id. Returns, for each
/// input, its rank and bin.
pub fn percentile_bins(scores: &[(String, f64)], n_bins: usize) -> Result<Vec<(usize, usize)>> {
    let n = scores.len();
    if n_bins == 0 || n < n_bins {
        return Err(Error::TooFewItems {
            needed: n_bins.max(1),
            got: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .1
            .total_cmp(&scores[b].1)
            .then_with(|| scores[a].0.cmp(&scores[b].0))
    });
    let mut out = vec![(0, 0); n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = (rank, rank * n_bins / n);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub ks: Vec<usize>,
    pub kmeans: KMeansConfig,
    /// Weekday shapes averaged into one clustering point.
    pub group_days: usize,
    /// Cluster single-day shapes instead of group averages.
    pub cluster_daily: bool,
    /// Compute the hourly spread on raw kWh instead of normalized shapes.
    pub raw_hourly_std: bool,
    /// Cluster count whose entropy defines the percentile column.
    pub percentile_k: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            ks: vec![6, 12, 20],
            kmeans: KMeansConfig::default(),
            group_days: 5,
            cluster_daily: false,
            raw_hourly_std: false,
            percentile_k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityScore {
    pub user_id: String,
    /// One entry per configured `k`, in configuration order.
    pub entropy: Vec<f64>,
    pub hourly_std: f64,
    /// Percent rank (0..100) of the percentile-`k` entropy.
    pub percentile: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub ks: Vec<usize>,
    pub models: Vec<ClusterModel>,
    pub scores: Vec<VariabilityScore>,
    /// Users left out, with the reason.
    pub excluded: Vec<(String, String)>,
}

struct UserShapes {
    user_id: String,
    daily: Vec<LoadShape>,
    points: Vec<LoadShape>,
    raw_days: Vec<Vec<f64>>,
}

pub fn segment_population(
    users: &BTreeMap<String, HourlySeries>,
    cfg: &SegmentConfig,
    seed: u64,
) -> Result<Segmentation> {
    let extracted: Vec<std::result::Result<UserShapes, (String, String)>> = users
        .par_iter()
        .map(|(id, s)| {
            let daily = daily_shapes(id, s);
            let points = if cfg.cluster_daily {
                if daily.is_empty() {
                    Err(Error::TooFewItems { needed: 1, got: 0 })
                } else {
                    Ok(daily.clone())
                }
            } else {
                averaged_shapes(&daily, cfg.group_days)
            };
            match points {
                Ok(points) if daily.len() >= 2 => Ok(UserShapes {
                    user_id: id.clone(),
                    raw_days: weekday_profiles(s)
                        .into_iter()
                        .map(|(_, p)| p.to_vec())
                        .collect(),
                    daily,
                    points,
                }),
                Ok(_) => Err((id.clone(), "fewer than 2 complete weekdays".into())),
                Err(e) => Err((id.clone(), format!("not enough complete weekdays: {e}"))),
            }
        })
        .collect();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for r in extracted {
        match r {
            Ok(u) => kept.push(u),
            Err(e) => excluded.push(e),
        }
    }
    let pool: Vec<Vec<f64>> = kept
        .iter()
        .flat_map(|u| u.points.iter().map(|p| p.values.clone()))
        .collect();
    let models: Vec<ClusterModel> = cfg
        .ks
        .iter()
        .enumerate()
        .map(|(i, &k)| kmeans(&pool, k, seed.wrapping_add(i as u64), &cfg.kmeans))
        .collect::<Result<_>>()?;
    let mut scores: Vec<VariabilityScore> = kept
        .iter()
        .map(|u| {
            let entropy = models
                .iter()
                .map(|m| {
                    let mut counts = vec![0; m.k];
                    for s in &u.daily {
                        counts[m.nearest(&s.values)] += 1;
                    }
                    entropy(&counts)
                })
                .collect();
            let spread = if cfg.raw_hourly_std {
                hourly_std(&u.raw_days)
            } else {
                hourly_std(&u.daily.iter().map(|s| s.values.clone()).collect::<Vec<_>>())
            }?;
            Ok(VariabilityScore {
                user_id: u.user_id.clone(),
                entropy,
                hourly_std: spread,
                percentile: 0.0,
            })
        })
        .collect::<Result<_>>()?;
    if let Some(col) = cfg.ks.iter().position(|&k| k == cfg.percentile_k) {
        let keyed: Vec<(String, f64)> = scores
            .iter()
            .map(|s| (s.user_id.clone(), s.entropy[col]))
            .collect();
        if !keyed.is_empty() {
            let n = keyed.len() as f64;
            for (s, (rank, _)) in scores.iter_mut().zip(percentile_bins(&keyed, 1)?) {
                s.percentile = 100.0 * rank as f64 / n;
            }
        }
    }
    Ok(Segmentation {
        ks: cfg.ks.clone(),
        models,
        scores,
        excluded,
    })
}

pub fn write_centroids<W: Write>(out: W, models: &[ClusterModel]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string(), "cluster".into(), "members".into()];
    header.extend((0..HOURS).map(|h| format!("h{h:02}")));
    w.write_record(&header)?;
    for m in models {
        let counts = m.counts();
        for (c, centroid) in m.centroids.iter().enumerate() {
            let mut rec = vec![m.k.to_string(), c.to_string(), counts[c].to_string()];
            rec.extend(centroid.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<centroids>", e))?;
    Ok(())
}

pub fn write_scores<W: Write>(out: W, ks: &[usize], scores: &[VariabilityScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["user_id".to_string()];
    header.extend(ks.iter().map(|k| format!("entropy_k{k}")));
    header.extend(["hourly_std".to_string(), "percentile".into()]);
    w.write_record(&header)?;
    for s in scores {
        let mut rec = vec![s.user_id.clone()];
        rec.extend(s.entropy.iter().map(f64::to_string));
        rec.extend([s.hourly_std.to_string(), s.percentile.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

/// Reads a scores table; returns the `k` values found in the header.
pub fn read_scores<R: std::io::Read>(input: R) -> Result<(Vec<usize>, Vec<VariabilityScore>)> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let bad_header = || Error::Header {
        expected: "user_id,entropy_k<k>...,hourly_std,percentile".into(),
        found: header.join(","),
    };
    if header.len() < 3
        || header[0] != "user_id"
        || header[header.len() - 2] != "hourly_std"
        || header[header.len() - 1] != "percentile"
    {
        return Err(bad_header());
    }
    let ks = header[1..header.len() - 2]
        .iter()
        .map(|h| {
            h.strip_prefix("entropy_k")
                .and_then(|k| k.parse().ok())
                .ok_or_else(bad_header)
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let nums = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Row {
                    line,
                    message: format!("invalid number `{f}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let m = ks.len();
        out.push(VariabilityScore {
            user_id: rec[0].to_string(),
            entropy: nums[..m].to_vec(),
            hourly_std: nums[m],
            percentile: nums[m + 1],
        });
    }
    Ok((ks, out))
}

//! Augmented Dickey-Fuller unit-root test with constant and linear trend.
//!
//! Test regression:
//!
//! ```text
//! Δy_t = α + δ·t + γ·y_{t-1} + Σ_{i=1..p} φ_i·Δy_{t-i} + e_t
//! ```
//!
//! The statistic is the t-ratio of γ. The lag order p is picked by AIC over
//! `0..=max_lag` on a common sample, then the regression is refit on all
//! usable observations. Critical values come from MacKinnon's (2010) response
//! surface for the constant+trend case.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::HourlySeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValues {
    pub one_percent: f64,
    pub five_percent: f64,
    pub ten_percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub test_statistic: f64,
    pub used_lags: usize,
    pub n_obs: usize,
    pub critical_values: CriticalValues,
    pub stationary_at_99: bool,
}

// tau_ct, N = 1: b0 + b1/T + b2/T^2 + b3/T^3
const MACKINNON_CT: [[f64; 4]; 3] = [
    [-3.95877, -9.0531, -28.428, -134.155],
    [-3.41049, -4.3904, -9.036, -45.374],
    [-3.12705, -2.5856, -3.925, -22.380],
];

pub fn critical_values(n_obs: usize) -> CriticalValues {
    let t = n_obs as f64;
    let eval = |c: &[f64; 4]| c[0] + c[1] / t + c[2] / (t * t) + c[3] / (t * t * t);
    CriticalValues {
        one_percent: eval(&MACKINNON_CT[0]),
        five_percent: eval(&MACKINNON_CT[1]),
        ten_percent: eval(&MACKINNON_CT[2]),
    }
}

struct Fit {
    t_stat: f64,
    rss: f64,
    nobs: usize,
    k: usize,
}

/// Regresses Δy on [1, trend, y_{t-1}, Δy_{t-1..t-lags}] for t >= first.
fn fit(y: &[f64], lags: usize, first: usize) -> Option<Fit> {
    let n = y.len();
    let nobs = n - first;
    let k = 3 + lags;
    if nobs <= k {
        return None;
    }
    let dy: Vec<f64> = std::iter::once(0.0)
        .chain(y.windows(2).map(|w| w[1] - w[0]))
        .collect();
    let mut x = DMatrix::zeros(nobs, k);
    let mut target = DVector::zeros(nobs);
    for (r, t) in (first..n).enumerate() {
        x[(r, 0)] = 1.0;
        x[(r, 1)] = t as f64 / n as f64;
        x[(r, 2)] = y[t - 1];
        for i in 1..=lags {
            x[(r, 2 + i)] = dy[t - i];
        }
        target[r] = dy[t];
    }
    let xtx = x.transpose() * &x;
    let chol = xtx.cholesky()?;
    let beta = chol.solve(&(x.transpose() * &target));
    let resid = &target - &x * &beta;
    let rss = resid.dot(&resid);
    let sigma2 = rss / (nobs - k) as f64;
    let inv = chol.inverse();
    let se = (sigma2 * inv[(2, 2)]).sqrt();
    Some(Fit {
        t_stat: beta[2] / se,
        rss,
        nobs,
        k,
    })
}

pub fn adf_test(values: &[f64], max_lag: usize) -> Result<AdfResult> {
    let needed = (10 * max_lag).max(20);
    if values.len() <= needed {
        return Err(Error::SeriesTooShort {
            needed,
            got: values.len(),
        });
    }
    let common_first = max_lag + 1;
    let mut best: Option<(f64, usize)> = None;
    for lags in 0..=max_lag {
        let Some(f) = fit(values, lags, common_first) else {
            continue;
        };
        let n = f.nobs as f64;
        let aic = n * (f.rss / n).ln() + 2.0 * f.k as f64;
        if best.is_none_or(|(b, _)| aic < b) {
            best = Some((aic, lags));
        }
    }
    let (_, used_lags) = best.ok_or(Error::ZeroVariance)?;
    let f = fit(values, used_lags, used_lags + 1).ok_or(Error::ZeroVariance)?;
    if !f.t_stat.is_finite() {
        return Err(Error::ZeroVariance);
    }
    let critical_values = critical_values(f.nobs);
    Ok(AdfResult {
        test_statistic: f.t_stat,
        used_lags,
        n_obs: f.nobs,
        critical_values,
        stationary_at_99: f.t_stat < critical_values.one_percent,
    })
}

/// Runs the test on the first difference of the longest gap-free stretch.
pub fn adf_differenced(series: &HourlySeries, max_lag: usize) -> Result<AdfResult> {
    let run = series.longest_run();
    let diff: Vec<f64> = run.windows(2).map(|w| w[1] - w[0]).collect();
    adf_test(&diff, max_lag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn random_walk_keeps_unit_root() {
        let mut y = 0.0;
        let walk: Vec<f64> = noise(2000, 11)
            .into_iter()
            .map(|e| {
                y += e;
                y
            })
            .collect();
        let r = adf_test(&walk, 12).unwrap();
        assert!(r.test_statistic > r.critical_values.one_percent, "{r:?}");
        assert!(!r.stationary_at_99);
    }

    #[test]
    fn white_noise_is_stationary() {
        let r = adf_test(&noise(2000, 12), 12).unwrap();
        assert!(r.stationary_at_99, "{r:?}");
        assert!(r.test_statistic < -10.0);
    }

    #[test]
    fn differenced_trend_is_stationary() {
        let start = chrono::NaiveDate::from_ymd_opt(2014, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let vals = noise(2000, 13)
            .into_iter()
            .enumerate()
            .map(|(t, e)| 0.05 * t as f64 + e);
        let s = HourlySeries::from_dense(start, vals).unwrap();
        assert!(adf_differenced(&s, 12).unwrap().stationary_at_99);
    }

    #[test]
    fn too_short_is_error() {
        assert!(matches!(
            adf_test(&noise(100, 1), 12),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn asymptotic_critical_values() {
        let cv = critical_values(1_000_000);
        assert!((cv.one_percent + 3.95877).abs() < 1e-4);
        assert!((cv.five_percent + 3.41049).abs() < 1e-4);
        assert!((cv.ten_percent + 3.12705).abs() < 1e-4);
    }
}

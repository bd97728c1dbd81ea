//! Per-user evaluation: fit each method, predict the DR counterfactual,
//! estimate the reduction and score a held-out tail.

use serde::{Deserialize, Serialize};

use crate::effects::{estimate, mean_residual, EffectsConfig, TreatmentEstimate};
use crate::error::{Error, Result};
use crate::forecast::iso::iso_baseline;
use crate::forecast::{ForecastConfig, ForecastModel, Method};
use crate::ingest::DrEvent;
use crate::prep::PreparedUser;
use crate::report::{mape, ReportConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub forecast: ForecastConfig,
    pub effects: EffectsConfig,
    pub report: ReportConfig,
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub estimate: TreatmentEstimate,
    /// Held-out MAPE in percent; `None` when every true value is below
    /// the floor.
    pub mape: Option<f64>,
    /// Indices into the DR rows that received a prediction.
    pub dr_rows: Vec<usize>,
    /// Standardized counterfactual at `dr_rows`.
    pub predictions: Vec<f64>,
    /// Model fitted on all training rows; `None` for the ISO baseline.
    pub model: Option<ForecastModel>,
}

/// Number of leading training rows used for the MAPE fit.
pub fn holdout_cut(n: usize, holdout_fraction: f64) -> usize {
    let held = (n as f64 * holdout_fraction).ceil() as usize;
    n.saturating_sub(held)
}

fn covariate_method(
    user_id: &str,
    method: Method,
    user: &PreparedUser,
    cfg: &EvalConfig,
) -> Result<MethodOutcome> {
    let fs = &user.features;
    let hash = fs.schema.hash();
    let model = ForecastModel::fit(method, &fs.x0, &fs.y0, &hash, &cfg.forecast)?;
    let predictions = model.predict(&fs.x1)?;
    let bias = mean_residual(&fs.y0, &model.predict(&fs.x0)?)?;
    let estimate = estimate(user_id, method, &fs.y1, &predictions, bias, &cfg.effects)?;

    let cut = holdout_cut(fs.y0.len(), cfg.report.holdout_fraction);
    let mape = if cut > 0 && cut < fs.y0.len() {
        let head = ForecastModel::fit(
            method,
            &fs.x0.slice_rows(0..cut),
            &fs.y0[..cut],
            &hash,
            &cfg.forecast,
        )?;
        let pred = head.predict(&fs.x0.slice_rows(cut..fs.y0.len()))?;
        let p = user.cons_params;
        let truth: Vec<f64> = fs.y0[cut..].iter().map(|&z| p.invert(z)).collect();
        let pred: Vec<f64> = pred.iter().map(|&z| p.invert(z)).collect();
        mape(&truth, &pred, cfg.report.mape_floor)?
    } else {
        None
    };
    Ok(MethodOutcome {
        estimate,
        mape,
        dr_rows: (0..fs.y1.len()).collect(),
        predictions,
        model: Some(model),
    })
}

/// The ISO baseline works on raw kWh; its predictions are standardized with
/// the user's consumption parameters so estimates share units with the
/// regression methods. DR hours without enough history are dropped.
fn iso_method(
    user_id: &str,
    user: &PreparedUser,
    events: &[DrEvent],
    cfg: &EvalConfig,
) -> Result<MethodOutcome> {
    let fs = &user.features;
    let p = user.cons_params;
    let iso = &cfg.forecast.iso;
    let hist = &user.raw_consumption;

    let raw1 = iso_baseline(hist, events, &fs.t1, iso);
    let (mut dr_rows, mut predictions, mut y1) = (Vec::new(), Vec::new(), Vec::new());
    for (i, v) in raw1.iter().enumerate() {
        if let Some(v) = v {
            dr_rows.push(i);
            predictions.push(p.apply(*v));
            y1.push(fs.y1[i]);
        }
    }
    if dr_rows.is_empty() {
        return Err(Error::InsufficientRows {
            training: fs.y0.len(),
            dr: 0,
            min_training: 0,
            min_dr: 1,
        });
    }

    let raw0 = iso_baseline(hist, events, &fs.t0, iso);
    let (mut y0, mut z0) = (Vec::new(), Vec::new());
    for (y, v) in fs.y0.iter().zip(&raw0) {
        if let Some(v) = v {
            y0.push(*y);
            z0.push(p.apply(*v));
        }
    }
    let bias = if y0.is_empty() {
        0.0
    } else {
        mean_residual(&y0, &z0)?
    };
    let estimate = estimate(
        user_id,
        Method::IsoBaseline,
        &y1,
        &predictions,
        bias,
        &cfg.effects,
    )?;

    let cut = holdout_cut(fs.y0.len(), cfg.report.holdout_fraction);
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for (t, v) in fs.t0[cut..].iter().zip(&raw0[cut..]) {
        if let (Some(v), Some(y)) = (v, hist.get(*t)) {
            truth.push(y);
            pred.push(*v);
        }
    }
    let mape = if truth.is_empty() {
        None
    } else {
        mape(&truth, &pred, cfg.report.mape_floor)?
    };
    Ok(MethodOutcome {
        estimate,
        mape,
        dr_rows,
        predictions,
        model: None,
    })
}

pub fn evaluate_method(
    user_id: &str,
    method: Method,
    user: &PreparedUser,
    events: &[DrEvent],
    cfg: &EvalConfig,
) -> Result<MethodOutcome> {
    if method.uses_covariates() {
        covariate_method(user_id, method, user, cfg)
    } else {
        iso_method(user_id, user, events, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_cut_keeps_leading_share() {
        assert_eq!(holdout_cut(100, 0.2), 80);
        assert_eq!(holdout_cut(101, 0.2), 80);
        assert_eq!(holdout_cut(10, 0.0), 10);
    }
}

//! Per-user preparation: spillover removal, standardization, stationarity
//! diagnostics and covariate construction.

pub mod adf;
pub mod features;
pub mod spillover;
pub mod standardize;

pub use adf::{adf_differenced, adf_test, AdfResult};
pub use features::{build_features, build_from_split, ColumnSchema, FeatureConfig, FeatureSet};
pub use spillover::{remove_spillover, SpilloverSplit};
pub use standardize::{standardize, StandardizationParams};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{align_series, DrEvent};
use crate::series::HourlySeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    #[serde(flatten)]
    pub features: FeatureConfig,
    /// Maximum lag order searched by the stationarity test; 0 disables it.
    pub adf_max_lag: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            adf_max_lag: 24,
        }
    }
}

/// Everything downstream stages need about one user.
#[derive(Debug, Clone)]
pub struct PreparedUser {
    pub features: FeatureSet,
    pub cons_params: StandardizationParams,
    pub temp_params: StandardizationParams,
    pub split: SpilloverSplit,
    /// Aligned raw consumption (kWh), kept for the ISO baseline.
    pub raw_consumption: HourlySeries,
    pub adf: Option<AdfResult>,
}

/// Aligns, splits, standardizes and featurizes one user's raw series.
///
/// Standardization parameters are fit on the outcome hours of the training
/// rows only and then applied to every hour.
pub fn prepare_user(
    cons: &HourlySeries,
    temp: &HourlySeries,
    events: &[DrEvent],
    cfg: &PrepConfig,
) -> Result<PreparedUser> {
    let (cons, temp) = align_series(cons, temp)?;
    let split = remove_spillover(&cons, events, cfg.features.spillover_hours);
    let plan = features::plan_rows(&cons, &temp, &split)?;
    let at = |s: &HourlySeries| -> Vec<f64> {
        plan.training
            .iter()
            .map(|&i| s.values()[i].expect("planned hour present"))
            .collect()
    };
    let cons_params = StandardizationParams::fit(&at(&cons))?;
    let temp_params = StandardizationParams::fit(&at(&temp))?;
    let (zc, _) = standardize(&cons, Some(cons_params))?;
    let (zt, _) = standardize(&temp, Some(temp_params))?;
    let features = build_from_split(&zc, &zt, &split, &cfg.features)?;
    let adf = if cfg.adf_max_lag > 0 {
        adf_differenced(&cons, cfg.adf_max_lag).ok()
    } else {
        None
    };
    Ok(PreparedUser {
        features,
        cons_params,
        temp_params,
        split,
        raw_consumption: cons,
        adf,
    })
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::HourlySeries;

/// Location and scale used to map a series to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); always > 0.
    pub std: f64,
}

impl StandardizationParams {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewItems {
                needed: 2,
                got: values.len(),
            });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::ZeroVariance);
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    /// Converts a difference (not a level) back to physical units.
    pub fn invert_shift(&self, dz: f64) -> f64 {
        dz * self.std
    }
}

/// Standardizes `series`, fitting the parameters on its present values when
/// none are given.
pub fn standardize(
    series: &HourlySeries,
    params: Option<StandardizationParams>,
) -> Result<(HourlySeries, StandardizationParams)> {
    let params = match params {
        Some(p) => p,
        None => {
            let vals: Vec<f64> = series.present().map(|(_, v)| v).collect();
            StandardizationParams::fit(&vals)?
        }
    };
    Ok((series.map(|v| params.apply(v)), params))
}

pub fn destandardize(series: &HourlySeries, params: StandardizationParams) -> HourlySeries {
    series.map(|z| params.invert(z))
}

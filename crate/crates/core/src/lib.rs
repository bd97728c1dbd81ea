//! Counterfactual load forecasting and demand-response targeting for
//! residential smart-meter data.
//!
//! The crate is organized as a pipeline:
//!
//! * [`ingest`] reads meter, temperature, event and flag files;
//! * [`prep`] standardizes series, checks stationarity, removes post-event
//!   spillover and builds lagged covariates;
//! * [`forecast`] fits the regression models and the ISO baseline;
//! * [`effects`] turns counterfactual predictions into per-user reduction
//!   estimates and signed-rank tests;
//! * [`segment`] clusters daily load shapes and scores consumption variability;
//! * [`synth`] generates data with a known reduction and runs recovery sweeps;
//! * [`report`] aggregates results into plot-ready tables.

pub mod config;
pub mod effects;
pub mod error;
pub mod evaluate;
pub mod forecast;
pub mod ingest;
pub mod matrix;
pub mod pipeline;
pub mod prep;
pub mod report;
pub mod segment;
pub mod series;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use series::HourlySeries;

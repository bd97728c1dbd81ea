//! Counterfactual forecasting models fit on training rows and applied to DR
//! rows.

pub mod cv;
pub mod iso;
pub mod knn;
pub mod linear;
pub mod svr;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cv::{time_blocks, CvRecord, Fold};
pub use iso::{iso_baseline, IsoBaseline, IsoConfig};
pub use knn::KnnModel;
pub use svr::{SvrModel, SvrOptions, SvrParams};
pub use tree::{RegressionTree, TreeNode};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "OLS")]
    Ols,
    Lasso,
    Ridge,
    #[serde(rename = "KNN")]
    Knn,
    #[serde(rename = "SVR")]
    Svr,
    #[serde(rename = "DT")]
    DecisionTree,
    #[serde(rename = "ISO")]
    IsoBaseline,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ols,
        Method::Lasso,
        Method::Ridge,
        Method::Knn,
        Method::Svr,
        Method::DecisionTree,
        Method::IsoBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::Lasso => "Lasso",
            Method::Ridge => "Ridge",
            Method::Knn => "KNN",
            Method::Svr => "SVR",
            Method::DecisionTree => "DT",
            Method::IsoBaseline => "ISO",
        }
    }

    /// Whether the method predicts from covariate rows.
    pub fn uses_covariates(self) -> bool {
        self != Method::IsoBaseline
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ols" => Ok(Method::Ols),
            "lasso" | "l1" => Ok(Method::Lasso),
            "ridge" | "l2" => Ok(Method::Ridge),
            "knn" => Ok(Method::Knn),
            "svr" => Ok(Method::Svr),
            "dt" | "tree" => Ok(Method::DecisionTree),
            "iso" | "caiso" => Ok(Method::IsoBaseline),
            other => Err(Error::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub folds: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
    pub lasso_tol: f64,
    pub lasso_max_sweeps: usize,
    pub knn_k: Vec<usize>,
    pub svr_c: Vec<f64>,
    pub svr_gamma: Vec<f64>,
    pub svr_epsilon: Vec<f64>,
    /// Only the most recent rows are used to fit the SVR.
    pub svr_max_rows: usize,
    pub svr_tol: f64,
    pub tree_depths: Vec<usize>,
    pub tree_min_samples: usize,
    pub iso: IsoConfig,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            lambda_min: 1e-4,
            lambda_max: 1e2,
            lambda_count: 10,
            lasso_tol: 1e-7,
            lasso_max_sweeps: 100_000,
            knn_k: (1..=7).map(|e| 1usize << e).collect(),
            svr_c: vec![0.1, 1.0, 10.0],
            svr_gamma: vec![0.01, 0.1, 1.0],
            svr_epsilon: vec![0.05, 0.1],
            svr_max_rows: 5000,
            svr_tol: 1e-3,
            tree_depths: (3..=12).collect(),
            tree_min_samples: 5,
            iso: IsoConfig::default(),
        }
    }
}

impl ForecastConfig {
    pub fn lambda_grid(&self) -> Vec<f64> {
        linear::log_grid(self.lambda_min, self.lambda_max, self.lambda_count)
    }

    fn lasso_options(&self) -> linear::LassoOptions {
        linear::LassoOptions {
            tol: self.lasso_tol,
            max_sweeps: self.lasso_max_sweeps,
        }
    }

    fn svr_options(&self) -> SvrOptions {
        SvrOptions {
            tol: self.svr_tol,
            ..SvrOptions::default()
        }
    }

    pub fn svr_grid(&self) -> Vec<SvrParams> {
        let mut out = Vec::new();
        for &c in &self.svr_c {
            for &gamma in &self.svr_gamma {
                for &epsilon in &self.svr_epsilon {
                    out.push(SvrParams { c, gamma, epsilon });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedParams {
    Linear { beta: Vec<f64>, lambda: Option<f64> },
    Knn(KnnModel),
    Svr(SvrModel),
    Tree(RegressionTree),
    Iso(IsoConfig),
}

/// A fitted model. Serialized as JSON with its method tag and the hash of
/// the column schema it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub method: Method,
    pub schema_hash: String,
    pub n_features: usize,
    pub params: FittedParams,
    pub cv: Option<CvRecord>,
}

fn tail(x: &Matrix, y: &[f64], max_rows: usize) -> (Matrix, Vec<f64>) {
    let from = y.len().saturating_sub(max_rows);
    (x.slice_rows(from..y.len()), y[from..].to_vec())
}

fn fit_ridge(x: &Matrix, y: &[f64], cfg: &ForecastConfig) -> Result<(FittedParams, CvRecord)> {
    let grid = cfg.lambda_grid();
    let labels = grid.iter().map(|l| format!("lambda={l:e}")).collect();
    let rec = cv::select(x, y, cfg.folds, labels, |xt, yt, xv, yv| {
        let (g, b) = (xt.gram(), xt.t_mul_vec(yt));
        grid.iter()
            .map(|&l| {
                Ok(cv::mse(
                    yv,
                    &xv.mul_vec(&linear::ridge_from_gram(&g, &b, l)?),
                ))
            })
            .collect()
    })?;
    let lambda = grid[rec.chosen];
    let beta = linear::ridge(x, y, lambda)?;
    Ok((
        FittedParams::Linear {
            beta,
            lambda: Some(lambda),
        },
        rec,
    ))
}

fn fit_lasso(x: &Matrix, y: &[f64], cfg: &ForecastConfig) -> Result<(FittedParams, CvRecord)> {
    let grid = cfg.lambda_grid();
    let opts = cfg.lasso_options();
    let labels = grid.iter().map(|l| format!("lambda={l:e}")).collect();
    let rec = cv::select(x, y, cfg.folds, labels, |xt, yt, xv, yv| {
        let (g, b) = (xt.gram(), xt.t_mul_vec(yt));
        let mut scores = vec![0.0; grid.len()];
        let mut warm: Option<Vec<f64>> = None;
        // Descending penalties with warm starts.
        for (i, &l) in grid.iter().enumerate().rev() {
            let beta = linear::lasso_from_gram(&g, &b, l, warm.as_deref(), opts)?;
            scores[i] = cv::mse(yv, &xv.mul_vec(&beta));
            warm = Some(beta);
        }
        Ok(scores)
    })?;
    let lambda = grid[rec.chosen];
    let beta = linear::lasso(x, y, lambda, opts)?;
    Ok((
        FittedParams::Linear {
            beta,
            lambda: Some(lambda),
        },
        rec,
    ))
}

fn fit_knn(x: &Matrix, y: &[f64], cfg: &ForecastConfig) -> Result<(FittedParams, CvRecord)> {
    let labels = cfg.knn_k.iter().map(|k| format!("k={k}")).collect();
    let rec = cv::select(x, y, cfg.folds, labels, |xt, yt, xv, yv| {
        Ok(knn::cv_scores(xt, yt, xv, yv, &cfg.knn_k))
    })?;
    Ok((
        FittedParams::Knn(KnnModel::fit(x, y, cfg.knn_k[rec.chosen])?),
        rec,
    ))
}

fn fit_svr(x: &Matrix, y: &[f64], cfg: &ForecastConfig) -> Result<(FittedParams, CvRecord)> {
    let grid = cfg.svr_grid();
    let opts = cfg.svr_options();
    let labels = grid
        .iter()
        .map(|p| format!("C={},gamma={},epsilon={}", p.c, p.gamma, p.epsilon))
        .collect();
    let rec = cv::select(x, y, cfg.folds, labels, |xt, yt, xv, yv| {
        let (xt, yt) = tail(xt, yt, cfg.svr_max_rows);
        grid.iter()
            .map(|&p| Ok(cv::mse(yv, &SvrModel::fit(&xt, &yt, p, opts)?.predict(xv))))
            .collect()
    })?;
    let (xs, ys) = tail(x, y, cfg.svr_max_rows);
    Ok((
        FittedParams::Svr(SvrModel::fit(&xs, &ys, grid[rec.chosen], opts)?),
        rec,
    ))
}

fn fit_tree(x: &Matrix, y: &[f64], cfg: &ForecastConfig) -> Result<(FittedParams, CvRecord)> {
    let labels = cfg
        .tree_depths
        .iter()
        .map(|d| format!("max_depth={d}"))
        .collect();
    let rec = cv::select(x, y, cfg.folds, labels, |xt, yt, xv, yv| {
        tree::cv_scores(xt, yt, xv, yv, &cfg.tree_depths, cfg.tree_min_samples)
    })?;
    let depth = cfg.tree_depths[rec.chosen];
    Ok((
        FittedParams::Tree(RegressionTree::fit(x, y, depth, cfg.tree_min_samples)?),
        rec,
    ))
}

impl ForecastModel {
    /// Fits `method` on training rows, choosing hyperparameters by
    /// time-blocked cross-validation.
    pub fn fit(
        method: Method,
        x: &Matrix,
        y: &[f64],
        schema_hash: &str,
        cfg: &ForecastConfig,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch(x.nrows(), y.len()));
        }
        if y.is_empty() {
            return Err(Error::EmptyInput);
        }
        let (params, cv) = match method {
            Method::Ols => (
                FittedParams::Linear {
                    beta: linear::ols(x, y)?,
                    lambda: None,
                },
                None,
            ),
            Method::Ridge => fit_ridge(x, y, cfg).map(|(p, r)| (p, Some(r)))?,
            Method::Lasso => fit_lasso(x, y, cfg).map(|(p, r)| (p, Some(r)))?,
            Method::Knn => fit_knn(x, y, cfg).map(|(p, r)| (p, Some(r)))?,
            Method::Svr => fit_svr(x, y, cfg).map(|(p, r)| (p, Some(r)))?,
            Method::DecisionTree => fit_tree(x, y, cfg).map(|(p, r)| (p, Some(r)))?,
            Method::IsoBaseline => (FittedParams::Iso(cfg.iso.clone()), None),
        };
        Ok(Self {
            method,
            schema_hash: schema_hash.to_string(),
            n_features: x.ncols(),
            params,
            cv,
        })
    }

    /// Predictions in the units of the training outcome.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::SchemaMismatch {
                expected: format!("{} columns", self.n_features),
                got: format!("{} columns", x.ncols()),
            });
        }
        Ok(match &self.params {
            FittedParams::Linear { beta, .. } => x.rows_iter().map(|r| dot(r, beta)).collect(),
            FittedParams::Knn(m) => m.predict(x),
            FittedParams::Svr(m) => m.predict(x),
            FittedParams::Tree(m) => m.predict(x),
            FittedParams::Iso(_) => return Err(Error::Unsupported("ISO")),
        })
    }

    /// Like [`predict`](Self::predict) but also checks the schema hash.
    pub fn predict_with_schema(&self, schema_hash: &str, x: &Matrix) -> Result<Vec<f64>> {
        if schema_hash != self.schema_hash {
            return Err(Error::SchemaMismatch {
                expected: self.schema_hash.clone(),
                got: schema_hash.to_string(),
            });
        }
        self.predict(x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn data(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Matrix::zeros(n, 3);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let r: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let e: f64 = StandardNormal.sample(&mut rng);
            y.push(r[0] - 0.5 * r[1] + 0.1 * e);
            x.row_mut(i).copy_from_slice(&r);
        }
        (x, y)
    }

    fn small_cfg() -> ForecastConfig {
        ForecastConfig {
            knn_k: vec![1, 2, 4, 8],
            svr_c: vec![1.0],
            svr_gamma: vec![0.1],
            svr_epsilon: vec![0.05, 0.1],
            tree_depths: vec![1, 2, 3, 4],
            ..ForecastConfig::default()
        }
    }

    #[test]
    fn every_method_fits_and_round_trips() {
        let (x, y) = data(120, 1);
        let cfg = small_cfg();
        for m in Method::ALL {
            let model = ForecastModel::fit(m, &x, &y, "abc", &cfg).unwrap();
            let back = ForecastModel::from_json(&model.to_json().unwrap()).unwrap();
            assert_eq!(back, model);
            if m.uses_covariates() {
                let p = model.predict(&x).unwrap();
                assert_eq!(p, back.predict(&x).unwrap());
                assert_eq!(p.len(), 120);
            } else {
                assert!(matches!(model.predict(&x), Err(Error::Unsupported(_))));
            }
        }
    }

    #[test]
    fn fits_are_deterministic() {
        let (x, y) = data(100, 2);
        let cfg = small_cfg();
        for m in [
            Method::Lasso,
            Method::Ridge,
            Method::Knn,
            Method::Svr,
            Method::DecisionTree,
        ] {
            let a = ForecastModel::fit(m, &x, &y, "h", &cfg).unwrap();
            let b = ForecastModel::fit(m, &x, &y, "h", &cfg).unwrap();
            assert_eq!(a, b, "{m}");
        }
    }

    #[test]
    fn schema_mismatch_rejected() {
        let (x, y) = data(60, 3);
        let model = ForecastModel::fit(Method::Ols, &x, &y, "h", &small_cfg()).unwrap();
        assert!(matches!(
            model.predict(&Matrix::zeros(2, 4)),
            Err(Error::SchemaMismatch { .. })
        ));
        assert!(model.predict_with_schema("other", &x).is_err());
        assert!(model.predict_with_schema("h", &x).is_ok());
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("foo".parse::<Method>().is_err());
    }
}

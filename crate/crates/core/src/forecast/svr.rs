//! Epsilon-insensitive support vector regression with a Gaussian kernel,
//! solved in the dual by sequential minimal optimization.
//!
//! The dual has `2n` variables: `α_i` (sign +1) and `α*_i` (sign −1) for each
//! training row. It minimizes
//!
//! ```text
//! ½ Σ s_a s_b K(a, b) α_a α_b + Σ (ε − s_a y_a) α_a
//! ```
//!
//! subject to `Σ s_a α_a = 0` and `0 ≤ α_a ≤ C`. Each step updates the pair
//! chosen by maximal violation plus second-order gain, and the solver stops
//! once the KKT violation drops below the tolerance. Predictions are
//! `f(x) = Σ (α_i − α*_i) K(x_i, x) + b`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrOptions {
    pub tol: f64,
    /// Iteration cap; 0 selects `max(10⁶, 200n)`.
    pub max_iter: usize,
    /// Kernel rows kept in memory.
    pub cache_rows: usize,
}

impl Default for SvrOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 0,
            cache_rows: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub params: SvrParams,
    pub support: Matrix,
    /// Training row index of each support row.
    pub support_index: Vec<usize>,
    /// `α_i − α*_i` for each support row.
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// KKT violation at termination.
    pub kkt_violation: f64,
    pub iterations: usize,
}

pub fn gaussian(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * squared_distance(a, b)).exp()
}

struct KernelCache<'a> {
    x: &'a Matrix,
    gamma: f64,
    rows: HashMap<usize, (u64, Vec<f64>)>,
    capacity: usize,
    clock: u64,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a Matrix, gamma: f64, capacity: usize) -> Self {
        Self {
            x,
            gamma,
            rows: HashMap::new(),
            capacity: capacity.max(2),
            clock: 0,
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        self.clock += 1;
        let now = self.clock;
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                let oldest = *self
                    .rows
                    .iter()
                    .min_by_key(|(_, (t, _))| *t)
                    .map(|(k, _)| k)
                    .expect("non-empty");
                self.rows.remove(&oldest);
            }
            let xi = self.x.row(i);
            let r = self
                .x
                .rows_iter()
                .map(|xj| gaussian(self.gamma, xi, xj))
                .collect();
            self.rows.insert(i, (now, r));
        }
        let entry = self.rows.get_mut(&i).expect("inserted");
        entry.0 = now;
        &entry.1
    }
}

struct Solver {
    n: usize,
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    sign: Vec<f64>,
}

impl Solver {
    fn upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.c
    }

    fn lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    /// Returns the working pair, or `None` with the violation once optimal.
    fn select(&self, cache: &mut KernelCache, tol: f64) -> (Option<(usize, usize)>, f64) {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..2 * self.n {
            let v = if self.sign[t] > 0.0 {
                (!self.upper(t)).then(|| -self.grad[t])
            } else {
                (!self.lower(t)).then_some(self.grad[t])
            };
            if let Some(v) = v.filter(|&v| v >= gmax) {
                gmax = v;
                i = t;
            }
        }
        if i == usize::MAX {
            return (None, 0.0);
        }
        let ki = cache.row(i % self.n).to_vec();
        let kii = 1.0;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = f64::INFINITY;
        let mut j = usize::MAX;
        for t in 0..2 * self.n {
            let (eligible, v) = if self.sign[t] > 0.0 {
                (!self.lower(t), self.grad[t])
            } else {
                (!self.upper(t), -self.grad[t])
            };
            if !eligible {
                continue;
            }
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = kii + 1.0 - 2.0 * ki[t % self.n];
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        let violation = gmax + gmax2;
        if violation < tol || j == usize::MAX {
            (None, violation)
        } else {
            (Some((i, j)), violation)
        }
    }

    fn update(&mut self, cache: &mut KernelCache, i: usize, j: usize) {
        let (si, sj) = (self.sign[i], self.sign[j]);
        let kij = cache.row(i % self.n)[j % self.n];
        let q_ij = si * sj * kij;
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        if si != sj {
            let quad = (2.0 + 2.0 * q_ij).max(TAU);
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = old_i - old_j;
            let (mut ai, mut aj) = (old_i + delta, old_j + delta);
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
            self.alpha[i] = ai;
            self.alpha[j] = aj;
        } else {
            let quad = (2.0 - 2.0 * q_ij).max(TAU);
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = old_i + old_j;
            let (mut ai, mut aj) = (old_i - delta, old_j + delta);
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
            self.alpha[i] = ai;
            self.alpha[j] = aj;
        }
        let (di, dj) = (self.alpha[i] - old_i, self.alpha[j] - old_j);
        let n = self.n;
        let ki = cache.row(i % n).to_vec();
        let kj = cache.row(j % n);
        for t in 0..2 * n {
            let st = self.sign[t];
            self.grad[t] += st * (si * ki[t % n] * di + sj * kj[t % n] * dj);
        }
    }

    /// Offset `b`: average over free variables, else midpoint of the bounds.
    fn intercept(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum, mut free) = (0.0, 0usize);
        for t in 0..2 * self.n {
            let yg = self.sign[t] * self.grad[t];
            let s = self.sign[t] > 0.0;
            if self.upper(t) {
                if s {
                    lb = lb.max(yg);
                } else {
                    ub = ub.min(yg);
                }
            } else if self.lower(t) {
                if s {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        let rho = if free > 0 {
            sum / free as f64
        } else {
            (ub + lb) / 2.0
        };
        -rho
    }
}

impl SvrModel {
    pub fn fit(x: &Matrix, y: &[f64], params: SvrParams, opts: SvrOptions) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch(x.nrows(), y.len()));
        }
        if y.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(params.c > 0.0 && params.gamma > 0.0 && params.epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "SVR parameters {params:?}"
            )));
        }
        let n = y.len();
        let mut solver = Solver {
            n,
            c: params.c,
            alpha: vec![0.0; 2 * n],
            grad: (0..2 * n)
                .map(|t| {
                    if t < n {
                        params.epsilon - y[t]
                    } else {
                        params.epsilon + y[t - n]
                    }
                })
                .collect(),
            sign: (0..2 * n).map(|t| if t < n { 1.0 } else { -1.0 }).collect(),
        };
        let mut cache = KernelCache::new(x, params.gamma, opts.cache_rows);
        let max_iter = if opts.max_iter == 0 {
            (200 * n).max(1_000_000)
        } else {
            opts.max_iter
        };
        let mut iterations = 0;
        let violation = loop {
            let (pair, violation) = solver.select(&mut cache, opts.tol);
            let Some((i, j)) = pair else {
                break violation;
            };
            if iterations >= max_iter {
                return Err(Error::NotConverged {
                    solver: "SVR SMO",
                    iterations,
                    last_change: violation,
                });
            }
            solver.update(&mut cache, i, j);
            iterations += 1;
        };
        let intercept = solver.intercept();
        let mut rows = Vec::new();
        let mut support_index = Vec::new();
        let mut coef = Vec::new();
        for i in 0..n {
            let beta = solver.alpha[i] - solver.alpha[i + n];
            if beta != 0.0 {
                rows.push(x.row(i).to_vec());
                support_index.push(i);
                coef.push(beta);
            }
        }
        let support = if rows.is_empty() {
            Matrix::zeros(0, x.ncols())
        } else {
            Matrix::from_rows(&rows)?
        };
        Ok(Self {
            params,
            support,
            support_index,
            coef,
            intercept,
            kkt_violation: violation,
            iterations,
        })
    }

    pub fn predict_row(&self, q: &[f64]) -> f64 {
        self.support
            .rows_iter()
            .zip(&self.coef)
            .map(|(s, c)| c * gaussian(self.params.gamma, s, q))
            .sum::<f64>()
            + self.intercept
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.rows_iter().map(|q| self.predict_row(q)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(v: &[f64]) -> Matrix {
        Matrix::from_rows(&v.iter().map(|&a| vec![a]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn tube_absorbs_flat_data() {
        let x = column(&[0.0, 1.0, 2.0, 3.0]);
        let y = [1.0, 1.05, 0.98, 1.02];
        let params = SvrParams {
            c: 1.0,
            gamma: 0.5,
            epsilon: 0.1,
        };
        let m = SvrModel::fit(&x, &y, params, SvrOptions::default()).unwrap();
        assert!(m.coef.is_empty());
        assert!((m.intercept - (1.05 + 0.98) / 2.0).abs() < 1e-12);
        assert_eq!(m.predict_row(&[10.0]), m.intercept);
    }

    #[test]
    fn fits_sine_within_tube() {
        let xs: Vec<f64> = (0..80).map(|i| i as f64 * 0.08).collect();
        let y: Vec<f64> = xs.iter().map(|v| v.sin()).collect();
        let params = SvrParams {
            c: 10.0,
            gamma: 1.0,
            epsilon: 0.05,
        };
        let m = SvrModel::fit(&column(&xs), &y, params, SvrOptions::default()).unwrap();
        assert!(m.kkt_violation < 1e-3);
        let pred = m.predict(&column(&xs));
        let worst = pred
            .iter()
            .zip(&y)
            .map(|(p, t)| (p - t).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05 + 2e-3, "{worst}");
        // Rows strictly inside the tube carry no dual weight.
        for (i, (p, t)) in pred.iter().zip(&y).enumerate() {
            if (p - t).abs() < 0.05 - 2e-3 {
                assert!(!m.support_index.contains(&i), "row {i}");
            }
        }
    }

    #[test]
    fn iteration_cap_reports_violation() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = xs.iter().map(|v| (2.0 * v).sin()).collect();
        let params = SvrParams {
            c: 10.0,
            gamma: 1.0,
            epsilon: 0.01,
        };
        let opts = SvrOptions {
            max_iter: 2,
            ..SvrOptions::default()
        };
        match SvrModel::fit(&column(&xs), &y, params, opts) {
            Err(Error::NotConverged {
                iterations,
                last_change,
                ..
            }) => {
                assert_eq!(iterations, 2);
                assert!(last_change > 1e-3);
            }
            other => panic!("{other:?}"),
        }
    }
}

//! k-nearest-neighbor regression under Euclidean distance.
//!
//! Distance ties go to the earlier training row, which is the earlier
//! timestamp because rows are stored in time order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub x: Matrix,
    pub y: Vec<f64>,
}

fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Indices of the `k` nearest rows of `x` to `q`, nearest first.
pub fn nearest(x: &Matrix, q: &[f64], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = x
        .rows_iter()
        .enumerate()
        .map(|(i, r)| (squared_distance(r, q), i))
        .collect();
    let k = k.min(d.len());
    if k == 0 {
        return Vec::new();
    }
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, by_distance);
        d.truncate(k);
    }
    d.sort_unstable_by(by_distance);
    d.into_iter().map(|(_, i)| i).collect()
}

impl KnnModel {
    pub fn fit(x: &Matrix, y: &[f64], k: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch(x.nrows(), y.len()));
        }
        if k == 0 || k > y.len() {
            return Err(Error::InvalidParameter(format!(
                "k = {k} with {} training rows",
                y.len()
            )));
        }
        Ok(Self {
            k,
            x: x.clone(),
            y: y.to_vec(),
        })
    }

    pub fn predict_row(&self, q: &[f64]) -> f64 {
        let idx = nearest(&self.x, q, self.k);
        idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.rows_iter().map(|q| self.predict_row(q)).collect()
    }
}

/// Validation MSE for every `k` in `ks` from one neighbor search per query.
pub fn cv_scores(
    x_tr: &Matrix,
    y_tr: &[f64],
    x_va: &Matrix,
    y_va: &[f64],
    ks: &[usize],
) -> Vec<f64> {
    let kmax = ks
        .iter()
        .copied()
        .filter(|&k| k <= y_tr.len())
        .max()
        .unwrap_or(0);
    let mut sse = vec![0.0; ks.len()];
    for (q, &target) in x_va.rows_iter().zip(y_va) {
        let idx = nearest(x_tr, q, kmax);
        let mut prefix = Vec::with_capacity(idx.len() + 1);
        prefix.push(0.0);
        for &i in &idx {
            prefix.push(prefix.last().unwrap() + y_tr[i]);
        }
        for (s, &k) in sse.iter_mut().zip(ks) {
            if k >= 1 && k <= kmax {
                let e = prefix[k] / k as f64 - target;
                *s += e * e;
            }
        }
    }
    ks.iter()
        .zip(sse)
        .map(|(&k, s)| {
            if k >= 1 && k <= kmax {
                s / y_va.len() as f64
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

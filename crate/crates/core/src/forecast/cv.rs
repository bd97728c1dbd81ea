//! Time-blocked cross-validation.
//!
//! The training rows are cut into `folds + 1` contiguous blocks. Fold `i`
//! trains on blocks `0..i` and validates on block `i`, so every validation
//! row comes after every training row of its fold.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: (usize, usize),
    pub valid: (usize, usize),
}

impl Fold {
    pub fn train_range(&self) -> Range<usize> {
        self.train.0..self.train.1
    }

    pub fn valid_range(&self) -> Range<usize> {
        self.valid.0..self.valid.1
    }
}

pub fn time_blocks(n: usize, folds: usize) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(Error::InvalidParameter(format!(
            "folds must be >= 2, got {folds}"
        )));
    }
    let blocks = folds + 1;
    if n < 2 * blocks {
        return Err(Error::TooFewItems {
            needed: 2 * blocks,
            got: n,
        });
    }
    let edge = |k: usize| k * n / blocks;
    Ok((1..blocks)
        .map(|i| Fold {
            train: (0, edge(i)),
            valid: (edge(i), edge(i + 1)),
        })
        .collect())
}

/// Per-candidate validation scores and the chosen candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub candidates: Vec<String>,
    /// `fold_mse[c][f]`: validation MSE of candidate `c` on fold `f`.
    pub fold_mse: Vec<Vec<f64>>,
    pub chosen: usize,
}

impl CvRecord {
    pub fn mean_mse(&self, c: usize) -> f64 {
        let s = &self.fold_mse[c];
        s.iter().sum::<f64>() / s.len() as f64
    }

    pub fn chosen_label(&self) -> &str {
        &self.candidates[self.chosen]
    }
}

pub fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter()
        .zip(pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64
}

/// Runs `score` on every fold and picks the candidate with the lowest mean
/// validation MSE; ties go to the earlier candidate.
///
/// `score(x_train, y_train, x_valid, y_valid)` returns one MSE per candidate;
/// an infeasible candidate reports `f64::INFINITY`.
pub fn select<F>(
    x: &Matrix,
    y: &[f64],
    folds: usize,
    labels: Vec<String>,
    mut score: F,
) -> Result<CvRecord>
where
    F: FnMut(&Matrix, &[f64], &Matrix, &[f64]) -> Result<Vec<f64>>,
{
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch(x.nrows(), y.len()));
    }
    if labels.is_empty() {
        return Err(Error::InvalidParameter("empty hyperparameter grid".into()));
    }
    let mut fold_mse = vec![Vec::with_capacity(folds); labels.len()];
    for fold in time_blocks(y.len(), folds)? {
        let (tr, va) = (fold.train_range(), fold.valid_range());
        let scores = score(
            &x.slice_rows(tr.clone()),
            &y[tr],
            &x.slice_rows(va.clone()),
            &y[va],
        )?;
        debug_assert_eq!(scores.len(), labels.len());
        for (c, s) in scores.into_iter().enumerate() {
            fold_mse[c].push(if s.is_nan() { f64::INFINITY } else { s });
        }
    }
    let mut rec = CvRecord {
        candidates: labels,
        fold_mse,
        chosen: 0,
    };
    for c in 1..rec.candidates.len() {
        if rec.mean_mse(c) < rec.mean_mse(rec.chosen) {
            rec.chosen = c;
        }
    }
    if !rec.mean_mse(rec.chosen).is_finite() {
        return Err(Error::InvalidParameter(
            "no feasible hyperparameter candidate".into(),
        ));
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn five_folds_over_twelve_rows() {
        let f = time_blocks(12, 5).unwrap();
        assert_eq!(f.len(), 5);
        assert_eq!(
            f[0],
            Fold {
                train: (0, 2),
                valid: (2, 4)
            }
        );
        assert_eq!(
            f[4],
            Fold {
                train: (0, 10),
                valid: (10, 12)
            }
        );
    }

    #[test]
    fn picks_lowest_mean_and_first_on_tie() {
        let x = Matrix::zeros(30, 1);
        let y = vec![0.0; 30];
        let rec = select(
            &x,
            &y,
            2,
            vec!["a".into(), "b".into(), "c".into()],
            |_, _, _, _| Ok(vec![2.0, 1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(rec.chosen_label(), "b");
    }

    proptest! {
        #[test]
        fn validation_follows_training(n in 6usize..5000, folds in 2usize..10) {
            prop_assume!(n >= 2 * (folds + 1));
            let fs = time_blocks(n, folds).unwrap();
            prop_assert_eq!(fs.len(), folds);
            for f in &fs {
                prop_assert!(f.train.0 < f.train.1);
                prop_assert!(f.valid.0 < f.valid.1);
                prop_assert_eq!(f.train.1, f.valid.0);
                prop_assert!(f.valid.1 <= n);
            }
            prop_assert_eq!(fs.last().unwrap().valid.1, n);
        }
    }
}

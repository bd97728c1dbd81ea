//! Least squares, ridge and lasso regression without an intercept.
//!
//! The covariates carry a full one-hot block, so the constant is already in
//! the column span. Objectives:
//!
//! * OLS: `‖y − Xβ‖²`, minimum-norm solution when `X` is rank deficient;
//! * ridge: `‖y − Xβ‖² + λ‖β‖²`;
//! * lasso: `½‖y − Xβ‖² + λ‖β‖₁`, so `λ ≥ ‖Xᵀy‖∞` gives `β = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `n` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let mut g: Vec<f64> = (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect();
            g[0] = lo;
            g[n - 1] = hi;
            g
        }
    }
}

fn check(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyInput);
    }
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch(x.nrows(), y.len()));
    }
    Ok(())
}

fn svd_tolerance(sv: &DVector<f64>, dim: usize) -> f64 {
    sv.max() * dim as f64 * f64::EPSILON
}

pub fn ols(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    check(x, y)?;
    let svd = x.to_nalgebra().svd(true, true);
    let eps = svd_tolerance(&svd.singular_values, x.nrows().max(x.ncols()));
    let beta = svd
        .solve(&DVector::from_column_slice(y), eps)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(beta.iter().copied().collect())
}

/// Solves `(G + λI)β = b`; with `λ = 0` and singular `G`, returns the
/// minimum-norm solution.
pub fn ridge_from_gram(gram: &DMatrix<f64>, xty: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    if lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "negative ridge penalty {lambda}"
        )));
    }
    let p = gram.nrows();
    let a = gram + DMatrix::identity(p, p) * lambda;
    let beta = match a.clone().cholesky() {
        Some(ch) => ch.solve(xty),
        None => {
            let svd = a.svd(true, true);
            let eps = svd_tolerance(&svd.singular_values, p);
            svd.solve(xty, eps)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?
        }
    };
    Ok(beta.iter().copied().collect())
}

pub fn ridge(x: &Matrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check(x, y)?;
    ridge_from_gram(&x.gram(), &x.t_mul_vec(y), lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Stop once no coefficient moves by more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_sweeps: 100_000,
        }
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on the Gram form, optionally warm-started.
pub fn lasso_from_gram(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    lambda: f64,
    start: Option<&[f64]>,
    opts: LassoOptions,
) -> Result<Vec<f64>> {
    if lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "negative lasso penalty {lambda}"
        )));
    }
    let p = gram.nrows();
    let mut beta = start.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
    // c = Xᵀy − Gβ
    let mut c: Vec<f64> = (0..p)
        .map(|j| xty[j] - (0..p).map(|k| gram[(j, k)] * beta[k]).sum::<f64>())
        .collect();
    let mut last_change = f64::INFINITY;
    for _ in 0..opts.max_sweeps {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let g = gram[(j, j)];
            if g <= 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let new = soft_threshold(c[j] + g * beta[j], lambda) / g;
            let d = new - beta[j];
            if d != 0.0 {
                for (k, ck) in c.iter_mut().enumerate() {
                    *ck -= gram[(k, j)] * d;
                }
                beta[j] = new;
                max_change = max_change.max(d.abs());
            }
        }
        last_change = max_change;
        if max_change < opts.tol {
            return Ok(beta);
        }
    }
    Err(Error::NotConverged {
        solver: "lasso coordinate descent",
        iterations: opts.max_sweeps,
        last_change,
    })
}

pub fn lasso(x: &Matrix, y: &[f64], lambda: f64, opts: LassoOptions) -> Result<Vec<f64>> {
    check(x, y)?;
    lasso_from_gram(&x.gram(), &x.t_mul_vec(y), lambda, None, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(n: usize, p: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * p)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let x = Matrix::from_row_major(n, p, data).unwrap();
        let y = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        (x, y)
    }

    #[test]
    fn ols_identity_returns_target() {
        let y = vec![3.0, -1.0, 2.5];
        let b = ols(&Matrix::identity(3), &y).unwrap();
        for (a, e) in b.iter().zip(&y) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn ols_recovers_noiseless_coefficients() {
        let (x, _) = random(50, 4, 1);
        let truth = [1.5, -2.0, 0.25, 3.0];
        let y = x.mul_vec(&truth);
        let b = ols(&x, &y).unwrap();
        for (a, e) in b.iter().zip(&truth) {
            assert!((a - e).abs() < 1e-8);
        }
    }

    #[test]
    fn ols_residual_orthogonal_to_columns() {
        let (x, y) = random(80, 6, 2);
        let b = ols(&x, &y).unwrap();
        let fit = x.mul_vec(&b);
        let r: Vec<f64> = y.iter().zip(&fit).map(|(a, f)| a - f).collect();
        assert!(x.t_mul_vec(&r).amax() < 1e-8);
    }

    #[test]
    fn ols_minimum_norm_on_duplicate_columns() {
        // Two identical columns share the weight equally.
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let b = ols(&x, &[2.0, 4.0, 6.0]).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-10 && (b[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ridge_identity_halves() {
        let y = vec![4.0, -2.0];
        let b = ridge(&Matrix::identity(2), &y, 1.0).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_zero_matches_ols() {
        let (x, y) = random(100, 8, 3);
        let a = ols(&x, &y).unwrap();
        let b = ridge_from_gram(&x.gram(), &x.t_mul_vec(&y), 0.0).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_norm_shrinks_along_grid() {
        let (x, y) = random(60, 5, 4);
        let (g, b) = (x.gram(), x.t_mul_vec(&y));
        let norms: Vec<f64> = log_grid(1e-4, 1e2, 10)
            .into_iter()
            .map(|l| {
                ridge_from_gram(&g, &b, l)
                    .unwrap()
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn lasso_zero_penalty_matches_ols() {
        let (x, y) = random(100, 6, 5);
        let a = ols(&x, &y).unwrap();
        let b = lasso(&x, &y, 0.0, LassoOptions::default()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-5);
        }
    }

    #[test]
    fn lasso_above_bound_is_zero() {
        let (x, y) = random(40, 7, 6);
        let bound = x.t_mul_vec(&y).amax();
        assert!(lasso(&x, &y, bound, LassoOptions::default())
            .unwrap()
            .iter()
            .all(|&b| b == 0.0));
        assert!(lasso(&x, &y, bound * 0.99, LassoOptions::default())
            .unwrap()
            .iter()
            .any(|&b| b != 0.0));
    }

    #[test]
    fn lasso_orthonormal_soft_threshold() {
        // Orthonormal columns from a QR factorization.
        let (x, y) = random(30, 4, 7);
        let q = x.to_nalgebra().qr().q();
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| (0..4).map(|j| q[(i, j)]).collect())
            .collect();
        let xq = Matrix::from_rows(&rows).unwrap();
        let lambda = 0.3;
        let b = lasso(&xq, &y, lambda, LassoOptions::default()).unwrap();
        for j in 0..4 {
            let z: f64 = (0..30).map(|i| q[(i, j)] * y[i]).sum();
            let expect = z.signum() * (z.abs() - lambda).max(0.0);
            assert!((b[j] - expect).abs() < 1e-7, "{j}: {} vs {expect}", b[j]);
        }
    }

    #[test]
    fn lasso_support_shrinks_with_penalty() {
        let (x, y) = random(120, 10, 8);
        let (g, b) = (x.gram(), x.t_mul_vec(&y));
        let counts: Vec<usize> = log_grid(1e-2, b.amax(), 25)
            .into_iter()
            .map(|l| {
                lasso_from_gram(&g, &b, l, None, LassoOptions::default())
                    .unwrap()
                    .iter()
                    .filter(|&&v| v != 0.0)
                    .count()
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
        assert_eq!(*counts.last().unwrap(), 0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-4, 1e2, 10);
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[9] - 1e2).abs() < 1e-10);
    }
}

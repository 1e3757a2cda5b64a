//! Least squares and Lasso fitting shared by the forecaster and the explain models.
//!
//! Both fit on column-centred data so the intercept is never penalised.
//! Lasso minimises `(1 / 2n) ||y - Xb||² + λ ||b||₁` by cyclic coordinate descent.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("no training rows")]
    Empty,
    #[error("row {row} has {got} columns, expected {expected}")]
    DimensionMismatch { row: usize, got: usize, expected: usize },
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("lambda must be finite and >= 0, got {0}")]
    InvalidLambda(f64),
}

/// `y = intercept + Σ coefficients[i] · x[i]`, with the training column means kept
/// as the attribution baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub means: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }
}

/// Any fitted regressor that attribution can query.
pub trait Regressor: Send + Sync + Debug {
    fn n_features(&self) -> usize;
    fn predict(&self, x: &[f64]) -> f64;
    /// Additive models expose their coefficients for exact attribution.
    fn linear(&self) -> Option<&LinearModel> {
        None
    }
}

impl Regressor for LinearModel {
    fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        LinearModel::predict(self, x)
    }

    fn linear(&self) -> Option<&LinearModel> {
        Some(self)
    }
}

struct Centered {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_means: Vec<f64>,
    y_mean: f64,
}

fn center(x: &[Vec<f64>], y: &[f64]) -> Result<Centered, RegressionError> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(RegressionError::Empty);
    }
    let p = x[0].len();
    for (row, r) in x.iter().enumerate() {
        if r.len() != p {
            return Err(RegressionError::DimensionMismatch {
                row,
                got: r.len(),
                expected: p,
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(RegressionError::NonFinite);
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(RegressionError::NonFinite);
    }
    let nf = n as f64;
    let x_means: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    Ok(Centered {
        x: DMatrix::from_fn(n, p, |i, j| x[i][j] - x_means[j]),
        y: DVector::from_iterator(n, y.iter().map(|v| v - y_mean)),
        x_means,
        y_mean,
    })
}

fn assemble(c: &Centered, coefs: Vec<f64>) -> LinearModel {
    let intercept = c.y_mean - coefs.iter().zip(&c.x_means).map(|(b, m)| b * m).sum::<f64>();
    LinearModel {
        intercept,
        coefficients: coefs,
        means: c.x_means.clone(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquaresFit {
    pub model: LinearModel,
    pub rank: usize,
    /// True when the centred design had less than full column rank; the
    /// minimum-norm solution was returned.
    pub rank_deficient: bool,
}

/// Ordinary least squares via SVD. Rank-deficient designs (including more
/// columns than rows) get the minimum-norm solution.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Result<LeastSquaresFit, RegressionError> {
    let c = center(x, y)?;
    let (n, p) = c.x.shape();
    if p == 0 {
        return Ok(LeastSquaresFit {
            model: assemble(&c, Vec::new()),
            rank: 0,
            rank_deficient: false,
        });
    }
    let svd = c.x.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = (n.max(p) as f64) * f64::EPSILON * sigma_max.max(1.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let coefs = if rank == 0 {
        vec![0.0; p]
    } else {
        svd.solve(&c.y, eps).expect("U and V were computed").iter().copied().collect()
    };
    Ok(LeastSquaresFit {
        model: assemble(&c, coefs),
        rank,
        rank_deficient: rank < p,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    /// Stop when no coefficient moves by more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    pub model: LinearModel,
    pub sweeps: usize,
    pub converged: bool,
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

pub fn lasso(x: &[Vec<f64>], y: &[f64], lambda: f64, config: LassoConfig) -> Result<LassoFit, RegressionError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(RegressionError::InvalidLambda(lambda));
    }
    let c = center(x, y)?;
    let (n, p) = c.x.shape();
    let nf = n as f64;
    let col_sq: Vec<f64> = (0..p).map(|j| c.x.column(j).norm_squared() / nf).collect();
    let mut beta = vec![0.0; p];
    let mut residual = c.y.clone();
    let mut sweeps = 0;
    let mut converged = p == 0;
    while !converged && sweeps < config.max_sweeps {
        sweeps += 1;
        let mut max_step: f64 = 0.0;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = c.x.column(j);
            let rho = col.dot(&residual) / nf + col_sq[j] * beta[j];
            let updated = soft_threshold(rho, lambda) / col_sq[j];
            let step = updated - beta[j];
            if step != 0.0 {
                residual.axpy(-step, &col, 1.0);
                beta[j] = updated;
                max_step = max_step.max(step.abs());
            }
        }
        converged = max_step < config.tol;
    }
    Ok(LassoFit {
        model: assemble(&c, beta),
        sweeps,
        converged,
    })
}

pub const LAMBDA_GRID: [f64; 4] = [0.001, 0.01, 0.1, 1.0];

/// Picks the grid value with the lowest leave-one-out squared error. Ties go
/// to the larger lambda. Returns the chosen value and the per-lambda errors.
pub fn select_lambda_loo(
    x: &[Vec<f64>],
    y: &[f64],
    grid: &[f64],
    config: LassoConfig,
) -> Result<(f64, Vec<f64>), RegressionError> {
    let n = x.len();
    if n < 2 || grid.is_empty() {
        return Ok((grid.last().copied().unwrap_or(0.0), vec![]));
    }
    let mut errors = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut sse = 0.0;
        for hold in 0..n {
            let xs: Vec<Vec<f64>> = (0..n).filter(|&i| i != hold).map(|i| x[i].clone()).collect();
            let ys: Vec<f64> = (0..n).filter(|&i| i != hold).map(|i| y[i]).collect();
            let fit = lasso(&xs, &ys, lambda, config)?;
            sse += (fit.model.predict(&x[hold]) - y[hold]).powi(2);
        }
        errors.push(sse / n as f64);
    }
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e <= errors[best] + 1e-15 {
            best = i;
        }
    }
    Ok((grid[best], errors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_affine_fit() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 + 2.0 * r[0] - 0.5 * r[1]).collect();
        let fit = least_squares(&x, &y).unwrap();
        assert!(!fit.rank_deficient);
        assert!((fit.model.intercept - 3.0).abs() < 1e-9);
        assert!((fit.model.coefficients[0] - 2.0).abs() < 1e-9);
        assert!((fit.model.coefficients[1] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn wide_design_gets_min_norm_solution() {
        let x = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        let y = vec![1.0, 3.0];
        let fit = least_squares(&x, &y).unwrap();
        assert!(fit.rank_deficient);
        assert!((fit.model.coefficients[0] - 1.0).abs() < 1e-9);
        assert!((fit.model.coefficients[1] - 1.0).abs() < 1e-9);
        for (r, t) in x.iter().zip(&y) {
            assert!((fit.model.predict(r) - t).abs() < 1e-9);
        }
    }

    #[test]
    fn large_lambda_shrinks_to_mean() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (5 - i) as f64 * 0.3]).collect();
        let y = vec![1.0, 4.0, 2.0, 8.0, 5.0];
        let fit = lasso(&x, &y, 1e6, LassoConfig::default()).unwrap();
        assert!(fit.model.coefficients.iter().all(|&b| b == 0.0));
        assert!((fit.model.predict(&[9.0, 9.0]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(least_squares(&[], &[]).unwrap_err(), RegressionError::Empty);
        assert!(matches!(
            least_squares(&[vec![1.0], vec![1.0, 2.0]], &[1.0, 2.0]),
            Err(RegressionError::DimensionMismatch { row: 1, .. })
        ));
        assert_eq!(
            lasso(&[vec![1.0]], &[1.0], -1.0, LassoConfig::default()).unwrap_err(),
            RegressionError::InvalidLambda(-1.0)
        );
        assert_eq!(
            least_squares(&[vec![f64::NAN]], &[1.0]).unwrap_err(),
            RegressionError::NonFinite
        );
    }

    #[test]
    fn loo_prefers_small_lambda_on_clean_signal() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..8).map(|i| 2.0 * i as f64).collect();
        let (lambda, errors) = select_lambda_loo(&x, &y, &LAMBDA_GRID, LassoConfig::default()).unwrap();
        assert_eq!(errors.len(), 4);
        assert_eq!(lambda, 0.001);
    }
}

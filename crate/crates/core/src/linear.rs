//! Ordinary least squares and Lasso.
//!
//! Both fit on centered columns so the intercept is solved separately:
//! for the Lasso the centered-problem intercept is exactly `mean(y)`, and
//! the returned intercept is `mean(y) - mean(x) . w` on the original scale.
//!
//! The Lasso objective is `(1/2n) ||y - Xw - b||^2 + lambda ||w||_1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::EncodedMatrix;
use crate::scalar::{self, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum LinearError {
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("columns must be standardized or 0/1 indicators")]
    NotStandardized,
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix has no rows")]
    Empty,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T, E = LinearError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearModel<T> {
    pub weights: Vec<T>,
    pub intercept: T,
    pub column_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoParams {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LassoParams {
    fn default() -> Self {
        LassoParams {
            lambda: 0.01,
            max_iter: 10_000,
            tol: 1e-8,
        }
    }
}

/// Ridge added to the diagonal of the normal equations.
pub const OLS_JITTER: f64 = 1e-8;

pub fn soft_threshold<T: Scalar>(z: T, gamma: T) -> T {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        T::zero()
    }
}

struct Centered<T> {
    /// Column-major centered design.
    cols: Vec<Vec<T>>,
    col_means: Vec<T>,
    y: Vec<T>,
    y_mean: T,
}

fn center<T: Scalar>(m: &EncodedMatrix<T>) -> Result<Centered<T>> {
    if m.n_rows() == 0 {
        return Err(LinearError::Empty);
    }
    if m.x().iter().chain(m.y()).any(|v| !v.is_finite()) {
        return Err(LinearError::NonFiniteInput);
    }
    let mut cols = Vec::with_capacity(m.n_cols());
    let mut col_means = Vec::with_capacity(m.n_cols());
    for j in 0..m.n_cols() {
        let mut c = m.column(j);
        let mu = scalar::mean(&c);
        c.iter_mut().for_each(|v| *v -= mu);
        cols.push(c);
        col_means.push(mu);
    }
    let y_mean = scalar::mean(m.y());
    let y = m.y().iter().map(|&v| v - y_mean).collect();
    Ok(Centered {
        cols,
        col_means,
        y,
        y_mean,
    })
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Solves `a x = b` for symmetric positive-definite `a` (row-major, d x d).
/// Returns `None` when a pivot is not positive.
pub fn cholesky_solve<T: Scalar>(a: &[T], b: &[T], d: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    let mut z = vec![T::zero(); d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * z[k];
        }
        z[i] = s / l[i * d + i];
    }
    let mut x = vec![T::zero(); d];
    for i in (0..d).rev() {
        let mut s = z[i];
        for k in i + 1..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    Some(x)
}

/// Least squares through the normal equations with a small ridge jitter so
/// collinear indicator blocks stay solvable.
pub fn fit_ols<T: Scalar>(m: &EncodedMatrix<T>) -> Result<LinearModel<T>> {
    let c = center(m)?;
    let d = m.n_cols();
    let mut gram = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let v = dot(&c.cols[i], &c.cols[j]);
            gram[i * d + j] = v;
            gram[j * d + i] = v;
        }
    }
    let max_diag = (0..d).map(|i| gram[i * d + i]).fold(T::zero(), T::max);
    // Keep the jitter above the working precision of the largest pivot.
    let jitter = T::of(OLS_JITTER).max(T::of(16.0) * T::epsilon() * max_diag);
    for i in 0..d {
        gram[i * d + i] += jitter;
    }
    let rhs: Vec<T> = c.cols.iter().map(|col| dot(col, &c.y)).collect();
    let weights = if d == 0 {
        Vec::new()
    } else {
        cholesky_solve(&gram, &rhs, d).ok_or(LinearError::NonFiniteInput)?
    };
    let intercept = c.y_mean - dot(&c.col_means, &weights);
    finish(weights, intercept, m)
}

fn finish<T: Scalar>(weights: Vec<T>, intercept: T, m: &EncodedMatrix<T>) -> Result<LinearModel<T>> {
    if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(LinearError::NonFiniteInput);
    }
    Ok(LinearModel {
        weights,
        intercept,
        column_names: m.column_names().to_vec(),
    })
}

/// Per-sweep trace of a Lasso fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoTrace<T> {
    /// Objective after each full coordinate sweep.
    pub objective: Vec<T>,
    pub converged: bool,
}

pub fn fit_lasso<T: Scalar>(m: &EncodedMatrix<T>, p: &LassoParams) -> Result<LinearModel<T>> {
    fit_lasso_traced(m, p).map(|(model, _)| model)
}

/// Cyclic coordinate descent with soft-threshold updates.
pub fn fit_lasso_traced<T: Scalar>(m: &EncodedMatrix<T>, p: &LassoParams) -> Result<(LinearModel<T>, LassoTrace<T>)> {
    if !(p.lambda >= 0.0 && p.lambda.is_finite()) || p.max_iter == 0 || !(p.tol > 0.0) {
        return Err(LinearError::InvalidParams(format!("{p:?}")));
    }
    if m.x().iter().chain(m.y()).any(|v| !v.is_finite()) {
        return Err(LinearError::NonFiniteInput);
    }
    if !m.is_standardized() {
        return Err(LinearError::NotStandardized);
    }
    let c = center(m)?;
    let n = T::from_usize_lossy(m.n_rows());
    let d = m.n_cols();
    let lambda = T::of(p.lambda);
    let tol = T::of(p.tol);
    let scale: Vec<T> = c.cols.iter().map(|col| dot(col, col) / n).collect();
    let mut w = vec![T::zero(); d];
    let mut r = c.y.clone();
    let mut trace = LassoTrace {
        objective: Vec::new(),
        converged: false,
    };
    for _ in 0..p.max_iter {
        let mut max_change = T::zero();
        for j in 0..d {
            if scale[j] <= T::zero() {
                continue;
            }
            let col = &c.cols[j];
            let rho = dot(col, &r) / n + scale[j] * w[j];
            let new = soft_threshold(rho, lambda) / scale[j];
            let delta = new - w[j];
            if delta != T::zero() {
                for (ri, &xi) in r.iter_mut().zip(col) {
                    *ri -= delta * xi;
                }
                w[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        trace.objective.push(lasso_objective_centered(&r, &w, n, lambda));
        if max_change < tol {
            trace.converged = true;
            break;
        }
    }
    let intercept = c.y_mean - dot(&c.col_means, &w);
    Ok((finish(w, intercept, m)?, trace))
}

fn lasso_objective_centered<T: Scalar>(r: &[T], w: &[T], n: T, lambda: T) -> T {
    dot(r, r) / (T::of(2.0) * n) + lambda * w.iter().map(|v| v.abs()).sum::<T>()
}

/// `(1/2n) ||y - Xw - b||^2 + lambda ||w||_1` on the original scale.
pub fn lasso_objective<T: Scalar>(m: &EncodedMatrix<T>, model: &LinearModel<T>, lambda: T) -> T {
    let pred = predict_rows(model, m);
    let n = T::from_usize_lossy(m.n_rows());
    let sse: T = pred.iter().zip(m.y()).map(|(&a, &b)| (b - a) * (b - a)).sum();
    sse / (T::of(2.0) * n) + lambda * model.weights.iter().map(|v| v.abs()).sum::<T>()
}

/// Largest subgradient-condition violation:
/// active weights need `(1/n) x_j.r = lambda * sign(w_j)`,
/// zero weights need `|(1/n) x_j.r| <= lambda`.
pub fn kkt_violation<T: Scalar>(m: &EncodedMatrix<T>, model: &LinearModel<T>, lambda: T) -> T {
    let pred = predict_rows(model, m);
    let r: Vec<T> = m.y().iter().zip(&pred).map(|(&y, &p)| y - p).collect();
    let n = T::from_usize_lossy(m.n_rows());
    let mut worst = T::zero();
    for (j, &wj) in model.weights.iter().enumerate() {
        let g = dot(&m.column(j), &r) / n;
        let v = if wj != T::zero() {
            (g - lambda * wj.signum()).abs()
        } else {
            (g.abs() - lambda).max(T::zero())
        };
        worst = worst.max(v);
    }
    worst
}

/// The smallest lambda at which every Lasso weight is zero.
pub fn lasso_null_lambda<T: Scalar>(m: &EncodedMatrix<T>) -> T {
    let y_mean = scalar::mean(m.y());
    let yc: Vec<T> = m.y().iter().map(|&v| v - y_mean).collect();
    let n = T::from_usize_lossy(m.n_rows());
    (0..m.n_cols())
        .map(|j| (dot(&m.column(j), &yc) / n).abs())
        .fold(T::zero(), T::max)
}

fn predict_rows<T: Scalar>(model: &LinearModel<T>, m: &EncodedMatrix<T>) -> Vec<T> {
    m.rows().map(|row| dot(row, &model.weights) + model.intercept).collect()
}

pub fn predict_linear<T: Scalar>(model: &LinearModel<T>, m: &EncodedMatrix<T>) -> Result<Vec<T>> {
    if m.n_cols() != model.weights.len() {
        return Err(LinearError::DimensionMismatch {
            expected: model.weights.len(),
            got: m.n_cols(),
        });
    }
    Ok(predict_rows(model, m))
}

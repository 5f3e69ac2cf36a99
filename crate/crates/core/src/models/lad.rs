//! Least absolute deviation with a ridge penalty,
//! `min_b ||y - X b||_1 / m + lambda ||b||^2`.
//!
//! Solved by exact coordinate ascent on the box-constrained dual
//!
//! ```text
//! max_{theta in [-1, 1]^m}  theta^T y / m - ||X^T theta||^2 / (4 lambda m^2)
//! ```
//!
//! with the primal point recovered as `b = X^T theta / (2 lambda m)`. Rows are
//! visited in a fixed cyclic order, so the solver is deterministic. The
//! duality gap between the best primal iterate seen so far and the current
//! dual value certifies suboptimality; iteration stops once it drops below
//! `tol`.

use super::{check_rows, linear_predict, Predictor};
use crate::dataset::{dot, TabularDataset};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LadSolverInfo {
    /// Full passes over the rows.
    pub iterations: usize,
    /// Primal objective of the returned coefficients minus the best dual
    /// value; an upper bound on the suboptimality.
    pub duality_gap: f64,
    pub objective: f64,
    /// `false` when `max_iter` ran out before the gap fell below `tol`.
    pub converged: bool,
    /// Objective of every accepted (improving) primal iterate, in order.
    pub accepted_objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadRidgeModel {
    pub lambda_reg: f64,
    pub coefficients: Vec<f64>,
    candidate: Option<f64>,
    pub solver: LadSolverInfo,
}

impl LadRidgeModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        linear_predict(&self.coefficients, x)
    }

    pub fn fitted_candidate(&self) -> Option<f64> {
        self.candidate
    }
}

impl Predictor for LadRidgeModel {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        LadRidgeModel::predict(self, x)
    }

    fn fitted_candidate(&self) -> Option<f64> {
        self.candidate
    }
}

pub fn lad_ridge_objective(x: &[f64], p: usize, y: &[f64], lambda: f64, beta: &[f64]) -> f64 {
    let m = y.len() as f64;
    let loss: f64 = x
        .chunks_exact(p)
        .zip(y)
        .map(|(row, &yi)| (yi - dot(row, beta)).abs())
        .sum();
    loss / m + lambda * dot(beta, beta)
}

pub fn fit_lad_ridge_rows(
    x: &[f64],
    p: usize,
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LadRidgeModel> {
    check_rows(x, p, y)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("LAD-ridge needs lambda > 0, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(invalid("solver tolerance must be positive"));
    }
    if max_iter == 0 {
        return Err(invalid("max_iter must be positive"));
    }

    let m = y.len();
    let mf = m as f64;
    let scale = 2.0 * lambda * mf;
    let sq_norms: Vec<f64> = x.chunks_exact(p).map(|r| dot(r, r)).collect();

    let mut theta = vec![0.0; m];
    // Zero rows decouple: their dual coordinate sits at sign(y_i).
    for i in 0..m {
        if sq_norms[i] == 0.0 {
            theta[i] = if y[i] == 0.0 { 0.0 } else { y[i].signum() };
        }
    }
    let mut w = vec![0.0; p];

    let mut best_beta = vec![0.0; p];
    let mut best_obj = lad_ridge_objective(x, p, y, lambda, &best_beta);
    let mut accepted = vec![best_obj];
    let mut best_dual = f64::NEG_INFINITY;
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut beta = vec![0.0; p];

    while iterations < max_iter {
        iterations += 1;
        for i in 0..m {
            let sq = sq_norms[i];
            if sq == 0.0 {
                continue;
            }
            let row = &x[i * p..(i + 1) * p];
            let residual = y[i] - dot(row, &w) / scale;
            let updated = (theta[i] + scale * residual / sq).clamp(-1.0, 1.0);
            let delta = updated - theta[i];
            if delta != 0.0 {
                for (wj, &xj) in w.iter_mut().zip(row) {
                    *wj += delta * xj;
                }
                theta[i] = updated;
            }
        }

        for (b, &wj) in beta.iter_mut().zip(&w) {
            *b = wj / scale;
        }
        let primal = lad_ridge_objective(x, p, y, lambda, &beta);
        if primal < best_obj {
            best_obj = primal;
            best_beta.copy_from_slice(&beta);
            accepted.push(primal);
        }
        let dual = dot(&theta, y) / mf - dot(&w, &w) / (2.0 * scale * mf);
        best_dual = best_dual.max(dual);
        gap = best_obj - best_dual;
        if gap <= tol {
            break;
        }
    }

    Ok(LadRidgeModel {
        lambda_reg: lambda,
        coefficients: best_beta,
        candidate: None,
        solver: LadSolverInfo {
            iterations,
            duality_gap: gap.max(0.0),
            objective: best_obj,
            converged: gap <= tol,
            accepted_objectives: accepted,
        },
    })
}

pub fn fit_lad_ridge(
    dataset: &TabularDataset,
    candidate: f64,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LadRidgeModel> {
    let x = dataset.augmented_features();
    let y = dataset.augmented_targets(candidate).to_vec();
    let mut model = fit_lad_ridge_rows(&x, dataset.p(), &y, lambda, tol, max_iter)?;
    model.candidate = Some(candidate);
    Ok(model)
}

use nalgebra::{DMatrix, DVector};

use super::{check_rows, linear_predict, Predictor};
use crate::dataset::TabularDataset;
use crate::error::{invalid, Error, Result};

/// `mu_z(x) = a(x) + b(x) z` for a ridge fit on augmented data.
///
/// `a(x) = x^T base` and `b(x) = x^T slope`, with `base` the coefficients
/// for `y(0)` and `slope` the coefficients for the indicator of the test
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearResponse {
    pub base: Vec<f64>,
    pub slope: Vec<f64>,
}

impl LinearResponse {
    pub fn decompose(&self, x: &[f64]) -> Result<(f64, f64)> {
        Ok((linear_predict(&self.base, x)?, linear_predict(&self.slope, x)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub lambda_reg: f64,
    pub coefficients: Vec<f64>,
    candidate: Option<f64>,
    pub response: Option<LinearResponse>,
}

impl RidgeModel {
    pub fn from_coefficients(lambda_reg: f64, coefficients: Vec<f64>) -> Self {
        Self {
            lambda_reg,
            coefficients,
            candidate: None,
            response: None,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        linear_predict(&self.coefficients, x)
    }

    pub fn fitted_candidate(&self) -> Option<f64> {
        self.candidate
    }
}

impl Predictor for RidgeModel {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        RidgeModel::predict(self, x)
    }

    fn fitted_candidate(&self) -> Option<f64> {
        self.candidate
    }
}

/// Cholesky factor of `X^T X + m lambda I` for `m` rows.
fn factor(x: &[f64], p: usize, lambda: f64) -> Result<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let m = x.len() / p;
    let design = DMatrix::from_row_slice(m, p, x);
    let mut gram = design.tr_mul(&design);
    for j in 0..p {
        gram[(j, j)] += m as f64 * lambda;
    }
    gram.cholesky()
        .ok_or_else(|| Error::Numerical("ridge normal equations are singular".to_string()))
}

fn xt_y(x: &[f64], p: usize, y: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(p);
    for (row, &yi) in x.chunks_exact(p).zip(y) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v * yi;
        }
    }
    out
}

/// Ridge on arbitrary rows, solving `(X^T X + m lambda I) b = X^T y`.
pub fn fit_ridge_rows(x: &[f64], p: usize, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    check_rows(x, p, y)?;
    let chol = factor(x, p, lambda)?;
    let beta = chol.solve(&xt_y(x, p, y));
    Ok(RidgeModel::from_coefficients(lambda, beta.iter().copied().collect()))
}

/// Ridge on `D_{n+1}(candidate)`, also extracting the linear response in the
/// candidate from the same factorization.
pub fn fit_ridge(dataset: &TabularDataset, candidate: f64, lambda: f64) -> Result<RidgeModel> {
    let p = dataset.p();
    let x = dataset.augmented_features();
    let chol = factor(&x, p, lambda)?;
    let base = chol.solve(&xt_y(dataset.features(), p, dataset.targets()));
    let slope = chol.solve(&DVector::from_column_slice(dataset.test_point()));
    let coefficients = base.iter().zip(slope.iter()).map(|(b, s)| b + candidate * s).collect();
    Ok(RidgeModel {
        lambda_reg: lambda,
        coefficients,
        candidate: Some(candidate),
        response: Some(LinearResponse {
            base: base.iter().copied().collect(),
            slope: slope.iter().copied().collect(),
        }),
    })
}

pub(crate) fn largest_gram_eigenvalue(x: &[f64], p: usize) -> f64 {
    let m = x.len() / p;
    let design = DMatrix::from_row_slice(m, p, x);
    let gram = design.tr_mul(&design);
    gram.symmetric_eigenvalues().max().max(0.0)
}

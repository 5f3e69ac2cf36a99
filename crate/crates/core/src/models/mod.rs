//! Symmetric regression fitters.
//!
//! Every fitter treats the n+1 augmented rows identically (no row weights,
//! no ordering effects beyond solver round-off), which is what makes the
//! conformal ranks exchangeable.

mod interpolated;
mod lad;
mod ridge;

use serde::{Deserialize, Serialize};

pub(crate) use interpolated::blend;
pub use interpolated::{build_interpolated_model, InterpolatedModel, InterpolatedView};
pub use lad::{fit_lad_ridge, fit_lad_ridge_rows, lad_ridge_objective, LadRidgeModel, LadSolverInfo};
pub use ridge::{fit_ridge, fit_ridge_rows, LinearResponse, RidgeModel};

use crate::dataset::{dot, TabularDataset};
use crate::error::{invalid, Result};
use crate::stability::{bound_loss_c, LossKind};

pub const DEFAULT_LAD_TOL: f64 = 1e-9;
pub const DEFAULT_LAD_MAX_ITER: usize = 50_000;

/// A fitted prediction function `x -> mu(x)`.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &[f64]) -> Result<f64>;

    /// Candidate `z` of the augmented data the model was fitted on, `None`
    /// for models fitted on plain (non-augmented) rows.
    fn fitted_candidate(&self) -> Option<f64>;
}

/// How to fit a model; the fitted result is a [`FittedModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// `argmin ||y - X b||^2 / m + lambda ||b||^2`
    Ridge { lambda: f64 },
    /// `argmin ||y - X b||_1 / m + lambda ||b||^2`
    LadRidge {
        lambda: f64,
        tol: f64,
        max_iter: usize,
    },
    /// Ignores the data; useful as a reference point.
    Constant { value: f64 },
}

impl ModelSpec {
    pub fn ridge(lambda: f64) -> Self {
        ModelSpec::Ridge { lambda }
    }

    pub fn lad_ridge(lambda: f64) -> Self {
        ModelSpec::LadRidge {
            lambda,
            tol: DEFAULT_LAD_TOL,
            max_iter: DEFAULT_LAD_MAX_ITER,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Ridge { .. } => "ridge",
            ModelSpec::LadRidge { .. } => "ladridge",
            ModelSpec::Constant { .. } => "constant",
        }
    }

    /// Fits on the augmented data `D_{n+1}(candidate)`.
    pub fn fit(&self, dataset: &TabularDataset, candidate: f64) -> Result<FittedModel> {
        if !candidate.is_finite() {
            return Err(invalid("candidate must be finite"));
        }
        Ok(match *self {
            ModelSpec::Ridge { lambda } => FittedModel::Ridge(fit_ridge(dataset, candidate, lambda)?),
            ModelSpec::LadRidge {
                lambda,
                tol,
                max_iter,
            } => FittedModel::LadRidge(fit_lad_ridge(dataset, candidate, lambda, tol, max_iter)?),
            ModelSpec::Constant { value } => {
                FittedModel::Constant(ConstantModel::new(value).at_candidate(candidate))
            }
        })
    }

    /// Fits on arbitrary rows (row-major `x` with `p` columns). The result has
    /// no augmented candidate.
    pub fn fit_rows(&self, x: &[f64], p: usize, y: &[f64]) -> Result<FittedModel> {
        Ok(match *self {
            ModelSpec::Ridge { lambda } => FittedModel::Ridge(fit_ridge_rows(x, p, y, lambda)?),
            ModelSpec::LadRidge {
                lambda,
                tol,
                max_iter,
            } => FittedModel::LadRidge(fit_lad_ridge_rows(x, p, y, lambda, tol, max_iter)?),
            ModelSpec::Constant { value } => FittedModel::Constant(ConstantModel::new(value)),
        })
    }

    /// Fits on the n observed rows only, without the test point.
    pub fn fit_observed(&self, dataset: &TabularDataset) -> Result<FittedModel> {
        self.fit_rows(dataset.features(), dataset.p(), dataset.targets())
    }

    /// Regularity constants of the augmented objective on `dataset`, with
    /// range-dependent constants evaluated over `z_range`.
    ///
    /// For `lambda ||b||^2` the strong convexity modulus is `2 lambda`. For
    /// LAD the declared `rho` is the Lipschitz constant in `b` of the only
    /// term that depends on the candidate, `|z - x_{n+1}^T b| / (n+1)`, i.e.
    /// `||x_{n+1}|| / (n+1)`. For ridge `nu` is the smoothness of the scaled
    /// squared loss in `b`, `2 lambda_max(X^T X) / (n+1)`.
    pub fn regularity(
        &self,
        dataset: &TabularDataset,
        z_range: (f64, f64),
    ) -> Result<RegularityConstants> {
        let m = (dataset.n() + 1) as f64;
        match *self {
            ModelSpec::Ridge { lambda } => {
                let x = dataset.augmented_features();
                let top = ridge::largest_gram_eigenvalue(&x, dataset.p());
                Ok(RegularityConstants {
                    rho: None,
                    lambda_sc: 2.0 * lambda,
                    nu: 2.0 * top / m,
                    loss_bound_c: bound_loss_c(dataset, &LossKind::Squared, z_range)?,
                    l_phi: 1.0,
                })
            }
            ModelSpec::LadRidge { lambda, .. } => {
                let test_norm = dot(dataset.test_point(), dataset.test_point()).sqrt();
                Ok(RegularityConstants {
                    rho: Some(test_norm / m),
                    lambda_sc: 2.0 * lambda,
                    nu: 0.0,
                    loss_bound_c: bound_loss_c(dataset, &LossKind::Absolute, z_range)?,
                    l_phi: 1.0,
                })
            }
            ModelSpec::Constant { .. } => Ok(RegularityConstants {
                rho: Some(0.0),
                lambda_sc: f64::INFINITY,
                nu: 0.0,
                loss_bound_c: 0.0,
                l_phi: 1.0,
            }),
        }
    }
}

/// Constants that stability bounds are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    /// Lipschitz constant of the loss; `None` when the loss is not Lipschitz.
    pub rho: Option<f64>,
    /// Strong convexity modulus of the regularizer.
    pub lambda_sc: f64,
    /// Smoothness of the loss, 0 when not smooth.
    pub nu: f64,
    pub loss_bound_c: f64,
    pub l_phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Ridge(RidgeModel),
    LadRidge(LadRidgeModel),
    Constant(ConstantModel),
}

impl FittedModel {
    pub fn coefficients(&self) -> Option<&[f64]> {
        match self {
            FittedModel::Ridge(m) => Some(&m.coefficients),
            FittedModel::LadRidge(m) => Some(&m.coefficients),
            FittedModel::Constant(_) => None,
        }
    }

    pub fn linear_response(&self) -> Option<&LinearResponse> {
        match self {
            FittedModel::Ridge(m) => m.response.as_ref(),
            _ => None,
        }
    }
}

impl Predictor for FittedModel {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            FittedModel::Ridge(m) => m.predict(x),
            FittedModel::LadRidge(m) => m.predict(x),
            FittedModel::Constant(m) => m.predict(x),
        }
    }

    fn fitted_candidate(&self) -> Option<f64> {
        match self {
            FittedModel::Ridge(m) => m.fitted_candidate(),
            FittedModel::LadRidge(m) => m.fitted_candidate(),
            FittedModel::Constant(m) => m.fitted_candidate(),
        }
    }
}

/// `mu(x) = value` for every `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel {
    pub value: f64,
    candidate: Option<f64>,
}

impl ConstantModel {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            candidate: None,
        }
    }

    pub fn at_candidate(mut self, z: f64) -> Self {
        self.candidate = Some(z);
        self
    }
}

impl Predictor for ConstantModel {
    fn predict(&self, _x: &[f64]) -> Result<f64> {
        Ok(self.value)
    }

    fn fitted_candidate(&self) -> Option<f64> {
        self.candidate
    }
}

pub(crate) fn linear_predict(coefficients: &[f64], x: &[f64]) -> Result<f64> {
    if coefficients.len() != x.len() {
        return Err(invalid(format!(
            "feature vector has length {}, model expects {}",
            x.len(),
            coefficients.len()
        )));
    }
    Ok(dot(coefficients, x))
}

pub(crate) fn check_rows(x: &[f64], p: usize, y: &[f64]) -> Result<()> {
    if p == 0 || x.len() != y.len() * p {
        return Err(invalid(format!(
            "design of {} entries does not match {} targets with {p} features",
            x.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(invalid("cannot fit on zero rows"));
    }
    Ok(())
}

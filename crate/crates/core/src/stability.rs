//! Per-point stability bounds `tau_i`.
//!
//! A fitting procedure is stable with bounds `tau` when, for every row `i`,
//! every target `q` and every pair of candidates `z, z0`,
//! `|S(q, mu_z(x_i)) - S(q, mu_{z0}(x_i))| <= tau_i`. The functions here turn
//! regularity constants of the training objective into such bounds.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conformity::{linspace, ScoreFunction};
use crate::dataset::TabularDataset;
use crate::error::{invalid, Error, Result};
use crate::models::{FittedModel, ModelSpec, Predictor, RidgeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauProvenance {
    StronglyConvexLoss,
    RegularizedLipschitz,
    RegularizedSmooth,
    SgdHeuristic,
    LinearExact,
    UserSupplied,
    Interpolated,
}

impl TauProvenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            TauProvenance::StronglyConvexLoss => "strongly-convex-loss",
            TauProvenance::RegularizedLipschitz => "regularized-lipschitz",
            TauProvenance::RegularizedSmooth => "regularized-smooth",
            TauProvenance::SgdHeuristic => "sgd-heuristic",
            TauProvenance::LinearExact => "linear-exact",
            TauProvenance::UserSupplied => "user-supplied",
            TauProvenance::Interpolated => "interpolated",
        }
    }
}

/// The vector `(tau_1, ..., tau_{n+1})`; the last entry belongs to the test
/// point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityBounds {
    tau: Vec<f64>,
    provenance: TauProvenance,
    /// Range of candidates a range-dependent constant was computed over.
    candidate_range: Option<(f64, f64)>,
    /// Whether coverage claims may rest on these bounds. Heuristic bounds
    /// are never coverage-safe.
    coverage_safe: bool,
}

impl StabilityBounds {
    pub fn new(
        tau: Vec<f64>,
        provenance: TauProvenance,
        candidate_range: Option<(f64, f64)>,
    ) -> Result<Self> {
        if tau.len() < 3 {
            return Err(invalid("need tau for at least two observations and the test point"));
        }
        if tau.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(invalid("stability bounds must be finite and nonnegative"));
        }
        Ok(Self {
            tau,
            provenance,
            candidate_range,
            coverage_safe: provenance != TauProvenance::SgdHeuristic,
        })
    }

    pub fn user_supplied(tau: Vec<f64>) -> Result<Self> {
        Self::new(tau, TauProvenance::UserSupplied, None)
    }

    /// All-zero bounds for a dataset with `n` observations.
    pub fn zeros(n: usize) -> Self {
        Self {
            tau: vec![0.0; n + 1],
            provenance: TauProvenance::UserSupplied,
            candidate_range: None,
            coverage_safe: true,
        }
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// `tau_{n+1}`.
    pub fn test_tau(&self) -> f64 {
        self.tau[self.tau.len() - 1]
    }

    /// Number of observations `n` these bounds were built for.
    pub fn n(&self) -> usize {
        self.tau.len() - 1
    }

    pub fn provenance(&self) -> TauProvenance {
        self.provenance
    }

    pub fn candidate_range(&self) -> Option<(f64, f64)> {
        self.candidate_range
    }

    pub fn coverage_safe(&self) -> bool {
        self.coverage_safe
    }

    /// Same bounds with every entry multiplied by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut out = Self::new(
            self.tau.iter().map(|t| t * factor).collect(),
            self.provenance,
            self.candidate_range,
        )?;
        out.coverage_safe = self.coverage_safe;
        Ok(out)
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.tau.len() != n + 1 {
            return Err(invalid(format!(
                "stability bounds have {} entries, dataset needs {}",
                self.tau.len(),
                n + 1
            )));
        }
        Ok(())
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && !v.is_nan() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

fn check_nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

fn check_norms(row_norms: &[f64]) -> Result<()> {
    if row_norms.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(invalid("row norms must be finite and nonnegative"));
    }
    Ok(())
}

/// Loss strongly convex and Lipschitz in the prediction vector: uniform
/// `tau_i = 2 gamma rho / lambda_sc` for the n+1 points.
pub fn tau_strongly_convex(gamma: f64, rho: f64, lambda_sc: f64, n: usize) -> Result<StabilityBounds> {
    check_positive("lambda_sc", lambda_sc)?;
    check_nonnegative("gamma", gamma)?;
    check_nonnegative("rho", rho)?;
    StabilityBounds::new(
        vec![2.0 * gamma * rho / lambda_sc; n + 1],
        TauProvenance::StronglyConvexLoss,
        None,
    )
}

/// Lipschitz loss with a `lambda_sc`-strongly convex regularizer:
/// `tau_i = 2 gamma rho L_phi ||x_i|| / lambda_sc`.
pub fn tau_regularized_lipschitz(
    gamma: f64,
    rho: f64,
    l_phi: f64,
    lambda_sc: f64,
    row_norms: &[f64],
) -> Result<StabilityBounds> {
    check_positive("lambda_sc", lambda_sc)?;
    check_nonnegative("gamma", gamma)?;
    check_nonnegative("rho", rho)?;
    check_nonnegative("l_phi", l_phi)?;
    check_norms(row_norms)?;
    let factor = 2.0 * gamma * rho * l_phi / lambda_sc;
    StabilityBounds::new(
        row_norms.iter().map(|r| factor * r).collect(),
        TauProvenance::RegularizedLipschitz,
        None,
    )
}

/// `nu`-smooth loss bounded by `C` with a `lambda_sc`-strongly convex
/// regularizer, `nu < lambda_sc`:
/// `tau_i = 2 gamma L_phi ||x_i|| sqrt(2 nu C) / (lambda_sc - nu)`.
pub fn tau_regularized_smooth(
    gamma: f64,
    nu: f64,
    loss_bound_c: f64,
    l_phi: f64,
    lambda_sc: f64,
    row_norms: &[f64],
) -> Result<StabilityBounds> {
    check_nonnegative("nu", nu)?;
    check_nonnegative("loss bound C", loss_bound_c)?;
    check_nonnegative("gamma", gamma)?;
    check_nonnegative("l_phi", l_phi)?;
    check_norms(row_norms)?;
    if !(nu < lambda_sc) {
        return Err(invalid(format!(
            "smooth bound needs nu < lambda_sc, got nu = {nu}, lambda_sc = {lambda_sc}"
        )));
    }
    let factor = 2.0 * gamma * l_phi * (2.0 * nu * loss_bound_c).sqrt() / (lambda_sc - nu);
    StabilityBounds::new(
        row_norms.iter().map(|r| factor * r).collect(),
        TauProvenance::RegularizedSmooth,
        None,
    )
}

/// Heuristic for iterative solvers run for `n_iter` steps:
/// `tau_i = n_iter ||x_i|| / (n+1)`. Not coverage-safe.
pub fn tau_sgd_heuristic(n_iter: usize, row_norms: &[f64], n: usize) -> Result<StabilityBounds> {
    check_norms(row_norms)?;
    let factor = n_iter as f64 / (n + 1) as f64;
    StabilityBounds::new(
        row_norms.iter().map(|r| factor * r).collect(),
        TauProvenance::SgdHeuristic,
        None,
    )
}

/// Exact worst-case score deviation for a predictor affine in the candidate:
/// `tau_i = gamma |b(x_i)| (z_max - z_min)`.
pub fn tau_linear_exact(
    ridge: &RidgeModel,
    dataset: &TabularDataset,
    z_range: (f64, f64),
    gamma: f64,
) -> Result<StabilityBounds> {
    let response = ridge
        .response
        .as_ref()
        .ok_or_else(|| invalid("model has no linear response decomposition"))?;
    check_range(z_range)?;
    let width = z_range.1 - z_range.0;
    let tau = (0..=dataset.n())
        .map(|i| {
            response
                .decompose(dataset.augmented_row(i))
                .map(|(_, b)| gamma * b.abs() * width)
        })
        .collect::<Result<Vec<_>>>()?;
    StabilityBounds::new(tau, TauProvenance::LinearExact, Some(z_range))
}

/// Bounds for the interpolated model path: `3 gamma tau_i`.
pub fn tau_interpolated(base: &StabilityBounds, gamma: f64) -> Result<StabilityBounds> {
    check_nonnegative("gamma", gamma)?;
    let mut out = StabilityBounds::new(
        base.tau.iter().map(|t| 3.0 * gamma * t).collect(),
        TauProvenance::Interpolated,
        base.candidate_range,
    )?;
    out.coverage_safe = base.coverage_safe;
    Ok(out)
}

type ResidualLoss = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Training loss `L(y(z), prediction)` evaluated at the zero prediction,
/// scaled by `1/(n+1)`.
#[derive(Clone)]
pub enum LossKind {
    /// `||r||^2 / (n+1)`
    Squared,
    /// `||r||_1 / (n+1)`
    Absolute,
    /// Any loss of the residual vector `y(z) - 0`; `convex_in_z` selects
    /// endpoint evaluation over a grid search.
    Custom {
        loss: Arc<ResidualLoss>,
        convex_in_z: bool,
    },
}

impl LossKind {
    fn evaluate(&self, residuals: &[f64]) -> f64 {
        let m = residuals.len() as f64;
        match self {
            LossKind::Squared => residuals.iter().map(|r| r * r).sum::<f64>() / m,
            LossKind::Absolute => residuals.iter().map(|r| r.abs()).sum::<f64>() / m,
            LossKind::Custom { loss, .. } => loss(residuals),
        }
    }

    fn convex_in_z(&self) -> bool {
        match self {
            LossKind::Squared | LossKind::Absolute => true,
            LossKind::Custom { convex_in_z, .. } => *convex_in_z,
        }
    }
}

const LOSS_GRID: usize = 1000;

/// `C = sup_{z in z_range} L(y(z), 0)`. Convex losses attain the supremum at
/// an endpoint; other losses are maximized over a 1000-point grid.
pub fn bound_loss_c(dataset: &TabularDataset, loss: &LossKind, z_range: (f64, f64)) -> Result<f64> {
    check_range(z_range)?;
    let eval = |z: f64| {
        let v = loss.evaluate(&dataset.augmented_targets(z).to_vec());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!("loss is not finite at z = {z}")))
        }
    };
    if loss.convex_in_z() {
        Ok(eval(z_range.0)?.max(eval(z_range.1)?))
    } else {
        linspace(z_range.0, z_range.1, LOSS_GRID)
            .into_iter()
            .try_fold(f64::NEG_INFINITY, |acc, z| Ok(acc.max(eval(z)?)))
    }
}

fn check_range(z_range: (f64, f64)) -> Result<()> {
    if !(z_range.0.is_finite() && z_range.1.is_finite() && z_range.0 <= z_range.1) {
        return Err(invalid(format!("invalid candidate range {z_range:?}")));
    }
    Ok(())
}

/// Where the stability bounds of a run come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TauSource {
    /// From the model's declared regularity: ridge uses the smooth-loss bound
    /// when it applies and the exact linear-response bound otherwise;
    /// LAD-ridge uses the Lipschitz-loss bound.
    Auto,
    LinearExact,
    SgdHeuristic { n_iter: usize },
    Fixed(StabilityBounds),
}

/// Resolves `source` for `dataset`, using `anchor_fit` where the bound needs
/// a fitted model. No additional fits are performed.
pub fn resolve_tau(
    source: &TauSource,
    model_spec: &ModelSpec,
    anchor_fit: &FittedModel,
    dataset: &TabularDataset,
    score: &ScoreFunction,
    z_range: (f64, f64),
) -> Result<StabilityBounds> {
    let gamma = score.gamma();
    let norms = dataset.row_norms();
    // Bounds must hold between every candidate in the range and the anchor.
    let z_range = match anchor_fit.fitted_candidate() {
        Some(a) => (z_range.0.min(a), z_range.1.max(a)),
        None => z_range,
    };
    let linear_exact = || match anchor_fit {
        FittedModel::Ridge(r) => tau_linear_exact(r, dataset, z_range, gamma),
        FittedModel::Constant(_) => StabilityBounds::new(
            vec![0.0; dataset.n() + 1],
            TauProvenance::LinearExact,
            Some(z_range),
        ),
        FittedModel::LadRidge(_) => Err(invalid(
            "linear-exact bounds need a model that is affine in the candidate",
        )),
    };
    let bounds = match source {
        TauSource::Fixed(b) => b.clone(),
        TauSource::SgdHeuristic { n_iter } => tau_sgd_heuristic(*n_iter, &norms, dataset.n())?,
        TauSource::LinearExact => linear_exact()?,
        TauSource::Auto => {
            let reg = model_spec.regularity(dataset, z_range)?;
            match model_spec {
                ModelSpec::Ridge { .. } if reg.nu < reg.lambda_sc => {
                    let mut b = tau_regularized_smooth(
                        gamma,
                        reg.nu,
                        reg.loss_bound_c,
                        reg.l_phi,
                        reg.lambda_sc,
                        &norms,
                    )?;
                    b.candidate_range = Some(z_range);
                    b
                }
                ModelSpec::Ridge { .. } | ModelSpec::Constant { .. } => linear_exact()?,
                ModelSpec::LadRidge { .. } => {
                    let rho = reg.rho.unwrap_or(0.0);
                    tau_regularized_lipschitz(gamma, rho, reg.l_phi, reg.lambda_sc, &norms)?
                }
            }
        }
    };
    bounds.check_len(dataset.n())?;
    Ok(bounds)
}

/// Reads a single-column CSV of bounds, one row per observation plus a final
/// row for the test point. A non-numeric first row is taken as a header.
pub fn read_tau_csv(path: &Path) -> Result<StabilityBounds> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut tau = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = record.get(0).unwrap_or("").trim();
        match cell.parse::<f64>() {
            Ok(v) => tau.push(v),
            Err(_) if row == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    row: row + 1,
                    column: "tau".to_string(),
                    message: e.to_string(),
                })
            }
        }
    }
    StabilityBounds::user_supplied(tau)
}

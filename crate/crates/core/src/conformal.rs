//! Conformal sets from a single anchor fit, and the baselines they are
//! compared against.
//!
//! Given the scores `E_i(z0)` of one model fitted at an anchor candidate `z0`
//! and stability bounds `tau`, every score at any other candidate `z` lies in
//! `[E_i(z0) - tau_i, E_i(z0) + tau_i]`. Counting with these bounds instead of
//! the unknown scores sandwiches the exact conformity function between
//! `pi_lo(z)` and `pi_up(z)`; the set `{z : pi_up(z) >= alpha}` contains the
//! exact conformal set.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformity::{
    check_alpha, check_grid, conformal_set_grid, conformity_scores, linspace, merge_kept,
    meets_level, pi_exact, pi_from_count, Method, PredictionSet, ScoreFunction, SetShape,
};
use crate::dataset::TabularDataset;
use crate::error::{invalid, Error, Result};
use crate::models::{FittedModel, InterpolatedModel, ModelSpec, Predictor};
use crate::stability::{resolve_tau, StabilityBounds, TauProvenance, TauSource};

pub const DEFAULT_EPS_R: f64 = 1e-4;
/// Points of the coarse scan that looks for an interior point before
/// bisecting.
pub const PROBE_POINTS: usize = 20;

/// 1-based index `ceil(level * m)` of the order statistic used for a
/// `level = 1 - alpha` quantile of `m` values. A tolerance of `1e-10`
/// absorbs round-off in products that are integers in exact arithmetic.
pub fn quantile_index(alpha: f64, m: usize) -> usize {
    (((1.0 - alpha) * m as f64 - 1e-10).ceil() as usize).max(1)
}

/// How the anchor candidate `z0` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorChoice {
    Value(f64),
    /// The prediction at the test point of a model fitted on the n observed
    /// rows. Costs one extra fit.
    ObservedFit,
}

impl AnchorChoice {
    /// The anchor value and the number of fits spent choosing it.
    pub fn resolve(&self, dataset: &TabularDataset, model_spec: &ModelSpec) -> Result<(f64, usize)> {
        match *self {
            AnchorChoice::Value(z) if z.is_finite() => Ok((z, 0)),
            AnchorChoice::Value(z) => Err(invalid(format!("anchor must be finite, got {z}"))),
            AnchorChoice::ObservedFit => Ok((default_anchor(dataset, model_spec)?, 1)),
        }
    }
}

/// Prediction at `x_{n+1}` of `model_spec` fitted on the observed rows.
pub fn default_anchor(dataset: &TabularDataset, model_spec: &ModelSpec) -> Result<f64> {
    model_spec.fit_observed(dataset)?.predict(dataset.test_point())
}

/// One model fitted on `D_{n+1}(z0)` with what the bounds need from it.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorFit {
    pub anchor: f64,
    pub fit: FittedModel,
    /// `E_i(z0)` for the n observed rows.
    pub scores: Vec<f64>,
    /// `mu_{z0}(x_{n+1})`.
    pub test_prediction: f64,
}

impl AnchorFit {
    pub fn new(
        dataset: &TabularDataset,
        anchor: f64,
        model_spec: &ModelSpec,
        score: &ScoreFunction,
    ) -> Result<Self> {
        Self::from_fit(dataset, model_spec.fit(dataset, anchor)?, score)
    }

    pub fn from_fit(dataset: &TabularDataset, fit: FittedModel, score: &ScoreFunction) -> Result<Self> {
        let anchor = fit
            .fitted_candidate()
            .ok_or_else(|| Error::State("anchor model was not fitted on augmented data".into()))?;
        let mut scores = conformity_scores(dataset, anchor, &fit, score)?;
        scores.pop();
        let test_prediction = fit.predict(dataset.test_point())?;
        Ok(Self {
            anchor,
            fit,
            scores,
            test_prediction,
        })
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    /// `S(z, mu_{z0}(x_{n+1}))`.
    pub fn test_score(&self, z: f64, score: &ScoreFunction) -> f64 {
        score.evaluate(z, self.test_prediction)
    }
}

/// `L_i = E_i(z0) - tau_i` and `U_i = E_i(z0) + tau_i`. Entries for the n
/// observed rows do not depend on `z`; the test entries are produced by
/// [`ConformityBounds::test_bounds`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConformityBounds {
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    pub anchor: f64,
    test_prediction: f64,
    test_tau: f64,
}

impl ConformityBounds {
    pub fn new(anchor_fit: &AnchorFit, tau: &StabilityBounds) -> Result<Self> {
        tau.check_len(anchor_fit.n())?;
        let t = tau.tau();
        Ok(Self {
            l: anchor_fit.scores.iter().zip(t).map(|(e, t)| e - t).collect(),
            u: anchor_fit.scores.iter().zip(t).map(|(e, t)| e + t).collect(),
            anchor: anchor_fit.anchor,
            test_prediction: anchor_fit.test_prediction,
            test_tau: tau.test_tau(),
        })
    }

    /// `(L_{n+1}(z), U_{n+1}(z))`.
    pub fn test_bounds(&self, z: f64, score: &ScoreFunction) -> (f64, f64) {
        let s = score.evaluate(z, self.test_prediction);
        (s - self.test_tau, s + self.test_tau)
    }

    /// All n+1 lower and upper bounds at `z`.
    pub fn at(&self, z: f64, score: &ScoreFunction) -> (Vec<f64>, Vec<f64>) {
        let (lt, ut) = self.test_bounds(z, score);
        let mut l = self.l.clone();
        let mut u = self.u.clone();
        l.push(lt);
        u.push(ut);
        (l, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiBounds {
    pub lo: f64,
    pub up: f64,
    pub gap: f64,
}

impl PiBounds {
    fn from_counts(lo_count: usize, up_count: usize, m: usize) -> Self {
        let lo = pi_from_count(lo_count, m);
        let up = pi_from_count(up_count, m);
        Self { lo, up, gap: up - lo }
    }
}

fn check_scores(anchor_scores: &[f64], tau: &[f64]) -> Result<()> {
    if tau.len() != anchor_scores.len() + 1 {
        return Err(invalid(format!(
            "{} anchor scores need {} stability bounds, got {}",
            anchor_scores.len(),
            anchor_scores.len() + 1,
            tau.len()
        )));
    }
    Ok(())
}

/// Sandwich bounds from the n anchor scores, the anchor test score
/// `S(z, mu_{z0}(x_{n+1}))` and the n+1 stability bounds, with sums over all
/// n+1 points:
///
/// ```text
/// pi_lo = 1 - #{i : L_i <= U_{n+1}} / (n+1)
/// pi_up = 1 - #{i : U_i <= L_{n+1}} / (n+1)
/// ```
pub fn pi_bounds_from_scores(anchor_scores: &[f64], test_score: f64, tau: &[f64]) -> Result<PiBounds> {
    check_scores(anchor_scores, tau)?;
    let n = anchor_scores.len();
    let t = tau[n];
    let (lt, ut) = (test_score - t, test_score + t);
    let mut lo_count = usize::from(lt <= ut);
    let mut up_count = usize::from(ut <= lt);
    for (e, ti) in anchor_scores.iter().zip(tau) {
        lo_count += usize::from(e - ti <= ut);
        up_count += usize::from(e + ti <= lt);
    }
    Ok(PiBounds::from_counts(lo_count, up_count, n + 1))
}

/// The upper bound with the sum restricted to the n observed points,
/// `1 - #{i <= n : U_i <= L_{n+1}} / (n+1)`. Equal to the full-sum upper
/// bound whenever `tau_{n+1} > 0`.
pub fn pi_up_observed_sum(anchor_scores: &[f64], test_score: f64, tau: &[f64]) -> Result<f64> {
    check_scores(anchor_scores, tau)?;
    let n = anchor_scores.len();
    let lt = test_score - tau[n];
    let count = anchor_scores
        .iter()
        .zip(tau)
        .filter(|(e, t)| *e + *t <= lt)
        .count();
    Ok(pi_from_count(count, n + 1))
}

pub fn pi_bounds(
    z: f64,
    anchor_fit: &AnchorFit,
    tau: &StabilityBounds,
    score: &ScoreFunction,
) -> Result<PiBounds> {
    pi_bounds_from_scores(&anchor_fit.scores, anchor_fit.test_score(z, score), tau.tau())
}

/// Tightest bounds over several anchors: the largest lower bound and the
/// smallest upper bound.
pub fn batch_pi_bounds(
    z: f64,
    anchors: &[AnchorFit],
    tau: &StabilityBounds,
    score: &ScoreFunction,
) -> Result<PiBounds> {
    if anchors.is_empty() {
        return Err(invalid("batch bounds need at least one anchor"));
    }
    let mut lo = f64::NEG_INFINITY;
    let mut up = f64::INFINITY;
    for a in anchors {
        let b = pi_bounds(z, a, tau, score)?;
        lo = lo.max(b.lo);
        up = up.min(b.up);
    }
    Ok(PiBounds { lo, up, gap: up - lo })
}

/// Outcome of one method on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub set: PredictionSet,
    /// Whether the set contains the held-out target, when it is known.
    pub covered: Option<bool>,
    pub length: f64,
    pub fit_count: usize,
    /// Evaluations of the conformity bound or function.
    pub evaluations: usize,
    /// Seconds.
    pub wall_time: f64,
    pub tau_provenance: Option<TauProvenance>,
    pub coverage_safe: bool,
    /// Some endpoint was clamped to the candidate range.
    pub truncated: bool,
    pub anchor: Option<f64>,
    pub range: (f64, f64),
}

impl MethodReport {
    fn new(
        dataset: &TabularDataset,
        set: PredictionSet,
        start: Instant,
        fit_count: usize,
        evaluations: usize,
        range: (f64, f64),
    ) -> Self {
        Self {
            covered: dataset.test_target().map(|t| set.contains(t)),
            length: set.length(),
            truncated: set.shape == SetShape::WholeRange,
            set,
            fit_count,
            evaluations,
            wall_time: start.elapsed().as_secs_f64(),
            tau_provenance: None,
            coverage_safe: true,
            anchor: None,
            range,
        }
    }

    fn with_tau(mut self, tau: &StabilityBounds) -> Self {
        self.tau_provenance = Some(tau.provenance());
        self.coverage_safe = tau.coverage_safe();
        self
    }
}

/// The candidate range, `[y_(1), y_(n)]` unless given.
pub fn resolve_range(dataset: &TabularDataset, range: Option<(f64, f64)>) -> Result<(f64, f64)> {
    let r = range.unwrap_or_else(|| dataset.target_range());
    if !(r.0.is_finite() && r.1.is_finite() && r.0 <= r.1) {
        return Err(invalid(format!("invalid candidate range {r:?}")));
    }
    Ok(r)
}

fn require_absolute_residual(score: &ScoreFunction, what: &str) -> Result<()> {
    if score.is_absolute_residual() {
        Ok(())
    } else {
        Err(invalid(format!("{what} needs the absolute-residual score")))
    }
}

/// `U_(k)` over the n observed upper bounds with `k = ceil((1-alpha)(n+1))`,
/// or `None` when `k > n`.
fn upper_quantile(anchor_fit: &AnchorFit, tau: &StabilityBounds, alpha: f64) -> Result<Option<f64>> {
    tau.check_len(anchor_fit.n())?;
    let n = anchor_fit.n();
    let k = quantile_index(alpha, n + 1);
    if k > n {
        return Ok(None);
    }
    let mut u: Vec<f64> = anchor_fit
        .scores
        .iter()
        .zip(tau.tau())
        .map(|(e, t)| e + t)
        .collect();
    let (_, q, _) = u.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(Some(*q))
}

/// Closed-form set for the absolute-residual score:
/// `mu_{z0}(x_{n+1}) +- (Q + tau_{n+1})`, or the whole range when the
/// quantile index exceeds n. No check on `tau_{n+1}`, so `tau = 0` gives the
/// limit form.
pub fn stab_cp_closed_form(
    anchor_fit: &AnchorFit,
    tau: &StabilityBounds,
    alpha: f64,
    range: (f64, f64),
) -> Result<PredictionSet> {
    check_alpha(alpha)?;
    Ok(match upper_quantile(anchor_fit, tau, alpha)? {
        None => PredictionSet::whole_range(Method::StabCp, alpha, range),
        Some(q) => {
            let half = q + tau.test_tau();
            let mu = anchor_fit.test_prediction;
            PredictionSet::interval(Method::StabCp, alpha, mu - half, mu + half)
        }
    })
}

/// The one-fit stable conformal interval for the absolute-residual score.
pub fn stab_cp_interval(
    dataset: &TabularDataset,
    anchor: AnchorChoice,
    model_spec: &ModelSpec,
    score: &ScoreFunction,
    tau_source: &TauSource,
    alpha: f64,
    range: Option<(f64, f64)>,
) -> Result<MethodReport> {
    check_alpha(alpha)?;
    require_absolute_residual(score, "the closed-form stable interval")?;
    let range = resolve_range(dataset, range)?;
    let start = Instant::now();
    let (z0, anchor_fits) = anchor.resolve(dataset, model_spec)?;
    let anchor_fit = AnchorFit::new(dataset, z0, model_spec, score)?;
    let tau = resolve_tau(tau_source, model_spec, &anchor_fit.fit, dataset, score, range)?;
    if !(tau.test_tau() > 0.0) {
        return Err(invalid(
            "the closed-form stable interval needs tau_{n+1} > 0",
        ));
    }
    let set = stab_cp_closed_form(&anchor_fit, &tau, alpha, range)?;
    let mut report = MethodReport::new(dataset, set, start, anchor_fits + 1, 0, range).with_tau(&tau);
    report.anchor = Some(z0);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LevelSet {
    bounds: Option<(f64, f64)>,
    evaluations: usize,
    clamped_lo: bool,
    clamped_hi: bool,
}

/// Brackets `{z in [z_min, z_max] : pred(z)}`, assumed to be an interval.
///
/// A coarse scan of `PROBE_POINTS` points finds an interior point `z_0`; the
/// two endpoints are then bisected until the bracket is at most `eps_r` wide
/// and the outer end of each bracket is returned. Endpoints of the range where
/// `pred` holds are kept and reported as clamped.
fn bisect_level_set<F>(mut pred: F, z_min: f64, z_max: f64, eps_r: f64) -> Result<LevelSet>
where
    F: FnMut(f64) -> Result<bool>,
{
    if !(eps_r > 0.0) {
        return Err(invalid(format!("eps_r must be positive, got {eps_r}")));
    }
    let mut evaluations = 0;
    let mut eval = |z: f64| {
        evaluations += 1;
        pred(z)
    };
    let probes = linspace(z_min, z_max, PROBE_POINTS);
    let mut z0 = None;
    let mut at_min = None;
    for (k, &z) in probes.iter().enumerate() {
        let hit = eval(z)?;
        if k == 0 {
            at_min = Some(hit);
        }
        if hit {
            z0 = Some(z);
            break;
        }
    }
    let Some(z0) = z0 else {
        return Ok(LevelSet {
            bounds: None,
            evaluations,
            clamped_lo: false,
            clamped_hi: false,
        });
    };

    let clamped_lo = at_min == Some(true);
    let lo = if clamped_lo {
        z_min
    } else {
        let (mut out, mut inside) = (z_min, z0);
        while inside - out > eps_r {
            let mid = 0.5 * (out + inside);
            if eval(mid)? {
                inside = mid;
            } else {
                out = mid;
            }
        }
        out
    };

    let clamped_hi = z0 == z_max || eval(z_max)?;
    let hi = if clamped_hi {
        z_max
    } else {
        let (mut inside, mut out) = (z0, z_max);
        while out - inside > eps_r {
            let mid = 0.5 * (out + inside);
            if eval(mid)? {
                inside = mid;
            } else {
                out = mid;
            }
        }
        out
    };
    Ok(LevelSet {
        bounds: Some((lo, hi)),
        evaluations,
        clamped_lo,
        clamped_hi,
    })
}

fn level_set_to_set(level: &LevelSet, method: Method, alpha: f64, range: (f64, f64)) -> PredictionSet {
    match level.bounds {
        None => PredictionSet::empty(method, alpha),
        Some(_) if level.clamped_lo && level.clamped_hi => {
            PredictionSet::whole_range(method, alpha, range)
        }
        Some((lo, hi)) => PredictionSet::interval(method, alpha, lo, hi),
    }
}

/// The stable set for any score with convex level sets in the candidate,
/// found by bisection on `L_{n+1}(z) <= U_(k)`, `k = ceil((1-alpha)(n+1))`.
/// For the absolute-residual score this is the closed-form interval up to
/// `eps_r`. No refits beyond the anchor.
#[allow(clippy::too_many_arguments)]
pub fn stab_cp_bisection(
    dataset: &TabularDataset,
    anchor: AnchorChoice,
    model_spec: &ModelSpec,
    score: &ScoreFunction,
    tau_source: &TauSource,
    alpha: f64,
    range: Option<(f64, f64)>,
    eps_r: f64,
) -> Result<MethodReport> {
    check_alpha(alpha)?;
    let range = resolve_range(dataset, range)?;
    let start = Instant::now();
    let (z0, anchor_fits) = anchor.resolve(dataset, model_spec)?;
    let anchor_fit = AnchorFit::new(dataset, z0, model_spec, score)?;
    let tau = resolve_tau(tau_source, model_spec, &anchor_fit.fit, dataset, score, range)?;
    let q = upper_quantile(&anchor_fit, &tau, alpha)?;
    let t = tau.test_tau();
    let level = bisect_level_set(
        |z| {
            Ok(match q {
                None => true,
                Some(q) => anchor_fit.test_score(z, score) - t <= q,
            })
        },
        range.0,
        range.1,
        eps_r,
    )?;
    let set = level_set_to_set(&level, Method::StabCpBisection, alpha, range);
    let mut report =
        MethodReport::new(dataset, set, start, anchor_fits + 1, level.evaluations, range).with_tau(&tau);
    report.truncated = level.clamped_lo || level.clamped_hi;
    report.anchor = Some(z0);
    Ok(report)
}

/// Grid points where the batch upper bound over several anchors is at least
/// `alpha`. One fit per anchor; `tau` is resolved from the first anchor fit.
#[allow(clippy::too_many_arguments)]
pub fn batch_cp(
    dataset: &TabularDataset,
    anchors: &[f64],
    model_spec: &ModelSpec,
    score: &ScoreFunction,
    tau_source: &TauSource,
    alpha: f64,
    grid: &[f64],
) -> Result<MethodReport> {
    check_alpha(alpha)?;
    check_grid(grid)?;
    if anchors.is_empty() {
        return Err(invalid("batch needs at least one anchor"));
    }
    let range = (grid[0], grid[grid.len() - 1]);
    let start = Instant::now();
    let fits = anchors
        .iter()
        .map(|&a| AnchorFit::new(dataset, a, model_spec, score))
        .collect::<Result<Vec<_>>>()?;
    let hull = anchors
        .iter()
        .fold(range, |(lo, hi), &a| (lo.min(a), hi.max(a)));
    let tau = resolve_tau(tau_source, model_spec, &fits[0].fit, dataset, score, hull)?;
    let kept = grid
        .iter()
        .map(|&z| batch_pi_bounds(z, &fits, &tau, score).map(|b| meets_level(b.up, alpha)))
        .collect::<Result<Vec<_>>>()?;
    let set = PredictionSet::from_intervals(Method::BatchCp, alpha, merge_kept(grid, &kept));
    Ok(MethodReport::new(dataset, set, start, fits.len(), grid.len(), range).with_tau(&tau))
}

/// Sandwich bounds for the interpolated model path at `z`, from cached knot
/// predictions (`[knot][row]`, n+1 rows).
fn interpolated_bounds_cached(
    dataset: &TabularDataset,
    model: &InterpolatedModel,
    knot_predictions: &[Vec<f64>],
    tau_tilde: &StabilityBounds,
    score: &ScoreFunction,
    z: f64,
) -> Result<PiBounds> {
    let (t, w) = model.segment(z);
    let (left, right) = (&knot_predictions[t], &knot_predictions[t + 1]);
    let n = dataset.n();
    let blend = |i: usize| crate::models::blend(left[i], right[i], w);
    let scores: Vec<f64> = dataset
        .targets()
        .iter()
        .enumerate()
        .map(|(i, &y)| score.evaluate(y, blend(i)))
        .collect();
    pi_bounds_from_scores(&scores, score.evaluate(z, blend(n)), tau_tilde.tau())
}

/// Bounds `pi~_lo(z)`, `pi~_up(z)` computed from the interpolated scores
/// `E~_i(z)` with widened bounds `tau_tilde`.
pub fn interpolated_pi_bounds(
    dataset: &TabularDataset,
    model: &InterpolatedModel,
    tau_tilde: &StabilityBounds,
    score: &ScoreFunction,
    z: f64,
) -> Result<PiBounds> {
    tau_tilde.check_len(dataset.n())?;
    let preds = model.knot_predictions(dataset)?;
    interpolated_bounds_cached(dataset, model, &preds, tau_tilde, score, z)
}

/// Grid points where `pi~_up(z) >= alpha`. Scores are recomputed per grid
/// point from the knot predictions; no refits beyond the knots.
pub fn interpolated_cp(
    dataset: &TabularDataset,
    model: &InterpolatedModel,
    tau_tilde: &StabilityBounds,
    score: &ScoreFunction,
    alpha: f64,
    grid: &[f64],
) -> Result<MethodReport> {
    check_alpha(alpha)?;
    check_grid(grid)?;
    tau_tilde.check_len(dataset.n())?;
    let start = Instant::now();
    let preds = model.knot_predictions(dataset)?;
    let kept = grid
        .iter()
        .map(|&z| {
            interpolated_bounds_cached(dataset, model, &preds, tau_tilde, score, z)
                .map(|b| meets_level(b.up, alpha))
        })
        .collect::<Result<Vec<_>>>()?;
    let set = PredictionSet::from_intervals(Method::InterpCp, alpha, merge_kept(grid, &kept));
    let range = (grid[0], grid[grid.len() - 1]);
    Ok(MethodReport::new(dataset, set, start, model.fit_count(), grid.len(), range).with_tau(tau_tilde))
}

/// Split conformal: fit on the first `m` observed rows, calibrate on the
/// remaining `n - m`. The interval is `mu(x_{n+1}) +- E_cal_(k)` with
/// `k = ceil((1-alpha)(n-m+1))`, or the whole range when `k > n - m`.
pub fn split_cp(
    dataset: &TabularDataset,
    m: usize,
    model_spec: &ModelSpec,
    score: &ScoreFunction,
    alpha: f64,
    range: Option<(f64, f64)>,
) -> Result<MethodReport> {
    check_alpha(alpha)?;
    require_absolute_residual(score, "split conformal")?;
    let n = dataset.n();
    if m == 0 || m >= n {
        return Err(invalid(format!(
            "split index must satisfy 1 <= m < n = {n}, got {m}"
        )));
    }
    let range = resolve_range(dataset, range)?;
    let start = Instant::now();
    let p = dataset.p();
    let model = model_spec.fit_rows(
        &dataset.features()[..m * p],
        p,
        &dataset.targets()[..m],
    )?;
    let mut calibration = (m..n)
        .map(|i| Ok(score.evaluate(dataset.targets()[i], model.predict(dataset.row(i))?)))
        .collect::<Result<Vec<f64>>>()?;
    let k = quantile_index(alpha, n - m + 1);
    let set = if k > n - m {
        PredictionSet::whole_range(Method::SplitCp, alpha, range)
    } else {
        let (_, q, _) = calibration.select_nth_unstable_by(k - 1, f64::total_cmp);
        let mu = model.predict(dataset.test_point())?;
        PredictionSet::interval(Method::SplitCp, alpha, mu - *q, mu + *q)
    };
    Ok(MethodReport::new(dataset, set, start, 1, 0, range))
}

/// Split-conformal conformity along a grid: the model is fitted once on the
/// first `m` rows and `z` is ranked among the `n - m` calibration scores and
/// itself, `1 - Rank / (n - m + 1)`.
pub fn split_conformity(
    dataset: &TabularDataset,
    m: usize,
    model_spec: &ModelSpec,
    score: &ScoreFunction,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let n = dataset.n();
    if m == 0 || m >= n {
        return Err(invalid(format!(
            "split index must satisfy 1 <= m < n = {n}, got {m}"
        )));
    }
    let p = dataset.p();
    let model = model_spec.fit_rows(&dataset.features()[..m * p], p, &dataset.targets()[..m])?;
    let calibration = (m..n)
        .map(|i| Ok(score.evaluate(dataset.targets()[i], model.predict(dataset.row(i))?)))
        .collect::<Result<Vec<f64>>>()?;
    let mu = model.predict(dataset.test_point())?;
    Ok(grid
        .iter()
        .map(|&z| {
            let s = score.evaluate(z, mu);
            let count = calibration.iter().filter(|&&c| c <= s).count() + 1;
            pi_from_count(count, n - m + 1)
        })
        .collect())
}

/// The set full conformal would return if `y_{n+1}` were known: one fit at
/// `z = y_{n+1}`, scores of the observed rows held fixed, interval
/// `mu(x_{n+1}) +- E_(k)` with `k = ceil((1-alpha)(n+1))`.
pub fn oracle_cp(
    dataset: &TabularDataset,
    true_target: f64,
    model_spec: &ModelSpec,
    score: &ScoreFunction,
    alpha: f64,
    range: Option<(f64, f64)>,
) -> Result<MethodReport> {
    check_alpha(alpha)?;
    require_absolute_residual(score, "oracle conformal")?;
    let range = resolve_range(dataset, range)?;
    let start = Instant::now();
    let fit = AnchorFit::new(dataset, true_target, model_spec, score)?;
    let mut set = stab_cp_closed_form(&fit, &StabilityBounds::zeros(dataset.n()), alpha, range)?;
    set.method = Method::OracleCp;
    let mut report = MethodReport::new(dataset, set, start, 1, 0, range);
    report.anchor = Some(true_target);
    Ok(report)
}

/// Full conformal by bisection on `pi(z) >= alpha`; every evaluation refits.
pub fn root_cp(
    dataset: &TabularDataset,
    model_spec: &ModelSpec,
    score: &ScoreFunction,
    alpha: f64,
    range: Option<(f64, f64)>,
    eps_r: f64,
) -> Result<MethodReport> {
    check_alpha(alpha)?;
    let range = resolve_range(dataset, range)?;
    let start = Instant::now();
    let level = bisect_level_set(
        |z| Ok(meets_level(pi_exact(dataset, z, model_spec, score)?, alpha)),
        range.0,
        range.1,
        eps_r,
    )?;
    let set = level_set_to_set(&level, Method::RootCp, alpha, range);
    let mut report =
        MethodReport::new(dataset, set, start, level.evaluations, level.evaluations, range);
    report.truncated = level.clamped_lo || level.clamped_hi;
    Ok(report)
}

/// Full conformal on a grid, one refit per point.
pub fn grid_cp(
    dataset: &TabularDataset,
    model_spec: &ModelSpec,
    score: &ScoreFunction,
    alpha: f64,
    grid: &[f64],
) -> Result<MethodReport> {
    let start = Instant::now();
    let set = conformal_set_grid(dataset, model_spec, score, alpha, grid)?;
    let range = (grid[0], grid[grid.len() - 1]);
    Ok(MethodReport::new(dataset, set, start, grid.len(), grid.len(), range))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub z: f64,
    pub lo: f64,
    pub up: f64,
    pub exact: f64,
}

/// Sandwich bounds and the exact conformity (one refit each) along a grid.
/// Diagnostic only.
pub fn gap_profile(
    dataset: &TabularDataset,
    anchor_fit: &AnchorFit,
    model_spec: &ModelSpec,
    score: &ScoreFunction,
    tau: &StabilityBounds,
    grid: &[f64],
) -> Result<Vec<GapPoint>> {
    check_grid(grid)?;
    grid.par_iter()
        .map(|&z| {
            let b = pi_bounds(z, anchor_fit, tau, score)?;
            Ok(GapPoint {
                z,
                lo: b.lo,
                up: b.up,
                exact: pi_exact(dataset, z, model_spec, score)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformity::rank;
    use crate::data::{gen_linear_gaussian, GeneratorKind, GeneratorSpec};
    use crate::models::{build_interpolated_model, ConstantModel};
    use crate::stability::tau_interpolated;
    use proptest::prelude::*;

    fn synthetic(n: usize, p: usize, seed: u64) -> TabularDataset {
        gen_linear_gaussian(&GeneratorSpec {
            kind: GeneratorKind::LinearGaussian,
            n,
            p,
            noise_sd: 1.0,
            seed,
        })
        .unwrap()
        .dataset
    }

    fn manual_anchor(scores: Vec<f64>, test_prediction: f64) -> AnchorFit {
        AnchorFit {
            anchor: 0.0,
            fit: FittedModel::Constant(ConstantModel::new(test_prediction).at_candidate(0.0)),
            scores,
            test_prediction,
        }
    }

    fn abs() -> ScoreFunction {
        ScoreFunction::absolute_residual()
    }

    #[test]
    fn quantile_index_examples() {
        assert_eq!(quantile_index(0.1, 10), 9);
        assert_eq!(quantile_index(0.05, 3), 3);
        assert_eq!(quantile_index(0.1, 301), 271);
        assert_eq!(quantile_index(0.999, 5), 1);
    }

    #[test]
    fn pi_bounds_hand_example() {
        let b = pi_bounds_from_scores(&[1.0, 2.0], 1.5, &[0.1, 0.1, 0.1]).unwrap();
        assert_eq!(b.up, pi_from_count(1, 3));
        assert_eq!(b.lo, pi_from_count(2, 3));
        assert!((b.up - 2.0 / 3.0).abs() < 1e-15 && (b.lo - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.gap, b.up - b.lo);
    }

    #[test]
    fn zero_tau_collapses_to_exact_conformity() {
        let d = synthetic(20, 3, 4);
        let spec = ModelSpec::ridge(1.0);
        let fit = AnchorFit::new(&d, 0.3, &spec, &abs()).unwrap();
        let zero = StabilityBounds::zeros(20);
        let b = pi_bounds(0.3, &fit, &zero, &abs()).unwrap();
        let exact = pi_exact(&d, 0.3, &spec, &abs()).unwrap();
        assert_eq!((b.lo, b.up), (exact, exact));
    }

    #[test]
    fn huge_tau_saturates() {
        let b = pi_bounds_from_scores(&[1.0, 2.0, 3.0], 2.5, &[1e9; 4]).unwrap();
        assert_eq!((b.lo, b.up), (0.0, 1.0));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(pi_bounds_from_scores(&[1.0, 2.0], 1.5, &[0.1, 0.1]).is_err());
        assert!(pi_up_observed_sum(&[1.0, 2.0], 1.5, &[0.1]).is_err());
    }

    #[test]
    fn conformity_bounds_invariants() {
        let fit = manual_anchor(vec![0.5, 1.0, 2.0], 0.0);
        let tau = StabilityBounds::user_supplied(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let cb = ConformityBounds::new(&fit, &tau).unwrap();
        let (l, u) = cb.at(1.0, &abs());
        for i in 0..4 {
            assert!((u[i] - l[i] - 2.0 * tau.tau()[i]).abs() < 1e-12);
        }
        for i in 0..3 {
            assert!(l[i] <= fit.scores[i] && fit.scores[i] <= u[i]);
        }
        assert_eq!(cb.test_bounds(1.0, &abs()), (0.6, 1.4));
    }

    #[test]
    fn closed_form_substitution() {
        // n = 9, alpha = 0.1: k = 9, Q = max(E) + 0.5 = 1.
        let fit = manual_anchor(linspace(0.1, 0.5, 9), 0.0);
        let tau = StabilityBounds::user_supplied(vec![0.5; 10]).unwrap();
        let set = stab_cp_closed_form(&fit, &tau, 0.1, (-5.0, 5.0)).unwrap();
        assert_eq!(set.intervals, vec![(-1.5, 1.5)]);
        assert_eq!(set.shape, SetShape::Interval);
    }

    #[test]
    fn closed_form_overflow_is_whole_range() {
        let fit = manual_anchor(vec![0.1, 0.2], 0.0);
        let tau = StabilityBounds::user_supplied(vec![0.5; 3]).unwrap();
        let set = stab_cp_closed_form(&fit, &tau, 0.05, (-5.0, 5.0)).unwrap();
        assert_eq!(set.shape, SetShape::WholeRange);
        assert_eq!(set.intervals, vec![(-5.0, 5.0)]);
    }

    #[test]
    fn stab_cp_requires_positive_test_tau() {
        let d = synthetic(10, 2, 1);
        let mut t = vec![0.1; 11];
        t[10] = 0.0;
        let src = TauSource::Fixed(StabilityBounds::user_supplied(t).unwrap());
        let err = stab_cp_interval(&d, AnchorChoice::Value(0.0), &ModelSpec::ridge(1.0), &abs(), &src, 0.1, None);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn stab_cp_counts_fits() {
        let d = synthetic(30, 3, 2);
        let spec = ModelSpec::ridge(1.0);
        let r = stab_cp_interval(&d, AnchorChoice::Value(0.0), &spec, &abs(), &TauSource::Auto, 0.1, None).unwrap();
        assert_eq!(r.fit_count, 1);
        assert_eq!(r.set.shape, SetShape::Interval);
        let r = stab_cp_interval(&d, AnchorChoice::ObservedFit, &spec, &abs(), &TauSource::Auto, 0.1, None).unwrap();
        assert_eq!(r.fit_count, 2);
        assert_eq!(r.anchor, Some(default_anchor(&d, &spec).unwrap()));
    }

    #[test]
    fn bisection_matches_closed_form() {
        for seed in 0..5 {
            let d = synthetic(40, 5, seed);
            let spec = ModelSpec::ridge(0.5);
            let (lo, hi) = d.target_range();
            let wide = (lo - 10.0, hi + 10.0);
            let src = TauSource::LinearExact;
            let a = stab_cp_interval(&d, AnchorChoice::Value(0.0), &spec, &abs(), &src, 0.1, Some(wide)).unwrap();
            let b = stab_cp_bisection(&d, AnchorChoice::Value(0.0), &spec, &abs(), &src, 0.1, Some(wide), 1e-4).unwrap();
            let (a, b) = (a.set.intervals[0], b.set.intervals[0]);
            assert!((a.0 - b.0).abs() <= 1e-4 && (a.1 - b.1).abs() <= 1e-4, "{a:?} {b:?}");
            assert!(b.0 <= a.0 && a.1 <= b.1);
        }
    }

    #[test]
    fn bisection_clamps_uninformative_bounds() {
        let d = synthetic(20, 2, 3);
        let src = TauSource::Fixed(StabilityBounds::user_supplied(vec![1e6; 21]).unwrap());
        let r = stab_cp_bisection(&d, AnchorChoice::Value(0.0), &ModelSpec::ridge(1.0), &abs(), &src, 0.1, None, 1e-4).unwrap();
        assert_eq!(r.set.shape, SetShape::WholeRange);
        assert!(r.truncated);
    }

    fn linex() -> ScoreFunction {
        ScoreFunction::custom("linex", 1.0, |q, m| {
            let r = q - m;
            r.exp() - r - 1.0
        })
        .unwrap()
    }

    #[test]
    fn bisection_with_asymmetric_score_matches_dense_scan() {
        let d = TabularDataset::new(
            (0..10).map(|i| vec![1.0, i as f64 / 10.0]).collect(),
            vec![0.3, -0.2, 0.5, 0.1, 0.9, 0.4, 1.2, 0.7, 0.6, 1.0],
            vec![1.0, 0.55],
        )
        .unwrap();
        let spec = ModelSpec::ridge(0.1);
        let score = linex();
        let tau = StabilityBounds::user_supplied(vec![0.05; 11]).unwrap();
        let src = TauSource::Fixed(tau.clone());
        let alpha = 0.15; // (1 - alpha)(n + 1) = 9.35 is not an integer
        let range = (-4.0, 4.0);
        let r = stab_cp_bisection(&d, AnchorChoice::Value(0.5), &spec, &score, &src, alpha, Some(range), 1e-4).unwrap();
        let (lo, hi) = r.set.intervals[0];

        let fit = AnchorFit::new(&d, 0.5, &spec, &score).unwrap();
        let grid = linspace(range.0, range.1, 100_000);
        let kept: Vec<bool> = grid
            .iter()
            .map(|&z| meets_level(pi_bounds(z, &fit, &tau, &score).unwrap().up, alpha))
            .collect();
        let scan = merge_kept(&grid, &kept);
        assert_eq!(scan.len(), 1);
        let step = grid[1] - grid[0];
        assert!((scan[0].0 - lo).abs() <= 1e-4 + step, "{scan:?} vs {lo}");
        assert!((scan[0].1 - hi).abs() <= 1e-4 + step, "{scan:?} vs {hi}");
        assert!(hi - r.set.intervals[0].0 > 0.0);
        // Asymmetric around the anchor prediction.
        let mu = fit.test_prediction;
        assert!(((hi - mu) - (mu - lo)).abs() > 0.1);
    }

    #[test]
    fn quantile_form_agrees_with_upper_bound_off_integers() {
        let d = synthetic(24, 3, 6);
        let spec = ModelSpec::ridge(1.0);
        let fit = AnchorFit::new(&d, 0.0, &spec, &abs()).unwrap();
        let tau = StabilityBounds::user_supplied(vec![0.2; 25]).unwrap();
        let alpha = 0.13; // 0.87 * 25 = 21.75
        let q = upper_quantile(&fit, &tau, alpha).unwrap().unwrap();
        for z in linspace(-8.0, 8.0, 2001) {
            let lt = fit.test_score(z, &abs()) - tau.test_tau();
            let b = pi_bounds(z, &fit, &tau, &abs()).unwrap();
            if (lt - q).abs() > 1e-12 {
                assert_eq!(lt <= q, meets_level(b.up, alpha), "z = {z}");
            }
        }
    }

    #[test]
    fn batch_bounds_properties() {
        let d = synthetic(30, 100, 7);
        let spec = ModelSpec::lad_ridge(0.5);
        let z_range = d.target_range();
        let anchors: Vec<AnchorFit> = [0.0, z_range.0 * 0.5, z_range.1 * 0.5]
            .iter()
            .map(|&a| AnchorFit::new(&d, a, &spec, &abs()).unwrap())
            .collect();
        let tau = resolve_tau(&TauSource::Auto, &spec, &anchors[0].fit, &d, &abs(), z_range).unwrap();
        assert!(batch_pi_bounds(0.0, &[], &tau, &abs()).is_err());
        for z in linspace(z_range.0, z_range.1, 50) {
            let single = pi_bounds(z, &anchors[0], &tau, &abs()).unwrap();
            assert_eq!(batch_pi_bounds(z, &anchors[..1], &tau, &abs()).unwrap(), single);
            let dup = [anchors[0].clone(), anchors[0].clone()];
            assert_eq!(batch_pi_bounds(z, &dup, &tau, &abs()).unwrap(), single);
            let batch = batch_pi_bounds(z, &anchors, &tau, &abs()).unwrap();
            assert!(batch.gap <= single.gap);
        }
    }

    #[test]
    fn batch_cp_contains_grid_oracle() {
        let d = synthetic(40, 5, 9);
        let spec = ModelSpec::ridge(1.0);
        let grid = linspace(d.target_range().0, d.target_range().1, 200);
        let r = batch_cp(&d, &[-1.0, 0.0, 1.0], &spec, &abs(), &TauSource::LinearExact, 0.1, &grid).unwrap();
        assert_eq!(r.fit_count, 3);
        let exact = conformal_set_grid(&d, &spec, &abs(), 0.1, &grid).unwrap();
        assert!(exact.is_subset_of(&r.set));
    }

    #[test]
    fn interpolated_bounds_at_the_anchor() {
        let d = synthetic(20, 3, 10);
        let spec = ModelSpec::lad_ridge(0.5);
        let (lo, hi) = d.target_range();
        let model = build_interpolated_model(&d, &[0.0], lo, hi, &spec).unwrap();
        let fit = AnchorFit::from_fit(&d, model.knot_models()[1].clone(), &abs()).unwrap();
        let base = resolve_tau(&TauSource::Auto, &spec, &fit.fit, &d, &abs(), (lo, hi)).unwrap();
        let tilde = tau_interpolated(&base, 1.0).unwrap();
        let interp = interpolated_pi_bounds(&d, &model, &tilde, &abs(), 0.0).unwrap();
        let direct = pi_bounds(0.0, &fit, &base.scaled(3.0).unwrap(), &abs()).unwrap();
        assert_eq!(interp, direct);
    }

    #[test]
    fn interpolated_ridge_with_zero_tau_is_exact() {
        let d = synthetic(25, 4, 11);
        let spec = ModelSpec::ridge(0.7);
        let (lo, hi) = d.target_range();
        let model = build_interpolated_model(&d, &[0.5 * (lo + hi)], lo, hi, &spec).unwrap();
        let zero = StabilityBounds::zeros(25);
        for z in linspace(lo, hi, 60) {
            let b = interpolated_pi_bounds(&d, &model, &zero, &abs(), z).unwrap();
            let exact = pi_exact(&d, z, &spec, &abs()).unwrap();
            // Interpolation matches the refit to round-off; skip near-ties.
            let fit = spec.fit(&d, z).unwrap();
            let s = conformity_scores(&d, z, &fit, &abs()).unwrap();
            let tie = s[..25].iter().any(|e| (e - s[25]).abs() < 1e-9);
            if !tie {
                assert_eq!((b.lo, b.up), (exact, exact), "z = {z}");
            }
        }
    }

    #[test]
    fn interpolated_set_contains_grid_oracle() {
        let d = synthetic(30, 5, 12);
        let spec = ModelSpec::ridge(1.0);
        let (lo, hi) = d.target_range();
        let model = build_interpolated_model(&d, &[-0.5, 0.5], lo, hi, &spec).unwrap();
        let fit = AnchorFit::from_fit(&d, model.knot_models()[1].clone(), &abs()).unwrap();
        let base = resolve_tau(&TauSource::LinearExact, &spec, &fit.fit, &d, &abs(), (lo, hi)).unwrap();
        let tilde = tau_interpolated(&base, 1.0).unwrap();
        let grid = linspace(lo, hi, 200);
        let r = interpolated_cp(&d, &model, &tilde, &abs(), 0.1, &grid).unwrap();
        assert_eq!(r.fit_count, 4);
        let exact = conformal_set_grid(&d, &spec, &abs(), 0.1, &grid).unwrap();
        assert!(exact.is_subset_of(&r.set));
    }

    fn split_fixture(cal: &[f64]) -> TabularDataset {
        let mut targets = vec![0.0];
        targets.extend_from_slice(cal);
        let rows = vec![vec![1.0]; targets.len()];
        TabularDataset::new(rows, targets, vec![1.0]).unwrap()
    }

    #[test]
    fn split_quantile_example() {
        let cal: Vec<f64> = (1..=9).map(f64::from).collect();
        let d = split_fixture(&cal);
        let spec = ModelSpec::Constant { value: 0.0 };
        let r = split_cp(&d, 1, &spec, &abs(), 0.1, Some((-20.0, 20.0))).unwrap();
        assert_eq!(r.set.intervals, vec![(-9.0, 9.0)]);
        assert_eq!(r.fit_count, 1);
        // Direct indicator evaluation with the candidate's own score counted.
        for z in linspace(-12.0, 12.0, 241) {
            let e = z.abs();
            let count = 1 + cal.iter().filter(|&&c| c <= e).count();
            let accepted = count as f64 <= 0.9 * 10.0;
            if (e - 9.0).abs() > 1e-9 {
                assert_eq!(accepted, r.set.contains(z), "z = {z}");
            }
        }
    }

    #[test]
    fn split_ties_and_errors() {
        let d = split_fixture(&[2.5; 9]);
        let spec = ModelSpec::Constant { value: 1.0 };
        for alpha in [0.1, 0.3, 0.5] {
            let r = split_cp(&d, 1, &spec, &abs(), alpha, None).unwrap();
            assert_eq!(r.set.intervals, vec![(-0.5, 2.5)]);
        }
        assert!(split_cp(&d, 10, &spec, &abs(), 0.1, None).is_err());
        assert!(split_cp(&d, 0, &spec, &abs(), 0.1, None).is_err());
    }

    #[test]
    fn oracle_equals_zero_tau_limit() {
        let d = synthetic(30, 4, 13);
        let y = d.test_target().unwrap();
        let spec = ModelSpec::ridge(1.0);
        let r = oracle_cp(&d, y, &spec, &abs(), 0.1, None).unwrap();
        let fit = AnchorFit::new(&d, y, &spec, &abs()).unwrap();
        let limit = stab_cp_closed_form(&fit, &StabilityBounds::zeros(30), 0.1, d.target_range()).unwrap();
        assert_eq!(r.set.intervals, limit.intervals);
        assert_eq!(r.fit_count, 1);
        let any_tau = stab_cp_interval(&d, AnchorChoice::Value(y), &spec, &abs(), &TauSource::Auto, 0.1, None).unwrap();
        assert!(r.set.is_subset_of(&any_tau.set));
    }

    #[test]
    fn oracle_with_constant_model_is_centered() {
        let d = synthetic(20, 2, 14);
        let r = oracle_cp(&d, 0.0, &ModelSpec::Constant { value: 3.0 }, &abs(), 0.2, None).unwrap();
        let (lo, hi) = r.set.intervals[0];
        assert!((0.5 * (lo + hi) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn root_matches_grid() {
        let d = synthetic(50, 5, 15);
        let spec = ModelSpec::ridge(1.0);
        let range = d.target_range();
        let grid = linspace(range.0, range.1, 200);
        let step = grid[1] - grid[0];
        let root = root_cp(&d, &spec, &abs(), 0.1, Some(range), 1e-4).unwrap();
        let g = grid_cp(&d, &spec, &abs(), 0.1, &grid).unwrap();
        assert_eq!(g.fit_count, 200);
        let (a, b) = (root.set.hull().unwrap(), g.set.hull().unwrap());
        let tol = step.max(1e-4) + 1e-12;
        assert!((a.0 - b.0).abs() <= tol && (a.1 - b.1).abs() <= tol, "{a:?} {b:?}");
        assert_eq!(root.fit_count, root.evaluations);
        assert!(root.fit_count > 20);
    }

    #[test]
    fn root_is_empty_for_large_alpha() {
        let d = synthetic(50, 5, 16);
        let r = root_cp(&d, &ModelSpec::ridge(1.0), &abs(), 0.99, None, 1e-4).unwrap();
        assert!(r.set.is_empty());
        assert_eq!(r.fit_count, PROBE_POINTS);
    }

    #[test]
    fn gap_profile_sandwich_and_zero_tau() {
        let d = synthetic(30, 5, 17);
        let spec = ModelSpec::ridge(1.0);
        let fit = AnchorFit::new(&d, 0.0, &spec, &abs()).unwrap();
        let grid = linspace(d.target_range().0, d.target_range().1, 100);
        let tau = resolve_tau(&TauSource::LinearExact, &spec, &fit.fit, &d, &abs(), d.target_range()).unwrap();
        for g in gap_profile(&d, &fit, &spec, &abs(), &tau, &grid).unwrap() {
            assert!(g.lo <= g.exact && g.exact <= g.up, "{g:?}");
        }
        let zero = StabilityBounds::zeros(30);
        for g in gap_profile(&d, &fit, &spec, &abs(), &zero, &grid).unwrap() {
            assert_eq!(g.lo, g.up);
        }
    }

    #[test]
    fn exact_set_is_inside_stable_set() {
        for seed in 0..5 {
            let d = synthetic(40, 4, 100 + seed);
            let spec = ModelSpec::ridge(1.0);
            let grid = linspace(d.target_range().0, d.target_range().1, 200);
            let exact = conformal_set_grid(&d, &spec, &abs(), 0.1, &grid).unwrap();
            let stab = stab_cp_interval(&d, AnchorChoice::ObservedFit, &spec, &abs(), &TauSource::Auto, 0.1, None).unwrap();
            assert!(exact.is_subset_of(&stab.set));
        }
    }

    #[test]
    fn rank_based_exact_matches_self_counted_threshold() {
        // pi(z) >= alpha iff rank <= (1 - alpha)(n + 1).
        let d = synthetic(19, 2, 18);
        let spec = ModelSpec::ridge(1.0);
        for z in linspace(-3.0, 3.0, 31) {
            let fit = spec.fit(&d, z).unwrap();
            let s = conformity_scores(&d, z, &fit, &abs()).unwrap();
            let r = rank(&s, 19).unwrap();
            let pi = pi_exact(&d, z, &spec, &abs()).unwrap();
            assert_eq!(meets_level(pi, 0.1), r as f64 <= 0.9 * 20.0 + 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn observed_sum_form_matches_full_sum(scores in proptest::collection::vec(0.0f64..5.0, 2..30),
                                              t in 0.001f64..1.0, s in 0.0f64..6.0) {
            let tau = vec![t; scores.len() + 1];
            let full = pi_bounds_from_scores(&scores, s, &tau).unwrap();
            prop_assert_eq!(full.up, pi_up_observed_sum(&scores, s, &tau).unwrap());
            prop_assert!(0.0 <= full.lo && full.lo <= full.up && full.up <= 1.0);
        }

        #[test]
        fn closed_form_is_monotone(scores in proptest::collection::vec(0.0f64..5.0, 5..30),
                                   t in 0.01f64..1.0, bump in 0.0f64..1.0,
                                   a1 in 0.01f64..0.5, da in 0.0f64..0.4) {
            let n = scores.len();
            let fit = manual_anchor(scores, 0.0);
            let range = (-100.0, 100.0);
            let tau = StabilityBounds::user_supplied(vec![t; n + 1]).unwrap();
            let wider = StabilityBounds::user_supplied(vec![t + bump; n + 1]).unwrap();
            let base = stab_cp_closed_form(&fit, &tau, a1, range).unwrap();
            let big_tau = stab_cp_closed_form(&fit, &wider, a1, range).unwrap();
            let big_alpha = stab_cp_closed_form(&fit, &tau, a1 + da, range).unwrap();
            prop_assert!(base.is_subset_of(&big_tau) || big_tau.shape == SetShape::WholeRange);
            prop_assert!(big_alpha.is_subset_of(&base) || base.shape == SetShape::WholeRange);
        }
    }

    #[test]
    fn split_conformity_ranks_among_calibration_scores() {
        let d = gen_linear_gaussian(&GeneratorSpec {
            kind: GeneratorKind::LinearGaussian,
            n: 41,
            p: 3,
            noise_sd: 1.0,
            seed: 4,
        })
        .unwrap()
        .dataset;
        let spec = ModelSpec::ridge(1.0);
        let score = ScoreFunction::absolute_residual();
        let alpha = 0.25;
        let report = split_cp(&d, 20, &spec, &score, alpha, None).unwrap();
        let (lo, hi) = report.set.hull().unwrap();
        let grid = linspace(lo - 1.0, hi + 1.0, 501);
        let pi = split_conformity(&d, 20, &spec, &score, &grid).unwrap();

        let model = spec
            .fit_rows(&d.features()[..20 * 3], 3, &d.targets()[..20])
            .unwrap();
        let mu = model.predict(d.test_point()).unwrap();
        for (z, v) in grid.iter().zip(&pi) {
            let mut values: Vec<f64> = (20..41)
                .map(|i| (d.targets()[i] - model.predict(d.row(i)).unwrap()).abs())
                .collect();
            values.push((z - mu).abs());
            let r = rank(&values, 21).unwrap();
            assert_eq!(*v, 1.0 - r as f64 / 22.0);
            // The level set never leaves the split interval.
            if meets_level(*v, alpha) {
                assert!(*z >= lo && *z <= hi, "z={z}");
            }
        }
    }
}

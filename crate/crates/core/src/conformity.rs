//! Rank statistics, conformity scores and the exact conformity function.
//!
//! The exact conformity of a candidate `z` is
//! `pi(z) = 1 - rank(E_{n+1}(z)) / (n+1)` where the scores are computed from
//! a model refitted on the augmented data and ranks count ties with `<=`
//! (self included). Evaluating it on a grid gives the exact conformal set up
//! to grid resolution, which is the oracle every faster method is checked
//! against.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::error::{invalid, Error, Result};
use crate::models::{ModelSpec, Predictor};

type ScoreFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum ScoreKind {
    /// `S(q, m) = |q - m|`
    AbsoluteResidual,
    Custom { name: String, func: Arc<ScoreFn> },
}

/// Conformity score `S(q, m)` comparing a target `q` with a prediction `m`,
/// together with its Lipschitz constant in `m`.
#[derive(Clone)]
pub struct ScoreFunction {
    kind: ScoreKind,
    gamma: f64,
}

impl fmt::Debug for ScoreFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoreFunction")
            .field("kind", &self.name())
            .field("gamma", &self.gamma)
            .finish()
    }
}

impl ScoreFunction {
    pub fn absolute_residual() -> Self {
        Self {
            kind: ScoreKind::AbsoluteResidual,
            gamma: 1.0,
        }
    }

    /// A user score. `gamma` must be a Lipschitz constant of `m -> S(q, m)`
    /// for every `q`; stability bounds scale with it.
    pub fn custom<F>(name: impl Into<String>, gamma: f64, func: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(invalid("score Lipschitz constant must be finite and nonnegative"));
        }
        Ok(Self {
            kind: ScoreKind::Custom {
                name: name.into(),
                func: Arc::new(func),
            },
            gamma,
        })
    }

    pub fn kind(&self) -> &ScoreKind {
        &self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            ScoreKind::AbsoluteResidual => "absolute-residual",
            ScoreKind::Custom { name, .. } => name,
        }
    }

    pub fn is_absolute_residual(&self) -> bool {
        matches!(self.kind, ScoreKind::AbsoluteResidual)
    }

    #[inline]
    pub fn evaluate(&self, target: f64, prediction: f64) -> f64 {
        match &self.kind {
            ScoreKind::AbsoluteResidual => (target - prediction).abs(),
            ScoreKind::Custom { func, .. } => func(target, prediction),
        }
    }
}

/// Rank of `values[index]`: the number of entries `<=` it, itself included.
pub fn rank(values: &[f64], index: usize) -> Result<usize> {
    if index >= values.len() {
        return Err(invalid(format!(
            "rank index {index} out of range for {} values",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("rank requires finite values"));
    }
    let pivot = values[index];
    Ok(values.iter().filter(|&&v| v <= pivot).count())
}

/// `1 - count / m`. Every conformity value in the crate goes through this so
/// that equal counts give bit-identical values.
#[inline]
pub fn pi_from_count(count: usize, m: usize) -> f64 {
    1.0 - count as f64 / m as f64
}

/// `pi >= alpha` with a `1e-12` allowance, so that `1 - k/m` compares as it
/// would in exact arithmetic (`1 - 18/20` is below `0.1` in floating point).
#[inline]
pub fn meets_level(pi: f64, alpha: f64) -> bool {
    pi >= alpha - 1e-12
}

/// Scores `E_i(z) = S(y_i, mu_z(x_i))` for `i < n` and
/// `E_{n+1}(z) = S(z, mu_z(x_{n+1}))`.
pub fn conformity_scores(
    dataset: &TabularDataset,
    candidate: f64,
    model: &dyn Predictor,
    score: &ScoreFunction,
) -> Result<Vec<f64>> {
    match model.fitted_candidate() {
        Some(z) if z == candidate => {}
        Some(z) => {
            return Err(Error::State(format!(
                "model was fitted at candidate {z}, scores requested at {candidate}"
            )))
        }
        None => {
            return Err(Error::State(
                "model was not fitted on augmented data".to_string(),
            ))
        }
    }
    let n = dataset.n();
    let mut scores = Vec::with_capacity(n + 1);
    for (i, &y) in dataset.targets().iter().enumerate() {
        scores.push(score.evaluate(y, model.predict(dataset.row(i))?));
    }
    scores.push(score.evaluate(candidate, model.predict(dataset.test_point())?));
    Ok(scores)
}

/// Exact conformity of one candidate together with the rank it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactConformity {
    pub candidate: f64,
    /// Rank of `E_{n+1}(z)` among the n+1 scores.
    pub rank: usize,
    pub pi: f64,
}

pub fn pi_exact_detail(
    dataset: &TabularDataset,
    candidate: f64,
    model_spec: &ModelSpec,
    score: &ScoreFunction,
) -> Result<ExactConformity> {
    let model = model_spec.fit(dataset, candidate)?;
    let scores = conformity_scores(dataset, candidate, &model, score)?;
    let r = rank(&scores, dataset.n())?;
    Ok(ExactConformity {
        candidate,
        rank: r,
        pi: pi_from_count(r, dataset.n() + 1),
    })
}

/// Refits `model_spec` on `D_{n+1}(candidate)` and returns `pi(candidate)`.
pub fn pi_exact(
    dataset: &TabularDataset,
    candidate: f64,
    model_spec: &ModelSpec,
    score: &ScoreFunction,
) -> Result<f64> {
    pi_exact_detail(dataset, candidate, model_spec, score).map(|e| e.pi)
}

/// Tag identifying which procedure produced a prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    StabCp,
    StabCpBisection,
    BatchCp,
    InterpCp,
    SplitCp,
    OracleCp,
    RootCp,
    GridCp,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::StabCp,
        Method::StabCpBisection,
        Method::BatchCp,
        Method::InterpCp,
        Method::SplitCp,
        Method::OracleCp,
        Method::RootCp,
        Method::GridCp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::StabCp => "stabcp",
            Method::StabCpBisection => "stabcpbisection",
            Method::BatchCp => "batchcp",
            Method::InterpCp => "interpcp",
            Method::SplitCp => "splitcp",
            Method::OracleCp => "oraclecp",
            Method::RootCp => "rootcp",
            Method::GridCp => "gridcp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == lower)
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetShape {
    Interval,
    UnionOfIntervals,
    WholeRange,
    Empty,
}

/// A conformal prediction set: sorted, disjoint, closed intervals in target
/// units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub shape: SetShape,
    pub intervals: Vec<(f64, f64)>,
    pub method: Method,
    pub alpha: f64,
    /// Candidate range `[z_min, z_max]` for whole-range sets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
}

impl PredictionSet {
    /// Builds a set from arbitrary closed intervals, sorting and merging any
    /// that overlap or touch.
    pub fn from_intervals(method: Method, alpha: f64, mut intervals: Vec<(f64, f64)>) -> Self {
        intervals.retain(|(lo, hi)| lo <= hi);
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for (lo, hi) in intervals {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        let shape = match merged.len() {
            0 => SetShape::Empty,
            1 => SetShape::Interval,
            _ => SetShape::UnionOfIntervals,
        };
        Self {
            shape,
            intervals: merged,
            method,
            alpha,
            range: None,
        }
    }

    pub fn interval(method: Method, alpha: f64, lo: f64, hi: f64) -> Self {
        Self::from_intervals(method, alpha, vec![(lo, hi)])
    }

    pub fn empty(method: Method, alpha: f64) -> Self {
        Self::from_intervals(method, alpha, Vec::new())
    }

    pub fn whole_range(method: Method, alpha: f64, range: (f64, f64)) -> Self {
        Self {
            shape: SetShape::WholeRange,
            intervals: vec![range],
            method,
            alpha,
            range: Some(range),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, z: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= z && z <= hi)
    }

    /// Total Lebesgue length.
    pub fn length(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }

    /// Smallest interval containing the set.
    pub fn hull(&self) -> Option<(f64, f64)> {
        Some((self.intervals.first()?.0, self.intervals.last()?.1))
    }

    /// Every interval of `self` lies inside a single interval of `other`.
    pub fn is_subset_of(&self, other: &PredictionSet) -> bool {
        self.intervals.iter().all(|&(lo, hi)| {
            other
                .intervals
                .iter()
                .any(|&(olo, ohi)| olo <= lo && hi <= ohi)
        })
    }
}

/// `k` equally spaced points on `[lo, hi]`, both ends included.
pub fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (k - 1) as f64;
            (0..k)
                .map(|i| if i == k - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

pub const DEFAULT_GRID_SIZE: usize = 200;

/// The verification grid: equally spaced points on `[y_(1), y_(n)]`.
pub fn default_grid(dataset: &TabularDataset, size: usize) -> Vec<f64> {
    let (lo, hi) = dataset.target_range();
    linspace(lo, hi, size)
}

/// Collapses runs of consecutive kept grid points into `[first, last]`
/// intervals.
pub fn merge_kept(grid: &[f64], kept: &[bool]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &k) in kept.iter().enumerate() {
        match (k, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((grid[s], grid[i - 1]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((grid[s], grid[kept.len() - 1]));
    }
    out
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("grid is empty"));
    }
    if grid.iter().any(|z| !z.is_finite()) {
        return Err(invalid("grid contains non-finite values"));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("grid must be sorted ascending"));
    }
    Ok(())
}

/// Exact conformal set on a grid: one refit per grid point, keeping the
/// points with `pi(z) >= alpha`.
pub fn conformal_set_grid(
    dataset: &TabularDataset,
    model_spec: &ModelSpec,
    score: &ScoreFunction,
    alpha: f64,
    grid: &[f64],
) -> Result<PredictionSet> {
    check_alpha(alpha)?;
    check_grid(grid)?;
    let kept = grid
        .iter()
        .map(|&z| pi_exact(dataset, z, model_spec, score).map(|pi| meets_level(pi, alpha)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionSet::from_intervals(
        Method::GridCp,
        alpha,
        merge_kept(grid, &kept),
    ))
}

//! Repeated-evaluation protocol: coverage, set length, fit counts and time
//! for several methods over many datasets.
//!
//! Generated data is redrawn for every repetition; a fixed table is permuted
//! and its last row held out instead. Repetitions run on a rayon pool and are
//! reduced in repetition order, so results do not depend on scheduling.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{
    batch_cp, grid_cp, interpolated_cp, oracle_cp, resolve_range, root_cp, split_cp,
    stab_cp_bisection, stab_cp_interval, AnchorChoice, AnchorFit, MethodReport, DEFAULT_EPS_R,
};
use crate::conformity::{linspace, Method, ScoreFunction, DEFAULT_GRID_SIZE};
use crate::data::{generate, split, standardize, GeneratorSpec, LabeledTable};
use crate::dataset::TabularDataset;
use crate::error::{invalid, Error, Result};
use crate::models::{build_interpolated_model, ModelSpec};
use crate::stability::{resolve_tau, tau_interpolated, StabilityBounds, TauSource};

pub const REPORT_SCHEMA: &str = "stabcp.benchmark/v1";

/// Serializable counterpart of [`TauSource`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TauChoice {
    Auto,
    LinearExact,
    SgdHeuristic { n_iter: usize },
    Fixed { bounds: StabilityBounds },
}

impl TauChoice {
    pub fn source(&self) -> TauSource {
        match self {
            TauChoice::Auto => TauSource::Auto,
            TauChoice::LinearExact => TauSource::LinearExact,
            TauChoice::SgdHeuristic { n_iter } => TauSource::SgdHeuristic { n_iter: *n_iter },
            TauChoice::Fixed { bounds } => TauSource::Fixed(bounds.clone()),
        }
    }

    pub fn is_heuristic(&self) -> bool {
        match self {
            TauChoice::SgdHeuristic { .. } => true,
            TauChoice::Fixed { bounds } => !bounds.coverage_safe(),
            _ => false,
        }
    }
}

/// Everything a method needs besides the data. The score is always the
/// absolute residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub model: ModelSpec,
    pub alpha: f64,
    pub tau: TauChoice,
    pub anchor: AnchorChoice,
    pub eps_r: f64,
    pub grid_size: usize,
    pub split_fraction: f64,
    /// Interior anchors for the batch and interpolated methods.
    pub batch_anchors: usize,
    /// Candidate range; `[y_(1), y_(n)]` when absent.
    pub range: Option<(f64, f64)>,
    pub allow_unsafe_tau: bool,
}

impl MethodParams {
    pub fn new(model: ModelSpec) -> Self {
        Self {
            model,
            alpha: 0.1,
            tau: TauChoice::Auto,
            anchor: AnchorChoice::ObservedFit,
            eps_r: DEFAULT_EPS_R,
            grid_size: DEFAULT_GRID_SIZE,
            split_fraction: 0.5,
            batch_anchors: 3,
            range: None,
            allow_unsafe_tau: false,
        }
    }
}

/// `k` anchors splitting `[lo, hi]` into `k + 1` equal parts.
fn interior_points(range: (f64, f64), k: usize) -> Vec<f64> {
    let pts = linspace(range.0, range.1, k + 2);
    pts[1..pts.len() - 1].to_vec()
}

/// Runs one method. `seed` drives the split of split conformal.
pub fn run_method(
    method: Method,
    dataset: &TabularDataset,
    params: &MethodParams,
    seed: u64,
) -> Result<MethodReport> {
    if params.tau.is_heuristic() && !params.allow_unsafe_tau {
        return Err(invalid(
            "heuristic stability bounds carry no coverage guarantee; allow them explicitly",
        ));
    }
    let score = ScoreFunction::absolute_residual();
    let source = params.tau.source();
    let spec = &params.model;
    let alpha = params.alpha;
    let range = resolve_range(dataset, params.range)?;
    let grid = || linspace(range.0, range.1, params.grid_size);
    if params.grid_size < 2 {
        return Err(invalid("grid size must be at least 2"));
    }
    match method {
        Method::StabCp => {
            stab_cp_interval(dataset, params.anchor, spec, &score, &source, alpha, Some(range))
        }
        Method::StabCpBisection => stab_cp_bisection(
            dataset,
            params.anchor,
            spec,
            &score,
            &source,
            alpha,
            Some(range),
            params.eps_r,
        ),
        Method::BatchCp => {
            let anchors = interior_points(range, params.batch_anchors.max(1));
            batch_cp(dataset, &anchors, spec, &score, &source, alpha, &grid())
        }
        Method::InterpCp => {
            if range.0 >= range.1 {
                return Err(invalid("interpolation needs a nondegenerate range"));
            }
            let anchors = interior_points(range, params.batch_anchors.max(1));
            let model = build_interpolated_model(dataset, &anchors, range.0, range.1, spec)?;
            let knot = AnchorFit::from_fit(dataset, model.knot_models()[1].clone(), &score)?;
            let base = resolve_tau(&source, spec, &knot.fit, dataset, &score, range)?;
            let tilde = tau_interpolated(&base, score.gamma())?;
            interpolated_cp(dataset, &model, &tilde, &score, alpha, &grid())
        }
        Method::SplitCp => {
            let parts = split(dataset, params.split_fraction, seed)?;
            let ordered = dataset.select_rows(&parts.order())?;
            split_cp(&ordered, parts.train.len(), spec, &score, alpha, Some(range))
        }
        Method::OracleCp => {
            let truth = dataset
                .test_target()
                .ok_or_else(|| invalid("oracle conformal needs the true test target"))?;
            oracle_cp(dataset, truth, spec, &score, alpha, Some(range))
        }
        Method::RootCp => root_cp(dataset, spec, &score, alpha, Some(range), params.eps_r),
        Method::GridCp => grid_cp(dataset, spec, &score, alpha, &grid()),
    }
}

/// Where each repetition's dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Redrawn with a fresh seed every repetition.
    Generated { spec: GeneratorSpec },
    /// Permuted every repetition; the last row after permutation is held out.
    Table {
        name: String,
        rows: usize,
        #[serde(skip)]
        table: LabeledTable,
    },
}

impl DataSource {
    pub fn protocol(&self) -> &'static str {
        match self {
            DataSource::Generated { .. } => "redraw",
            DataSource::Table { .. } => "permute",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkConfig {
    pub source: DataSource,
    pub methods: Vec<Method>,
    pub params: MethodParams,
    pub repetitions: usize,
    pub seed: u64,
    /// Standardize features and targets before running; sets are mapped back
    /// to original units.
    pub standardize: bool,
    /// Worker threads; all available cores when absent.
    pub jobs: Option<usize>,
}

/// Seed of repetition `rep`: the first output of stream `rep` of a ChaCha8
/// generator keyed by `seed`.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng.next_u64()
}

/// The dataset of repetition `rep`.
pub fn repetition_dataset(source: &DataSource, rep_seed: u64) -> Result<TabularDataset> {
    match source {
        DataSource::Generated { spec } => Ok(generate(&GeneratorSpec {
            seed: rep_seed,
            ..*spec
        })?
        .dataset),
        DataSource::Table { table, .. } => {
            let mut order: Vec<usize> = (0..table.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(rep_seed));
            let permuted = table.permuted(&order)?;
            permuted.holdout(permuted.len() - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub repetition: usize,
    pub seed: u64,
    pub method: Method,
    pub ok: bool,
    pub covered: Option<bool>,
    pub length: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub fit_count: Option<usize>,
    pub wall_time: Option<f64>,
    pub coverage_safe: Option<bool>,
    pub truncated: Option<bool>,
    pub error: Option<String>,
}

fn record(repetition: usize, seed: u64, method: Method, outcome: Result<MethodReport>) -> RepetitionRecord {
    match outcome {
        Ok(r) => {
            let hull = r.set.hull();
            RepetitionRecord {
                repetition,
                seed,
                method,
                ok: true,
                covered: r.covered,
                length: Some(r.length),
                lower: hull.map(|h| h.0),
                upper: hull.map(|h| h.1),
                fit_count: Some(r.fit_count),
                wall_time: Some(r.wall_time),
                coverage_safe: Some(r.coverage_safe),
                truncated: Some(r.truncated),
                error: None,
            }
        }
        Err(e) => RepetitionRecord {
            repetition,
            seed,
            method,
            ok: false,
            covered: None,
            length: None,
            lower: None,
            upper: None,
            fit_count: None,
            wall_time: None,
            coverage_safe: None,
            truncated: None,
            error: Some(e.to_string()),
        },
    }
}

fn run_repetition(config: &BenchmarkConfig, rep: usize) -> Vec<RepetitionRecord> {
    let seed = repetition_seed(config.seed, rep);
    let data = repetition_dataset(&config.source, seed).and_then(|d| {
        if config.standardize {
            standardize(&d, true).map(|(s, t)| (s, Some((t, d.test_target()))))
        } else {
            Ok((d, None))
        }
    });
    config
        .methods
        .iter()
        .map(|&method| {
            let outcome = data.as_ref().map_err(clone_error).and_then(|(d, transform)| {
                let mut report = run_method(method, d, &config.params, seed)?;
                if let Some((t, truth)) = transform {
                    report.set = t.invert_set(&report.set);
                    report.length = report.set.length();
                    report.covered = truth.map(|y| report.set.contains(y));
                    report.range = (t.inverse_target(report.range.0), t.inverse_target(report.range.1));
                }
                Ok(report)
            });
            record(rep, seed, method, outcome)
        })
        .collect()
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(m.clone()),
        Error::State(m) => Error::State(m.clone()),
        Error::Numerical(m) => Error::Numerical(m.clone()),
        Error::Parse { row, column, message } => Error::Parse {
            row: *row,
            column: column.clone(),
            message: message.clone(),
        },
        other => Error::InvalidInput(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    /// Mean coverage over successful, coverage-safe repetitions.
    pub coverage: Option<f64>,
    pub coverage_repetitions: usize,
    /// Successful repetitions excluded from coverage for heuristic bounds.
    pub unsafe_repetitions: usize,
    pub length: Option<LengthSummary>,
    pub mean_time: Option<f64>,
    /// Mean time divided by the oracle's mean time.
    pub normalized_time: Option<f64>,
    pub fit_count_total: usize,
    pub mean_fit_count: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub schema: &'static str,
    pub repetitions: usize,
    pub seed: u64,
    pub protocol: &'static str,
    pub config: BenchmarkConfig,
    pub methods: Vec<MethodSummary>,
}

/// Linear-interpolation quantile of sorted values.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-method aggregates. Records must be sorted by repetition.
pub fn summarize(methods: &[Method], records: &[RepetitionRecord]) -> Vec<MethodSummary> {
    let mean_time = |m: Method| {
        let times: Vec<f64> = records
            .iter()
            .filter(|r| r.method == m)
            .filter_map(|r| r.wall_time)
            .collect();
        mean(&times)
    };
    let oracle_time = methods
        .contains(&Method::OracleCp)
        .then(|| mean_time(Method::OracleCp))
        .flatten();
    methods
        .iter()
        .map(|&m| {
            let ok: Vec<&RepetitionRecord> =
                records.iter().filter(|r| r.method == m && r.ok).collect();
            let failures = records.iter().filter(|r| r.method == m && !r.ok).count();
            let safe: Vec<f64> = ok
                .iter()
                .filter(|r| r.coverage_safe == Some(true))
                .filter_map(|r| r.covered.map(|c| if c { 1.0 } else { 0.0 }))
                .collect();
            let mut lengths: Vec<f64> = ok.iter().filter_map(|r| r.length).collect();
            lengths.sort_by(f64::total_cmp);
            let length = (!lengths.is_empty()).then(|| LengthSummary {
                mean: mean(&lengths).unwrap_or(f64::NAN),
                q1: quantile_sorted(&lengths, 0.25),
                median: quantile_sorted(&lengths, 0.5),
                q3: quantile_sorted(&lengths, 0.75),
            });
            let fits: Vec<f64> = ok.iter().filter_map(|r| r.fit_count.map(|f| f as f64)).collect();
            let mt = mean_time(m);
            MethodSummary {
                method: m,
                successes: ok.len(),
                failures,
                coverage: mean(&safe),
                coverage_repetitions: safe.len(),
                unsafe_repetitions: ok.iter().filter(|r| r.coverage_safe == Some(false)).count(),
                length,
                mean_time: mt,
                normalized_time: match (mt, oracle_time) {
                    (Some(t), Some(o)) if o > 0.0 => Some(t / o),
                    _ => None,
                },
                fit_count_total: ok.iter().filter_map(|r| r.fit_count).sum(),
                mean_fit_count: mean(&fits),
            }
        })
        .collect()
}

/// Runs every repetition and aggregates. Method failures are recorded, not
/// raised.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<(BenchmarkReport, Vec<RepetitionRecord>)> {
    if config.repetitions == 0 {
        return Err(invalid("repetitions must be at least 1"));
    }
    if config.methods.is_empty() {
        return Err(invalid("no methods selected"));
    }
    if config.params.tau.is_heuristic() && !config.params.allow_unsafe_tau {
        return Err(invalid(
            "heuristic stability bounds carry no coverage guarantee; allow them explicitly",
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.unwrap_or(0))
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let mut records: Vec<RepetitionRecord> = pool.install(|| {
        (0..config.repetitions)
            .into_par_iter()
            .flat_map_iter(|rep| run_repetition(config, rep))
            .collect()
    });
    records.sort_by_key(|r| r.repetition);
    let report = BenchmarkReport {
        schema: REPORT_SCHEMA,
        repetitions: config.repetitions,
        seed: config.seed,
        protocol: config.source.protocol(),
        config: config.clone(),
        methods: summarize(&config.methods, &records),
    };
    Ok((report, records))
}

pub fn write_records_csv(path: &Path, records: &[RepetitionRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

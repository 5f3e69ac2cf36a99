use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use stabcp_core::conformal::{
    pi_bounds, resolve_range, split_conformity, AnchorChoice, AnchorFit, MethodReport,
};
use stabcp_core::conformity::{linspace, meets_level, pi_exact, Method, SetShape};
use stabcp_core::data::{
    dataset_table, generate, load_csv, read_sidecar, save_csv, split, standardize, write_sidecar,
    GeneratorKind, GeneratorSpec, LabeledTable, TargetColumn,
};
use stabcp_core::harness::{
    run_benchmark, run_method, write_records_csv, BenchmarkConfig, DataSource, MethodParams,
    TauChoice,
};
use stabcp_core::stability::{read_tau_csv, resolve_tau};
use stabcp_core::{Error, ModelSpec, ScoreFunction, TabularDataset};

const PREDICT_SCHEMA: &str = "stabcp.predict/v1";
const CURVE_SCHEMA: &str = "stabcp.curve/v1";
const GEN_SCHEMA: &str = "stabcp.gen/v1";

#[derive(Parser)]
#[command(name = "stabcp", version, about = "Stable conformal prediction sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (CSV plus a JSON sidecar).
    Gen(GenArgs),
    /// Compute a prediction set for the held-out row of a dataset.
    Predict(PredictArgs),
    /// Run repeated experiments and aggregate coverage, length and time.
    Benchmark(BenchmarkArgs),
    /// Sweep a grid and emit conformity curves as CSV.
    Curve(CurveArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "linear")]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Sidecar path; defaults to the output path with a `.meta.json` suffix.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Ridge,
    Ladridge,
}

#[derive(Clone, Copy, ValueEnum)]
enum TauKind {
    Auto,
    LinearExact,
    SgdHeuristic,
    File,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "ridge")]
    model: ModelKind,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "auto")]
    tau: TauKind,
    /// Per-observation bounds, one value per line (with `--tau file`).
    #[arg(long)]
    tau_file: Option<PathBuf>,
    /// Epochs assumed by the heuristic bound.
    #[arg(long, default_value_t = 10)]
    sgd_iters: usize,
    /// Accept bounds without a coverage guarantee.
    #[arg(long)]
    allow_unsafe_tau: bool,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Anchor candidate; the observed-data fit prediction when absent.
    #[arg(long)]
    anchor: Option<f64>,
    #[arg(long, default_value_t = stabcp_core::conformal::DEFAULT_EPS_R)]
    eps_r: f64,
    #[arg(long, default_value_t = stabcp_core::conformity::DEFAULT_GRID_SIZE)]
    grid_size: usize,
    #[arg(long, default_value_t = 0.5)]
    split_fraction: f64,
    #[arg(long, allow_hyphen_values = true)]
    range_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    range_max: Option<f64>,
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Target column name; the last column when absent.
    #[arg(long)]
    target: Option<String>,
    /// Row (0-based, header excluded) used as the test point. Taken from the
    /// sidecar when one is given, else the last row.
    #[arg(long)]
    test_row: Option<usize>,
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "stabcp")]
    method: String,
    #[command(flatten)]
    model: ModelArgs,
    /// Held-out target, required by oraclecp.
    #[arg(long, allow_hyphen_values = true)]
    true_target: Option<f64>,
    #[arg(long)]
    standardize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// CSV dataset, permuted every repetition. Synthetic data is redrawn
    /// every repetition when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value = "linear")]
    kind: String,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    p: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',', default_value = "stabcp,splitcp,oraclecp")]
    methods: Vec<String>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "STABCP_JOBS")]
    jobs: Option<usize>,
    #[arg(long)]
    standardize: bool,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-repetition CSV.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Curve(a) => cmd_curve(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) => 1,
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) | Error::Io(_) => 2,
        Error::Numerical(_) | Error::State(_) => 3,
    }
}

fn usage(message: impl Into<String>) -> Error {
    Error::InvalidInput(message.into())
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn default_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

#[derive(Serialize)]
struct GenOutput {
    schema: &'static str,
    data: PathBuf,
    sidecar: PathBuf,
    rows: usize,
    test_row: usize,
}

fn cmd_gen(a: GenArgs) -> Result<(), Error> {
    let spec = GeneratorSpec {
        kind: a.kind.parse::<GeneratorKind>()?,
        n: a.n,
        p: a.p,
        noise_sd: a.noise,
        seed: a.seed,
    };
    let generated = generate(&spec)?;
    let table = dataset_table(&generated.dataset)?;
    save_csv(&a.out, &table)?;
    let sidecar = a.sidecar.unwrap_or_else(|| default_sidecar(&a.out));
    write_sidecar(&sidecar, &generated.metadata)?;
    emit_json(
        &GenOutput {
            schema: GEN_SCHEMA,
            data: a.out,
            sidecar,
            rows: table.len(),
            test_row: generated.metadata.test_row,
        },
        None,
    )
}

fn load_table(a: &DataArgs) -> Result<(LabeledTable, usize), Error> {
    let target = a.target.clone().map_or(TargetColumn::Last, TargetColumn::Name);
    let table = load_csv(&a.data, &target)?;
    if table.len() < 2 {
        return Err(usage("need at least one observation and a test row"));
    }
    let test_row = match (a.test_row, &a.sidecar) {
        (Some(row), _) => row,
        (None, Some(path)) => read_sidecar(path)?.test_row,
        (None, None) => table.len() - 1,
    };
    Ok((table, test_row))
}

fn model_params(a: &ModelArgs) -> Result<MethodParams, Error> {
    let model = match a.model {
        ModelKind::Ridge => ModelSpec::ridge(a.lambda),
        ModelKind::Ladridge => ModelSpec::lad_ridge(a.lambda),
    };
    let tau = match a.tau {
        TauKind::Auto => TauChoice::Auto,
        TauKind::LinearExact => TauChoice::LinearExact,
        TauKind::SgdHeuristic => TauChoice::SgdHeuristic {
            n_iter: a.sgd_iters,
        },
        TauKind::File => {
            let path = a
                .tau_file
                .as_ref()
                .ok_or_else(|| usage("--tau file needs --tau-file"))?;
            TauChoice::Fixed {
                bounds: read_tau_csv(path)?,
            }
        }
    };
    let range = match (a.range_min, a.range_max) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => return Err(usage("--range-min and --range-max go together")),
    };
    Ok(MethodParams {
        alpha: a.alpha,
        tau,
        anchor: a.anchor.map_or(AnchorChoice::ObservedFit, AnchorChoice::Value),
        eps_r: a.eps_r,
        grid_size: a.grid_size,
        split_fraction: a.split_fraction,
        range,
        allow_unsafe_tau: a.allow_unsafe_tau,
        ..MethodParams::new(model)
    })
}

fn shape_name(shape: SetShape) -> &'static str {
    match shape {
        SetShape::Interval => "interval",
        SetShape::UnionOfIntervals => "union",
        SetShape::WholeRange => "whole-range",
        SetShape::Empty => "empty",
    }
}

#[derive(Serialize)]
struct PredictOutput {
    schema: &'static str,
    method: Method,
    model: &'static str,
    alpha: f64,
    shape: &'static str,
    intervals: Vec<(f64, f64)>,
    length: f64,
    fit_count: usize,
    tau_provenance: Option<&'static str>,
    coverage_safe: bool,
    truncated_to_range: bool,
    range: (f64, f64),
    anchor: Option<f64>,
    covered: Option<bool>,
    standardized: bool,
    wall_time: f64,
}

fn cmd_predict(a: PredictArgs) -> Result<(), Error> {
    let method: Method = a.method.parse()?;
    if method == Method::OracleCp && a.true_target.is_none() {
        return Err(usage("oraclecp needs --true-target"));
    }
    let params = model_params(&a.model)?;
    let (table, test_row) = load_table(&a.data)?;
    let mut dataset = table.holdout(test_row)?;
    if let Some(t) = a.true_target {
        dataset = dataset.with_test_target(t);
    }
    let (report, standardized) = if a.standardize {
        let (scaled, transform) = standardize(&dataset, true)?;
        let mut params = params.clone();
        params.range = params.range.map(|(lo, hi)| {
            (transform.forward_target(lo), transform.forward_target(hi))
        });
        if let AnchorChoice::Value(z) = params.anchor {
            params.anchor = AnchorChoice::Value(transform.forward_target(z));
        }
        let mut report = run_method(method, &scaled, &params, a.seed)?;
        report.set = transform.invert_set(&report.set);
        report.length = report.set.length();
        report.covered = dataset.test_target().map(|t| report.set.contains(t));
        report.range = (
            transform.inverse_target(report.range.0),
            transform.inverse_target(report.range.1),
        );
        report.anchor = report.anchor.map(|z| transform.inverse_target(z));
        (report, true)
    } else {
        (run_method(method, &dataset, &params, a.seed)?, false)
    };
    emit_json(
        &predict_output(report, &params, standardized),
        a.out.as_deref(),
    )
}

fn predict_output(r: MethodReport, params: &MethodParams, standardized: bool) -> PredictOutput {
    PredictOutput {
        schema: PREDICT_SCHEMA,
        method: r.set.method,
        model: params.model.name(),
        alpha: r.set.alpha,
        shape: shape_name(r.set.shape),
        intervals: r.set.intervals.clone(),
        length: r.length,
        fit_count: r.fit_count,
        tau_provenance: r.tau_provenance.map(|p| p.as_str()),
        coverage_safe: r.coverage_safe,
        truncated_to_range: r.truncated,
        range: r.range,
        anchor: r.anchor,
        covered: r.covered,
        standardized,
        wall_time: r.wall_time,
    }
}

fn cmd_benchmark(a: BenchmarkArgs) -> Result<(), Error> {
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()?;
    let source = match &a.data {
        Some(path) => {
            let target = a.target.clone().map_or(TargetColumn::Last, TargetColumn::Name);
            let table = load_csv(path, &target)?;
            DataSource::Table {
                name: path.display().to_string(),
                rows: table.len(),
                table,
            }
        }
        None => DataSource::Generated {
            spec: GeneratorSpec {
                kind: a.kind.parse()?,
                n: a.n,
                p: a.p,
                noise_sd: a.noise,
                seed: a.seed,
            },
        },
    };
    if a.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    let config = BenchmarkConfig {
        source,
        methods,
        params: model_params(&a.model)?,
        repetitions: a.reps,
        seed: a.seed,
        standardize: a.standardize,
        jobs: a.jobs,
    };
    let (report, records) = run_benchmark(&config)?;
    if let Some(path) = &a.records {
        write_records_csv(path, &records)?;
    }
    emit_json(&report, a.out.as_deref())
}

#[derive(Serialize)]
struct Crossings {
    lo: Vec<f64>,
    up: Vec<f64>,
    exact: Vec<f64>,
    split: Vec<f64>,
}

#[derive(Serialize)]
struct CurveOutput {
    schema: &'static str,
    alpha: f64,
    anchor: f64,
    tau_provenance: &'static str,
    grid_size: usize,
    range: (f64, f64),
    crossings: Crossings,
}

/// Abscissae where the piecewise-linear curve through the grid points meets
/// the level `alpha`, one per change of `pi >= alpha`.
fn crossings(grid: &[f64], values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 1..grid.len() {
        let (a, b) = (values[k - 1], values[k]);
        if meets_level(a, alpha) != meets_level(b, alpha) {
            let t = if a == b { 0.5 } else { (alpha - a) / (b - a) };
            out.push(grid[k - 1] + t.clamp(0.0, 1.0) * (grid[k] - grid[k - 1]));
        }
    }
    out
}

fn cmd_curve(a: CurveArgs) -> Result<(), Error> {
    let params = model_params(&a.model)?;
    if params.tau.is_heuristic() && !params.allow_unsafe_tau {
        return Err(usage(
            "heuristic stability bounds carry no coverage guarantee; pass --allow-unsafe-tau",
        ));
    }
    let (table, test_row) = load_table(&a.data)?;
    let dataset = table.holdout(test_row)?;
    let score = ScoreFunction::absolute_residual();
    let spec = &params.model;
    let range = resolve_range(&dataset, params.range)?;
    if params.grid_size < 2 {
        return Err(usage("grid size must be at least 2"));
    }
    let grid = linspace(range.0, range.1, params.grid_size);

    let (anchor, _) = params.anchor.resolve(&dataset, spec)?;
    let fit = AnchorFit::new(&dataset, anchor, spec, &score)?;
    let tau = resolve_tau(&params.tau.source(), spec, &fit.fit, &dataset, &score, range)?;
    let parts = split(&dataset, params.split_fraction, a.seed)?;
    let ordered: TabularDataset = dataset.select_rows(&parts.order())?;
    let pi_split = split_conformity(&ordered, parts.train.len(), spec, &score, &grid)?;

    let mut lo = Vec::with_capacity(grid.len());
    let mut up = Vec::with_capacity(grid.len());
    let mut exact = Vec::with_capacity(grid.len());
    for &z in &grid {
        let b = pi_bounds(z, &fit, &tau, &score)?;
        lo.push(b.lo);
        up.push(b.up);
        exact.push(pi_exact(&dataset, z, spec, &score)?);
    }

    let mut rows = csv::Writer::from_writer(Vec::new());
    rows.write_record(["z", "pi_lo", "pi_up", "pi_exact", "pi_split"])
        .map_err(Error::from)?;
    for k in 0..grid.len() {
        rows.serialize((grid[k], lo[k], up[k], exact[k], pi_split[k]))
            .map_err(Error::from)?;
    }
    let bytes = rows
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;

    let summary = CurveOutput {
        schema: CURVE_SCHEMA,
        alpha: params.alpha,
        anchor,
        tau_provenance: tau.provenance().as_str(),
        grid_size: grid.len(),
        range,
        crossings: Crossings {
            lo: crossings(&grid, &lo, params.alpha),
            up: crossings(&grid, &up, params.alpha),
            exact: crossings(&grid, &exact, params.alpha),
            split: crossings(&grid, &pi_split, params.alpha),
        },
    };
    match &a.out {
        Some(path) => {
            std::fs::write(path, &bytes)?;
            emit_json(&summary, None)
        }
        None => {
            std::io::stdout().lock().write_all(&bytes)?;
            let text = serde_json::to_string_pretty(&summary)?;
            eprintln!("{text}");
            Ok(())
        }
    }
}

//! Synthetic generators, CSV ingestion, standardization and splitting.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conformity::PredictionSet;
use crate::dataset::TabularDataset;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    LinearGaussian,
    Friedman1,
}

impl GeneratorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeneratorKind::LinearGaussian => "linear-gaussian",
            GeneratorKind::Friedman1 => "friedman1",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "linear-gaussian" => Ok(GeneratorKind::LinearGaussian),
            "friedman1" | "friedman" => Ok(GeneratorKind::Friedman1),
            _ => Err(invalid(format!("unknown generator '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Observed rows; one more row is drawn as the held-out test point.
    pub n: usize,
    pub p: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if self.p < 1 {
            return Err(invalid("p must be positive"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(invalid(format!(
                "noise_sd must be finite and nonnegative, got {}",
                self.noise_sd
            )));
        }
        if self.kind == GeneratorKind::Friedman1 && self.p < 5 {
            return Err(invalid(format!("friedman1 needs p >= 5, got {}", self.p)));
        }
        Ok(())
    }
}

/// Everything needed to reproduce a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMetadata {
    pub schema: String,
    pub spec: GeneratorSpec,
    /// Zero-based index of the held-out test row in the saved file.
    pub test_row: usize,
    /// Informative coordinates and their coefficients (linear-gaussian).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub informative: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coefficients: Vec<f64>,
}

pub const SIDECAR_SCHEMA: &str = "stabcp.generator/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// n observed rows plus the held-out test point with its true target.
    pub dataset: TabularDataset,
    pub metadata: GeneratorMetadata,
}

pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    match spec.kind {
        GeneratorKind::LinearGaussian => gen_linear_gaussian(spec),
        GeneratorKind::Friedman1 => gen_friedman1(spec),
    }
}

fn noise(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| invalid(e.to_string()))
}

fn assemble(spec: &GeneratorSpec, x: Vec<f64>, y: Vec<f64>) -> Result<TabularDataset> {
    let (n, p) = (spec.n, spec.p);
    let test_point = x[n * p..].to_vec();
    let mut features = x;
    features.truncate(n * p);
    let test_target = y[n];
    Ok(
        TabularDataset::from_row_major(n, p, features, y[..n].to_vec(), test_point)?
            .with_test_target(test_target),
    )
}

/// Standard-normal features, `max(1, round(p/10))` informative coordinates
/// with standard-normal coefficients, additive `N(0, noise_sd^2)` noise.
pub fn gen_linear_gaussian(spec: &GeneratorSpec) -> Result<Generated> {
    let spec = GeneratorSpec {
        kind: GeneratorKind::LinearGaussian,
        ..*spec
    };
    spec.validate()?;
    let (m, p) = (spec.n + 1, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = ((p as f64 / 10.0).round() as usize).max(1);
    let mut informative = sample(&mut rng, p, k).into_vec();
    informative.sort_unstable();
    let coefficients: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let x: Vec<f64> = (0..m * p).map(|_| rng.sample(StandardNormal)).collect();
    let eps = noise(spec.noise_sd)?;
    let y: Vec<f64> = x
        .chunks_exact(p)
        .map(|row| {
            let signal: f64 = informative
                .iter()
                .zip(&coefficients)
                .map(|(&j, c)| row[j] * c)
                .sum();
            signal + eps.sample(&mut rng)
        })
        .collect();
    Ok(Generated {
        dataset: assemble(&spec, x, y)?,
        metadata: GeneratorMetadata {
            schema: SIDECAR_SCHEMA.to_string(),
            spec,
            test_row: spec.n,
            informative,
            coefficients,
        },
    })
}

/// The noiseless Friedman #1 response on the first five coordinates.
pub fn friedman1_response(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
        + 20.0 * (x[2] - 0.5).powi(2)
        + 10.0 * x[3]
        + 5.0 * x[4]
}

/// Features uniform on `[0, 1]`, response `friedman1_response` plus
/// `N(0, noise_sd^2)` noise.
pub fn gen_friedman1(spec: &GeneratorSpec) -> Result<Generated> {
    let spec = GeneratorSpec {
        kind: GeneratorKind::Friedman1,
        ..*spec
    };
    spec.validate()?;
    let (m, p) = (spec.n + 1, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x: Vec<f64> = (0..m * p).map(|_| rng.gen::<f64>()).collect();
    let eps = noise(spec.noise_sd)?;
    let y: Vec<f64> = x
        .chunks_exact(p)
        .map(|row| friedman1_response(row) + eps.sample(&mut rng))
        .collect();
    Ok(Generated {
        dataset: assemble(&spec, x, y)?,
        metadata: GeneratorMetadata {
            schema: SIDECAR_SCHEMA.to_string(),
            spec,
            test_row: spec.n,
            informative: Vec::new(),
            coefficients: Vec::new(),
        },
    })
}

pub fn write_sidecar(path: &Path, metadata: &GeneratorMetadata) -> Result<()> {
    let text = serde_json::to_string_pretty(metadata)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<GeneratorMetadata> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Which CSV column holds the target.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TargetColumn {
    #[default]
    Last,
    Name(String),
}

/// A numeric table with one designated target column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTable {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl LabeledTable {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Uses row `test_row` as the test point, keeping its target as the
    /// held-out truth, and the remaining rows in order as observations.
    pub fn holdout(&self, test_row: usize) -> Result<TabularDataset> {
        if test_row >= self.len() {
            return Err(invalid(format!(
                "test row {test_row} out of range for {} rows",
                self.len()
            )));
        }
        let mut features = Vec::with_capacity(self.len() - 1);
        let mut targets = Vec::with_capacity(self.len() - 1);
        for (i, (row, &y)) in self.features.iter().zip(&self.targets).enumerate() {
            if i != test_row {
                features.push(row.clone());
                targets.push(y);
            }
        }
        Ok(
            TabularDataset::new(features, targets, self.features[test_row].clone())?
                .with_test_target(self.targets[test_row]),
        )
    }

    /// The rows permuted by `order`, which must be a permutation.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() {
            return Err(invalid("permutation length mismatch"));
        }
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(invalid("not a permutation"));
            }
        }
        Ok(Self {
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            features: order.iter().map(|&i| self.features[i].clone()).collect(),
            targets: order.iter().map(|&i| self.targets[i]).collect(),
        })
    }
}

fn parse_error(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Reads a comma-delimited file with a header row. `row` in parse errors is
/// the 1-based line number, the header being line 1.
pub fn load_csv(path: &Path, target: &TargetColumn) -> Result<LabeledTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(parse_error(1, "", "missing header row"));
    }
    if header.iter().all(|h| h.parse::<f64>().is_ok()) {
        return Err(parse_error(1, "", "missing header row: first line is numeric"));
    }
    if header.len() < 2 {
        return Err(parse_error(1, "", "need at least one feature and one target column"));
    }
    let target_idx = match target {
        TargetColumn::Last => header.len() - 1,
        TargetColumn::Name(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("no column named '{name}'")))?,
    };

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record?;
        if record.len() != header.len() {
            return Err(parse_error(
                line,
                "",
                format!("expected {} cells, found {}", header.len(), record.len()),
            ));
        }
        let mut row = Vec::with_capacity(header.len() - 1);
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_error(line, &header[j], format!("non-numeric cell '{cell}'")))?;
            if !v.is_finite() {
                return Err(parse_error(line, &header[j], "non-finite value"));
            }
            if j == target_idx {
                targets.push(v);
            } else {
                row.push(v);
            }
        }
        features.push(row);
    }
    let mut feature_names = header.clone();
    let target_name = feature_names.remove(target_idx);
    Ok(LabeledTable {
        feature_names,
        target_name,
        features,
        targets,
    })
}

/// Writes features then the target as the last column.
pub fn save_csv(path: &Path, table: &LabeledTable) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = table.feature_names.clone();
    header.push(table.target_name.clone());
    writer.write_record(&header)?;
    for (row, y) in table.features.iter().zip(&table.targets) {
        let cells = row.iter().chain(std::iter::once(y)).map(|v| v.to_string());
        writer.write_record(cells)?;
    }
    writer.flush()?;
    Ok(())
}

/// The observed rows followed by the test point, columns `x1..xp, y`. The
/// test row's target is the held-out truth when known and `NaN` otherwise,
/// so it must be known to save.
pub fn dataset_table(dataset: &TabularDataset) -> Result<LabeledTable> {
    let truth = dataset
        .test_target()
        .ok_or_else(|| invalid("saving needs the test point's target"))?;
    let mut targets = dataset.targets().to_vec();
    targets.push(truth);
    Ok(LabeledTable {
        feature_names: (1..=dataset.p()).map(|j| format!("x{j}")).collect(),
        target_name: "y".to_string(),
        features: (0..=dataset.n())
            .map(|i| dataset.augmented_row(i).to_vec())
            .collect(),
        targets,
    })
}

/// Per-column affine maps applied by `standardize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeTransform {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
    /// Zero-variance columns left unchanged.
    pub constant_columns: Vec<usize>,
}

impl StandardizeTransform {
    pub fn forward_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_scale
    }

    pub fn inverse_target(&self, y: f64) -> f64 {
        y * self.target_scale + self.target_mean
    }

    /// Maps a set computed on standardized targets back to original units.
    pub fn invert_set(&self, set: &PredictionSet) -> PredictionSet {
        let map = |(lo, hi): (f64, f64)| (self.inverse_target(lo), self.inverse_target(hi));
        PredictionSet {
            shape: set.shape,
            intervals: set.intervals.iter().copied().map(map).collect(),
            method: set.method,
            alpha: set.alpha,
            range: set.range.map(map),
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let count = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / count;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    (mean, var.sqrt())
}

/// Centers and scales every feature column and the targets to mean 0 and
/// (population) variance 1 using the n observed rows; the test point, and
/// its target if known, get the same map. Zero-variance feature columns are
/// an error unless `allow_constant`, in which case they are left unchanged.
pub fn standardize(
    dataset: &TabularDataset,
    allow_constant: bool,
) -> Result<(TabularDataset, StandardizeTransform)> {
    let (n, p) = (dataset.n(), dataset.p());
    let mut feature_mean = vec![0.0; p];
    let mut feature_scale = vec![1.0; p];
    let mut constant_columns = Vec::new();
    for j in 0..p {
        let (mean, sd) = mean_std((0..n).map(|i| dataset.row(i)[j]));
        if sd == 0.0 {
            if !allow_constant {
                return Err(invalid(format!("feature column {j} has zero variance")));
            }
            constant_columns.push(j);
        } else {
            feature_mean[j] = mean;
            feature_scale[j] = sd;
        }
    }
    let (target_mean, target_scale) = mean_std(dataset.targets().iter().copied());
    if target_scale == 0.0 {
        return Err(invalid("targets have zero variance"));
    }
    let map_row = |row: &[f64]| -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| (v - feature_mean[j]) / feature_scale[j])
            .collect()
    };
    let features: Vec<f64> = (0..n).flat_map(|i| map_row(dataset.row(i))).collect();
    let transform = StandardizeTransform {
        feature_mean: feature_mean.clone(),
        feature_scale: feature_scale.clone(),
        target_mean,
        target_scale,
        constant_columns,
    };
    let targets = dataset
        .targets()
        .iter()
        .map(|&y| transform.forward_target(y))
        .collect();
    let mut out =
        TabularDataset::from_row_major(n, p, features, targets, map_row(dataset.test_point()))?;
    if let Some(t) = dataset.test_target() {
        out = out.with_test_target(transform.forward_target(t));
    }
    Ok((out, transform))
}

/// Row indices of a shuffled train/calibration split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
}

impl Split {
    /// Train rows followed by calibration rows.
    pub fn order(&self) -> Vec<usize> {
        self.train.iter().chain(&self.calibration).copied().collect()
    }
}

/// Shuffles the n observed rows with `seed` and puts the first
/// `round(train_fraction * n)` in the training part.
pub fn split(dataset: &TabularDataset, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = dataset.n();
    let m = (train_fraction * n as f64).round() as usize;
    if m == 0 || m >= n {
        return Err(invalid(format!(
            "split of {n} rows at fraction {train_fraction} leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let calibration = order.split_off(m);
    Ok(Split {
        train: order,
        calibration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformity::Method;

    fn spec(kind: GeneratorKind, n: usize, p: usize, noise_sd: f64, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            kind,
            n,
            p,
            noise_sd,
            seed,
        }
    }

    #[test]
    fn noiseless_single_feature_is_linear() {
        let g = gen_linear_gaussian(&spec(GeneratorKind::LinearGaussian, 20, 1, 0.0, 3)).unwrap();
        let c = g.metadata.coefficients[0];
        assert_eq!(g.metadata.informative, vec![0]);
        for i in 0..=20 {
            let x = g.dataset.augmented_row(i)[0];
            let y = if i < 20 {
                g.dataset.targets()[i]
            } else {
                g.dataset.test_target().unwrap()
            };
            assert_eq!(y, x * c);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        for kind in [GeneratorKind::LinearGaussian, GeneratorKind::Friedman1] {
            let s = spec(kind, 30, 10, 1.0, 42);
            let a = generate(&s).unwrap();
            let b = generate(&s).unwrap();
            assert_eq!(a, b);
            let c = generate(&GeneratorSpec { seed: 43, ..s }).unwrap();
            assert_ne!(a.dataset, c.dataset);
        }
    }

    #[test]
    fn informative_count_is_a_tenth() {
        let g = gen_linear_gaussian(&spec(GeneratorKind::LinearGaussian, 5, 100, 1.0, 1)).unwrap();
        assert_eq!(g.metadata.informative.len(), 10);
        let g = gen_linear_gaussian(&spec(GeneratorKind::LinearGaussian, 5, 4, 1.0, 1)).unwrap();
        assert_eq!(g.metadata.informative.len(), 1);
    }

    #[test]
    fn signal_features_correlate_with_targets() {
        let g = gen_linear_gaussian(&spec(GeneratorKind::LinearGaussian, 300, 20, 1.0, 5)).unwrap();
        let d = &g.dataset;
        for (&j, &c) in g.metadata.informative.iter().zip(&g.metadata.coefficients) {
            let xs: Vec<f64> = (0..300).map(|i| d.row(i)[j]).collect();
            let (mx, sx) = mean_std(xs.iter().copied());
            let (my, sy) = mean_std(d.targets().iter().copied());
            let r = xs
                .iter()
                .zip(d.targets())
                .map(|(x, y)| (x - mx) * (y - my))
                .sum::<f64>()
                / (300.0 * sx * sy);
            // Population correlation is c / sqrt(sum c_k^2 + 1); compare the
            // sign and require significance at about 3 standard errors.
            if c.abs() > 0.3 {
                assert_eq!(r.signum(), c.signum());
                assert!(r.abs() > 3.0 / 300f64.sqrt(), "feature {j}: r = {r}, c = {c}");
            }
        }
    }

    #[test]
    fn friedman_needs_five_features() {
        assert!(gen_friedman1(&spec(GeneratorKind::Friedman1, 10, 4, 1.0, 0)).is_err());
        assert!(gen_friedman1(&spec(GeneratorKind::Friedman1, 10, 5, 1.0, 0)).is_ok());
    }

    #[test]
    fn friedman_ignores_trailing_features() {
        let g = gen_friedman1(&spec(GeneratorKind::Friedman1, 50, 8, 0.0, 2)).unwrap();
        for i in 0..50 {
            let mut row = g.dataset.row(i).to_vec();
            row[5..].reverse();
            row[5] += 0.37;
            assert_eq!(friedman1_response(&row), g.dataset.targets()[i]);
        }
    }

    #[test]
    fn friedman_range_matches_construction() {
        // Noiseless response lies in [0, 30]; 10^4 draws come close to both
        // ends, with the terms bounded by 10, 5, 10 and 5.
        let g = gen_friedman1(&spec(GeneratorKind::Friedman1, 10_000, 5, 0.0, 8)).unwrap();
        let (lo, hi) = g.dataset.target_range();
        assert!(lo >= 0.0 && hi <= 30.0);
        assert!(lo < 3.0 && hi > 25.0, "{lo} {hi}");
    }

    #[test]
    fn kind_names_parse() {
        assert_eq!("linear".parse::<GeneratorKind>().unwrap(), GeneratorKind::LinearGaussian);
        assert_eq!("friedman1".parse::<GeneratorKind>().unwrap(), GeneratorKind::Friedman1);
        assert!("blobs".parse::<GeneratorKind>().is_err());
    }

    #[test]
    fn csv_example_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "a,b\n1,2\n3,4\n").unwrap();
        let t = load_csv(&path, &TargetColumn::Name("b".into())).unwrap();
        assert_eq!(t.features, vec![vec![1.0], vec![3.0]]);
        assert_eq!(t.targets, vec![2.0, 4.0]);

        std::fs::write(&path, "1,2\n3,4\n").unwrap();
        assert!(matches!(load_csv(&path, &TargetColumn::Last), Err(Error::Parse { row: 1, .. })));

        std::fs::write(&path, "a,b\n1,2\n3,x\n").unwrap();
        match load_csv(&path, &TargetColumn::Last) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("{other:?}"),
        }

        std::fs::write(&path, "a,b\n1,NaN\n").unwrap();
        assert!(matches!(load_csv(&path, &TargetColumn::Last), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let g = gen_linear_gaussian(&spec(GeneratorKind::LinearGaussian, 15, 4, 1.0, 11)).unwrap();
        let table = dataset_table(&g.dataset).unwrap();
        save_csv(&path, &table).unwrap();
        let back = load_csv(&path, &TargetColumn::Last).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.holdout(15).unwrap(), g.dataset);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let g = gen_linear_gaussian(&spec(GeneratorKind::LinearGaussian, 15, 30, 1.0, 11)).unwrap();
        write_sidecar(&path, &g.metadata).unwrap();
        assert_eq!(read_sidecar(&path).unwrap(), g.metadata);
    }

    #[test]
    fn standardized_data_is_near_identity() {
        let g = gen_linear_gaussian(&spec(GeneratorKind::LinearGaussian, 50, 3, 1.0, 4)).unwrap();
        let (once, _) = standardize(&g.dataset, false).unwrap();
        let (twice, t) = standardize(&once, false).unwrap();
        for (m, s) in t.feature_mean.iter().zip(&t.feature_scale) {
            assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        }
        assert!(t.target_mean.abs() < 1e-12 && (t.target_scale - 1.0).abs() < 1e-12);
        for (a, b) in once.features().iter().zip(twice.features()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_needs_flag() {
        let d = TabularDataset::new(
            vec![vec![1.0, 2.0], vec![1.0, 4.0], vec![1.0, 9.0]],
            vec![1.0, 2.0, 4.0],
            vec![1.0, 3.0],
        )
        .unwrap();
        assert!(standardize(&d, false).is_err());
        let (s, t) = standardize(&d, true).unwrap();
        assert_eq!(t.constant_columns, vec![0]);
        assert_eq!(s.row(0)[0], 1.0);
        assert_eq!(s.test_point()[0], 1.0);
    }

    #[test]
    fn inverted_set_maps_back() {
        let t = StandardizeTransform {
            feature_mean: vec![],
            feature_scale: vec![],
            target_mean: 3.0,
            target_scale: 2.0,
            constant_columns: vec![],
        };
        let s = PredictionSet::interval(Method::StabCp, 0.1, -1.0, 1.0);
        assert_eq!(t.invert_set(&s).intervals, vec![(1.0, 5.0)]);
        assert_eq!(t.inverse_target(t.forward_target(7.5)), 7.5);
    }

    #[test]
    fn split_examples() {
        let g = gen_linear_gaussian(&spec(GeneratorKind::LinearGaussian, 10, 2, 1.0, 4)).unwrap();
        let s = split(&g.dataset, 0.5, 9).unwrap();
        assert_eq!((s.train.len(), s.calibration.len()), (5, 5));
        let mut all = s.order();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split(&g.dataset, 0.5, 9).unwrap(), s);
        assert!(split(&g.dataset, 0.01, 9).is_err());
        assert!(split(&g.dataset, 1.0, 9).is_err());
    }

    #[test]
    fn holdout_and_permutation() {
        let t = LabeledTable {
            feature_names: vec!["a".into()],
            target_name: "y".into(),
            features: vec![vec![1.0], vec![2.0], vec![3.0]],
            targets: vec![10.0, 20.0, 30.0],
        };
        let d = t.holdout(1).unwrap();
        assert_eq!(d.targets(), &[10.0, 30.0]);
        assert_eq!(d.test_point(), &[2.0]);
        assert_eq!(d.test_target(), Some(20.0));
        assert!(t.holdout(3).is_err());
        assert_eq!(t.permuted(&[2, 0, 1]).unwrap().targets, vec![30.0, 10.0, 20.0]);
        assert!(t.permuted(&[0, 0, 1]).is_err());
    }
}

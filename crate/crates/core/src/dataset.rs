use crate::error::{invalid, Result};

/// Observed pairs `(x_i, y_i)` for `i < n` plus the test features `x_{n+1}`.
///
/// Features are stored row-major. Row `n` of the augmented design is the test
/// point, so `augmented_row(n)` returns `test_point`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    n: usize,
    p: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
    test_point: Vec<f64>,
    /// The held-out target, known only in harness mode.
    test_target: Option<f64>,
}

impl TabularDataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>, test_point: Vec<f64>) -> Result<Self> {
        let n = features.len();
        let p = test_point.len();
        if features.iter().any(|row| row.len() != p) {
            return Err(invalid("every feature row must have the test point's dimension"));
        }
        Self::from_row_major(n, p, features.concat(), targets, test_point)
    }

    pub fn from_row_major(
        n: usize,
        p: usize,
        features: Vec<f64>,
        targets: Vec<f64>,
        test_point: Vec<f64>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("need at least 2 observations, got {n}")));
        }
        if p < 1 {
            return Err(invalid("need at least one feature"));
        }
        if features.len() != n * p {
            return Err(invalid(format!(
                "feature buffer has {} entries, expected {n}x{p}",
                features.len()
            )));
        }
        if targets.len() != n {
            return Err(invalid(format!(
                "{} targets for {n} feature rows",
                targets.len()
            )));
        }
        if test_point.len() != p {
            return Err(invalid("test point dimension mismatch"));
        }
        let finite = features
            .iter()
            .chain(&targets)
            .chain(&test_point)
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("dataset contains non-finite values"));
        }
        Ok(Self {
            n,
            p,
            features,
            targets,
            test_point,
            test_target: None,
        })
    }

    pub fn with_test_target(mut self, target: f64) -> Self {
        self.test_target = Some(target);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn test_point(&self) -> &[f64] {
        &self.test_point
    }

    pub fn test_target(&self) -> Option<f64> {
        self.test_target
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    /// Row `i` of the augmented design; `i == n` is the test point.
    pub fn augmented_row(&self, i: usize) -> &[f64] {
        if i == self.n {
            &self.test_point
        } else {
            self.row(i)
        }
    }

    /// Row-major augmented design with the test point appended as row `n`.
    pub fn augmented_features(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity((self.n + 1) * self.p);
        x.extend_from_slice(&self.features);
        x.extend_from_slice(&self.test_point);
        x
    }

    pub fn augmented_targets(&self, candidate: f64) -> AugmentedTargets<'_> {
        AugmentedTargets {
            base: &self.targets,
            candidate,
        }
    }

    /// Euclidean norms of the n+1 augmented rows.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..=self.n).map(|i| norm(self.augmented_row(i))).collect()
    }

    /// `(y_(1), y_(n))`, the smallest and largest observed targets.
    pub fn target_range(&self) -> (f64, f64) {
        self.targets
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                (lo.min(y), hi.max(y))
            })
    }

    /// A new dataset whose observed rows are `order` (indices into the current
    /// rows). The test point is kept.
    pub fn select_rows(&self, order: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(order.len() * self.p);
        let mut targets = Vec::with_capacity(order.len());
        for &i in order {
            if i >= self.n {
                return Err(invalid(format!("row index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        let mut out =
            Self::from_row_major(order.len(), self.p, features, targets, self.test_point.clone())?;
        out.test_target = self.test_target;
        Ok(out)
    }
}

/// `y(z) = (y_1, ..., y_n, z)`.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedTargets<'a> {
    pub base: &'a [f64],
    pub candidate: f64,
}

impl AugmentedTargets<'_> {
    pub fn len(&self) -> usize {
        self.base.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, i: usize) -> f64 {
        if i == self.base.len() {
            self.candidate
        } else {
            self.base[i]
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.base.to_vec();
        v.push(self.candidate);
        v
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

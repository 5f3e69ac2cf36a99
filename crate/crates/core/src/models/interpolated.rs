//! Piecewise-linear interpolation of the model path `z -> mu_z`.
//!
//! The base model is fitted at `z_min`, at every anchor and at `z_max`. These
//! d+2 knots split the line into segments; inside a segment the prediction is
//! the convex combination of the two bracketing knot predictions, and beyond
//! the outer knots the first/last segment is extended affinely.

use super::{FittedModel, ModelSpec, Predictor};
use crate::dataset::TabularDataset;
use crate::error::{invalid, Result};

#[derive(Debug, Clone)]
pub struct InterpolatedModel {
    /// `z_min`, the anchors in increasing order, then `z_max`.
    knots: Vec<f64>,
    models: Vec<FittedModel>,
}

/// Checks `z_min < anchors[0] < ... < anchors[d-1] < z_max` and fits the
/// base model at each of the d+2 knots.
pub fn build_interpolated_model(
    dataset: &TabularDataset,
    anchors: &[f64],
    z_min: f64,
    z_max: f64,
    base: &ModelSpec,
) -> Result<InterpolatedModel> {
    if anchors.is_empty() {
        return Err(invalid("interpolation needs at least one anchor"));
    }
    let mut knots = Vec::with_capacity(anchors.len() + 2);
    knots.push(z_min);
    knots.extend_from_slice(anchors);
    knots.push(z_max);
    if knots.iter().any(|k| !k.is_finite()) {
        return Err(invalid("interpolation knots must be finite"));
    }
    if knots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(
            "anchors must be strictly increasing and strictly inside (z_min, z_max)",
        ));
    }
    let models = knots
        .iter()
        .map(|&z| base.fit(dataset, z))
        .collect::<Result<Vec<_>>>()?;
    Ok(InterpolatedModel { knots, models })
}

impl InterpolatedModel {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn knot_models(&self) -> &[FittedModel] {
        &self.models
    }

    /// Number of base-model fits behind this model.
    pub fn fit_count(&self) -> usize {
        self.models.len()
    }

    /// Segment index `t` and the weight on knot `t + 1`; the weight on knot
    /// `t` is `1 - w`. Outside `[z_min, z_max]` the weight leaves `[0, 1]`.
    pub fn segment(&self, z: f64) -> (usize, f64) {
        let last = self.knots.len() - 2;
        let t = match self.knots.partition_point(|&k| k <= z) {
            0 => 0,
            i => (i - 1).min(last),
        };
        let (lo, hi) = (self.knots[t], self.knots[t + 1]);
        (t, (z - lo) / (hi - lo))
    }

    /// Interpolated prediction `mu~_z(x)`.
    pub fn predict(&self, z: f64, x: &[f64]) -> Result<f64> {
        let (t, w) = self.segment(z);
        let left = self.models[t].predict(x)?;
        let right = self.models[t + 1].predict(x)?;
        Ok(blend(left, right, w))
    }

    /// Knot predictions at every augmented row: entry `[k][i]` is the
    /// prediction of knot model `k` at row `i`.
    pub fn knot_predictions(&self, dataset: &TabularDataset) -> Result<Vec<Vec<f64>>> {
        self.models
            .iter()
            .map(|m| {
                (0..=dataset.n())
                    .map(|i| m.predict(dataset.augmented_row(i)))
                    .collect()
            })
            .collect()
    }

    /// A predictor frozen at candidate `z`.
    pub fn at(&self, z: f64) -> InterpolatedView<'_> {
        InterpolatedView { model: self, z }
    }
}

#[inline]
pub(crate) fn blend(left: f64, right: f64, w: f64) -> f64 {
    if w == 0.0 {
        left
    } else if w == 1.0 {
        right
    } else {
        (1.0 - w) * left + w * right
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InterpolatedView<'a> {
    model: &'a InterpolatedModel,
    z: f64,
}

impl Predictor for InterpolatedView<'_> {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        self.model.predict(self.z, x)
    }

    fn fitted_candidate(&self) -> Option<f64> {
        Some(self.z)
    }
}

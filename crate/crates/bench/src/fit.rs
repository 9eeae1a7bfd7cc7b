use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::timing::ScalingPoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `t = a·w² + b·w + c`, coefficients `[a, b, c]`.
    QuadraticInWidth,
    /// `t = a·d + b`, coefficients `[a, b]`.
    LinearInDepth,
    /// `t = c0 + c1·w + c2·d·w + c3·d·w²`: per-layer cost linear and
    /// quadratic in width, plus input and output terms. Used to extrapolate
    /// over both axes at once.
    WidthDepthSurface,
}

impl FitModel {
    fn features(self, width: f64, depth: f64) -> Vec<f64> {
        match self {
            FitModel::QuadraticInWidth => vec![width * width, width, 1.0],
            FitModel::LinearInDepth => vec![depth, 1.0],
            FitModel::WidthDepthSurface => vec![1.0, width, depth * width, depth * width * width],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub coefficients: Vec<f64>,
    /// Clamped to `[0, 1]`; 1 when the data are constant and fitted exactly.
    pub r_squared: f64,
}

impl FitResult {
    pub fn predict(&self, width: usize, depth: usize) -> f64 {
        self.model
            .features(width as f64, depth as f64)
            .iter()
            .zip(&self.coefficients)
            .map(|(f, c)| f * c)
            .sum()
    }
}

/// Least-squares fit of `seconds_per_sample` against the chosen model.
pub fn fit_scaling(points: &[ScalingPoint], model: FitModel) -> Result<FitResult> {
    let pairs: Vec<(usize, usize, f64)> = points.iter().map(|p| (p.width, p.depth, p.seconds_per_sample)).collect();
    fit_values(&pairs, model)
}

/// As [`fit_scaling`] over explicit `(width, depth, value)` triples.
pub(crate) fn fit_values(values: &[(usize, usize, f64)], model: FitModel) -> Result<FitResult> {
    if values.len() < 4 {
        return Err(BenchError::Invalid(format!("a fit needs at least 4 points, got {}", values.len())));
    }
    if values.iter().any(|v| !v.2.is_finite()) {
        return Err(BenchError::Invalid("non-finite timing in fit input".into()));
    }
    let k = model.features(1.0, 1.0).len();
    let n = values.len();
    // Columns are scaled to unit max so w² and 1 share one numeric range.
    let raw: Vec<Vec<f64>> = values.iter().map(|&(w, d, _)| model.features(w as f64, d as f64)).collect();
    let scales: Vec<f64> = (0..k)
        .map(|j| raw.iter().map(|r| r[j].abs()).fold(0.0, f64::max))
        .collect();
    if scales.iter().any(|&s| s == 0.0) {
        return Err(BenchError::Degenerate(format!("{model:?} design has an all-zero column")));
    }
    let x = DMatrix::from_fn(n, k, |i, j| raw[i][j] / scales[j]);
    let y = DVector::from_iterator(n, values.iter().map(|v| v.2));
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if min_sv <= max_sv * 1e-10 {
        return Err(BenchError::Degenerate(format!(
            "{model:?} design matrix is rank deficient over the given widths and depths"
        )));
    }
    let beta = svd.solve(&y, 0.0).map_err(|e| BenchError::Degenerate(e.to_string()))?;
    let coefficients: Vec<f64> = beta.iter().zip(&scales).map(|(b, s)| b / s).collect();
    let fitted = &x * &beta;
    let mean = y.mean();
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    let scale = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let r_squared = if ss_tot <= scale * 1e-24 {
        if ss_res <= scale * 1e-20 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(FitResult {
        model,
        coefficients,
        r_squared,
    })
}

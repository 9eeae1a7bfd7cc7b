use serde::{Deserialize, Serialize};

use photon_dfa_core::mlp::Algorithm;
use photon_dfa_core::opu::LatencyModel;

use crate::error::{BenchError, Result};
use crate::fit::{fit_values, FitModel, FitResult};
use crate::timing::{Breakdown, ScalingPoint};

fn ordered(points: &[ScalingPoint]) -> Vec<&ScalingPoint> {
    let mut v: Vec<&ScalingPoint> = points.iter().collect();
    v.sort_by_key(|p| (p.depth, p.width));
    v
}

/// Smallest `(width, depth)` (depth first, then width) at which the optical
/// run is strictly faster per sample, or `None`.
pub fn find_crossover(points_bp: &[ScalingPoint], points_odfa: &[ScalingPoint]) -> Result<Option<(usize, usize)>> {
    let (bp, odfa) = (ordered(points_bp), ordered(points_odfa));
    if bp.len() != odfa.len() || bp.iter().zip(&odfa).any(|(a, b)| (a.width, a.depth) != (b.width, b.depth)) {
        return Err(BenchError::GridMismatch(format!(
            "{} reference points and {} optical points do not cover the same widths and depths",
            bp.len(),
            odfa.len()
        )));
    }
    Ok(bp
        .iter()
        .zip(&odfa)
        .find(|(b, o)| o.seconds_per_sample < b.seconds_per_sample)
        .map(|(b, _)| (b.width, b.depth)))
}

/// Per-sample times of both algorithms at one large network, used to pin the
/// optical latency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTarget {
    pub width: usize,
    pub depth: usize,
    pub bp_seconds: f64,
    pub odfa_seconds: f64,
}

impl Default for CalibrationTarget {
    /// 13.39 ms by backpropagation against 13.09 ms optical at width 3080, depth 96.
    fn default() -> Self {
        Self {
            width: 3080,
            depth: 96,
            bp_seconds: 13.39e-3,
            odfa_seconds: 13.09e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target: CalibrationTarget,
    pub bp_fit: FitResult,
    /// Fit of the optical runs' digital stages (forward, feedback, update).
    pub odfa_digital_fit: FitResult,
    /// Target seconds per local second, from the reference fit at the target.
    pub time_scale: f64,
    /// Local-machine latency that reproduces the target ratio.
    pub latency: LatencyModel,
    pub bp_at_target: f64,
    pub odfa_at_target: f64,
}

impl Calibration {
    /// Fitted per-sample seconds on this machine for both algorithms.
    pub fn predict(&self, width: usize, depth: usize) -> (f64, f64) {
        (
            self.bp_fit.predict(width, depth),
            self.odfa_digital_fit.predict(width, depth) + self.latency.seconds_per_signal(),
        )
    }
}

/// Fits both algorithms over width and depth, extrapolates to the target and
/// picks the seconds per projection that makes the optical/reference time
/// ratio there equal the target's. Fails when the optical digital stages alone
/// already exceed that budget.
pub fn calibrate_latency(
    points_bp: &[ScalingPoint],
    points_odfa: &[ScalingPoint],
    target: CalibrationTarget,
    projections_per_signal: u32,
) -> Result<Calibration> {
    if projections_per_signal == 0 {
        return Err(BenchError::Invalid("projections_per_signal must be positive".into()));
    }
    let bp: Vec<_> = points_bp.iter().map(|p| (p.width, p.depth, p.seconds_per_sample)).collect();
    let od: Vec<_> = points_odfa.iter().map(|p| (p.width, p.depth, p.breakdown.digital())).collect();
    let bp_fit = fit_values(&bp, FitModel::WidthDepthSurface)?;
    let odfa_digital_fit = fit_values(&od, FitModel::WidthDepthSurface)?;
    let bp_at_target = bp_fit.predict(target.width, target.depth);
    let digital_at_target = odfa_digital_fit.predict(target.width, target.depth);
    if !(bp_at_target > 0.0) {
        return Err(BenchError::Degenerate(format!("reference fit extrapolates to {bp_at_target} s at the target")));
    }
    let odfa_at_target = bp_at_target * target.odfa_seconds / target.bp_seconds;
    let per_signal = odfa_at_target - digital_at_target;
    if !(per_signal > 0.0) {
        return Err(BenchError::Degenerate(format!(
            "optical digital stages extrapolate to {digital_at_target} s, above the {odfa_at_target} s budget"
        )));
    }
    Ok(Calibration {
        target,
        time_scale: target.bp_seconds / bp_at_target,
        latency: LatencyModel::new(per_signal / projections_per_signal as f64, projections_per_signal),
        bp_fit,
        odfa_digital_fit,
        bp_at_target,
        odfa_at_target,
    })
}

/// Fitted points for both algorithms at `depth` over `widths`. The whole
/// digital estimate is reported as forward time.
pub fn predict_points(calibration: &Calibration, widths: &[usize], depth: usize) -> (Vec<ScalingPoint>, Vec<ScalingPoint>) {
    let latency = calibration.latency.seconds_per_signal();
    widths
        .iter()
        .map(|&w| {
            let (bp, od) = calibration.predict(w, depth);
            let digital = |f| Breakdown {
                forward: f,
                ..Breakdown::default()
            };
            (
                ScalingPoint::new(w, depth, Algorithm::Bp, digital(bp)),
                ScalingPoint::new(
                    w,
                    depth,
                    Algorithm::Odfa,
                    Breakdown {
                        optical: latency,
                        ..digital(od - latency)
                    },
                ),
            )
        })
        .unzip()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub width: usize,
    pub depth: usize,
    pub digital_seconds: f64,
    pub optical_seconds: f64,
    /// `optical_seconds / digital_seconds`.
    pub ratio: f64,
}

/// For each digital feedback run, the time it would take with its feedback
/// stage replaced by one optical signal under `latency`.
pub fn latency_ratio_curve(points: &[ScalingPoint], latency: LatencyModel) -> Result<Vec<RatioPoint>> {
    points
        .iter()
        .map(|p| {
            if !matches!(p.algorithm, Algorithm::Dfa | Algorithm::Tdfa) {
                return Err(BenchError::Invalid(format!("ratio curves need digital feedback runs, got {:?}", p.algorithm)));
            }
            let b = p.breakdown;
            let optical = b.forward + b.update + latency.seconds_per_signal();
            Ok(RatioPoint {
                width: p.width,
                depth: p.depth,
                digital_seconds: p.seconds_per_sample,
                optical_seconds: optical,
                ratio: optical / p.seconds_per_sample,
            })
        })
        .collect()
}

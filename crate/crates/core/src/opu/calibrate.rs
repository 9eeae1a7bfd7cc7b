use serde::{Deserialize, Serialize};

use super::session::{OpuSession, SessionConfig};
use super::{NoiseKind, NoiseSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftCalibration {
    pub sigma: f64,
    pub final_pcc: f64,
    pub evaluations: usize,
}

const SIGMA_FLOOR: f64 = 1e-8;
const SIGMA_CEILING: f64 = 1e3;
const MAX_EVALUATIONS: usize = 80;

/// Finds the drift sigma whose end-of-run correlation hits `target`.
///
/// `final_pcc(sigma)` must replay the same seeded drift for every call, which
/// makes the correlation decrease monotonically in sigma; the search bisects
/// in log space until it lands within `tolerance`.
pub fn calibrate_drift_sigma(
    target: f64,
    tolerance: f64,
    mut final_pcc: impl FnMut(f64) -> Result<f64>,
) -> Result<DriftCalibration> {
    if !(target > -1.0 && target < 1.0) || tolerance <= 0.0 {
        return Err(Error::InvalidConfig(format!("drift target {target} must lie in (-1, 1)")));
    }
    let mut evaluations = 0;
    let mut eval = |s: f64, n: &mut usize| {
        *n += 1;
        final_pcc(s)
    };
    let (mut lo, mut hi) = (SIGMA_FLOOR.ln(), SIGMA_CEILING.ln());
    let p_lo = eval(SIGMA_FLOOR, &mut evaluations)?;
    if p_lo < target {
        return Err(Error::Numerical(format!("correlation {p_lo} already below target at sigma {SIGMA_FLOOR}")));
    }
    let mut best = DriftCalibration {
        sigma: SIGMA_FLOOR,
        final_pcc: p_lo,
        evaluations,
    };
    while evaluations < MAX_EVALUATIONS {
        let mid = 0.5 * (lo + hi);
        let sigma = mid.exp();
        let p = eval(sigma, &mut evaluations)?;
        if (p - target).abs() < (best.final_pcc - target).abs() {
            best = DriftCalibration {
                sigma,
                final_pcc: p,
                evaluations,
            };
        }
        if (p - target).abs() <= tolerance {
            break;
        }
        if p > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.evaluations = evaluations;
    if (best.final_pcc - target).abs() > tolerance {
        return Err(Error::Numerical(format!(
            "drift calibration stalled at pcc {} (target {target})",
            best.final_pcc
        )));
    }
    Ok(best)
}

/// End-of-run correlation for a session drifting at `sigma` for `steps` steps.
pub fn session_drift_pcc(config: &SessionConfig, probe: &[f64], steps: u64, sigma: f64, noise_seed: u64) -> Result<f64> {
    let config = config.clone().with_noise(NoiseSpec::new(NoiseKind::Drift, sigma, noise_seed));
    let mut session = OpuSession::new(&config)?;
    let trace = session.stability_trace(probe, steps, steps.max(1))?;
    Ok(trace.last().map_or(1.0, |&(_, p)| p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opu::EncoderMode;

    #[test]
    fn lands_on_target_correlation() {
        let config = SessionConfig::new(128, 64, 4).with_mode(EncoderMode::Validation);
        let probe: Vec<f64> = (0..64).map(|i| if i % 3 == 0 { 1.0 } else { -0.5 }).collect();
        let cal = calibrate_drift_sigma(0.54, 0.01, |s| session_drift_pcc(&config, &probe, 200, s, 8)).unwrap();
        assert!((cal.final_pcc - 0.54).abs() <= 0.01, "{cal:?}");
        let again = session_drift_pcc(&config, &probe, 200, cal.sigma, 8).unwrap();
        assert_eq!(again, cal.final_pcc);
    }

    #[test]
    fn rejects_unreachable_targets() {
        assert!(calibrate_drift_sigma(1.5, 0.01, |_| Ok(1.0)).is_err());
        assert!(calibrate_drift_sigma(0.5, 0.01, |_| Ok(0.2)).is_err());
    }
}

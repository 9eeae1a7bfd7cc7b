//! Simulated optical processing unit.
//!
//! A complex Gaussian transmission matrix stands in for the scattering
//! medium. Inputs are displayed as binary frames, the camera records
//! intensities, and a fixed anchor frame turns three intensity measurements
//! into one linear random projection.

mod calibrate;
mod session;
mod ternary;
mod threshold;
mod transmission;

use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate_drift_sigma, session_drift_pcc, DriftCalibration};
pub use session::{AnchorVector, EncoderMode, OpuSession, SessionConfig, SessionMetadata, ANCHOR_FLOOR};
pub use ternary::{ternarize, TernaryCode};
pub use threshold::{select_threshold, select_threshold_batch, threshold_grid, FeedbackProjector, ThresholdChoice};
pub use transmission::{sample_transmission_matrix, TransmissionMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    TmNoise,
    MeasurementNoise,
    Drift,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        kind: NoiseKind::None,
        sigma: 0.0,
        seed: 0,
    };

    pub fn new(kind: NoiseKind, sigma: f64, seed: u64) -> Self {
        Self { kind, sigma, seed }
    }

    /// True when the spec perturbs anything; `sigma == 0` is inert for every kind.
    pub fn is_active(&self) -> bool {
        self.kind != NoiseKind::None && self.sigma > 0.0
    }

    pub fn active_kind(&self) -> NoiseKind {
        if self.is_active() {
            self.kind
        } else {
            NoiseKind::None
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(crate::Error::InvalidConfig(format!("noise sigma {} must be finite and >= 0", self.sigma)));
        }
        Ok(())
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::NONE
    }
}

/// Simulated optical time is accounted, never slept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub seconds_per_projection: f64,
    pub projections_per_signal: u32,
}

impl LatencyModel {
    /// Camera frame period at 340 Hz.
    pub const DEFAULT_SECONDS_PER_PROJECTION: f64 = 1.0 / 340.0;

    pub fn new(seconds_per_projection: f64, projections_per_signal: u32) -> Self {
        Self {
            seconds_per_projection,
            projections_per_signal,
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 2)
    }

    /// Seconds charged for `signals` feedback projections.
    pub fn elapsed(&self, signals: u64) -> f64 {
        signals as f64 * self.projections_per_signal as f64 * self.seconds_per_projection
    }

    pub fn seconds_per_signal(&self) -> f64 {
        self.elapsed(1)
    }
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SECONDS_PER_PROJECTION, 2)
    }
}

use serde::{Deserialize, Serialize};

use super::session::OpuSession;
use super::ternary::{ternarize, TernaryCode};
use crate::error::{Error, Result};
use crate::stats::cosine_similarity;
use crate::tensor::{matvec, Tensor};

/// Anything that can apply a fixed random projection to an error vector.
pub trait FeedbackProjector {
    fn input_dim(&self) -> usize;

    /// Projection of an arbitrary real vector.
    fn project_real(&self, e: &[f64]) -> Result<Vec<f64>>;

    /// `scale · P (e⁺ − e⁻)` without touching any counters.
    fn project_code(&self, code: &TernaryCode) -> Result<Vec<f64>>;
}

impl FeedbackProjector for OpuSession {
    fn input_dim(&self) -> usize {
        self.cols()
    }

    fn project_real(&self, e: &[f64]) -> Result<Vec<f64>> {
        OpuSession::project_real(self, e)
    }

    fn project_code(&self, code: &TernaryCode) -> Result<Vec<f64>> {
        let sp = OpuSession::project_real(self, &code.plus)?;
        let sm = OpuSession::project_real(self, &code.minus)?;
        Ok(sp.iter().zip(&sm).map(|(a, b)| code.scale * (a - b)).collect())
    }
}

/// A plain real matrix acts as a digital projector.
impl FeedbackProjector for Tensor {
    fn input_dim(&self) -> usize {
        self.cols()
    }

    fn project_real(&self, e: &[f64]) -> Result<Vec<f64>> {
        matvec(self, e)
    }

    fn project_code(&self, code: &TernaryCode) -> Result<Vec<f64>> {
        let mut s = matvec(self, &code.difference())?;
        s.iter_mut().for_each(|v| *v *= code.scale);
        Ok(s)
    }
}

/// Candidate thresholds `0, 0.01, …, 1`.
pub fn threshold_grid() -> Vec<f64> {
    (0..=100).map(|k| k as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub cosine: f64,
    /// Score at every grid point, in grid order.
    pub scores: Vec<f64>,
}

// Scores closer than this count as ties and keep the smaller threshold.
const TIE_TOLERANCE: f64 = 1e-12;

/// Grid search for the threshold whose ternary projection best matches the
/// real-valued projection of the normalized error.
pub fn select_threshold<P: FeedbackProjector + ?Sized>(e0: &[f64], projector: &P) -> Result<ThresholdChoice> {
    select_threshold_batch(std::slice::from_ref(&e0.to_vec()), projector)
}

/// As [`select_threshold`], maximizing the mean cosine over several errors.
/// Zero errors are skipped; at least one must be nonzero.
pub fn select_threshold_batch<P: FeedbackProjector + ?Sized>(errors: &[Vec<f64>], projector: &P) -> Result<ThresholdChoice> {
    let mut references = Vec::new();
    for e in errors {
        if e.len() != projector.input_dim() {
            return Err(Error::dim("select_threshold", &[projector.input_dim()], &[e.len()]));
        }
        let max = e.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max == 0.0 {
            continue;
        }
        let normalized: Vec<f64> = e.iter().map(|v| v / max).collect();
        let reference = projector.project_real(&normalized)?;
        references.push((e, reference));
    }
    if references.is_empty() {
        return Err(Error::ZeroVector("select_threshold"));
    }
    let grid = threshold_grid();
    let mut scores = Vec::with_capacity(grid.len());
    for &t in &grid {
        let mut total = 0.0;
        for (e, reference) in &references {
            let s = projector.project_code(&ternarize(e, t))?;
            // A projection that vanishes carries no direction at all.
            total += cosine_similarity(reference, &s).unwrap_or(0.0);
        }
        scores.push(total / references.len() as f64);
    }
    let mut best = 0;
    for (k, &c) in scores.iter().enumerate() {
        if c > scores[best] + TIE_TOLERANCE {
            best = k;
        }
    }
    Ok(ThresholdChoice {
        threshold: grid[best],
        cosine: scores[best],
        scores,
    })
}

use serde::{Deserialize, Serialize};

/// Two binary frames encoding a normalized error vector in `{-1, 0, 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TernaryCode {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub threshold: f64,
    /// `max |e_i|` removed before thresholding (1 for a zero vector).
    pub scale: f64,
}

impl TernaryCode {
    /// `e⁺ − e⁻`.
    pub fn difference(&self) -> Vec<f64> {
        self.plus.iter().zip(&self.minus).map(|(p, m)| p - m).collect()
    }

    /// `scale · (e⁺ − e⁻)`, the value the projection stands in for.
    pub fn scaled_difference(&self) -> Vec<f64> {
        self.plus
            .iter()
            .zip(&self.minus)
            .map(|(p, m)| self.scale * (p - m))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.plus.iter().chain(&self.minus).all(|&v| v == 0.0)
    }

    pub fn len(&self) -> usize {
        self.plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plus.is_empty()
    }
}

/// Normalizes `e` by its largest magnitude and thresholds it at `±t`.
///
/// Entries equal to zero after normalization never enter either frame, which
/// makes `t = 0` a strict-sign split.
pub fn ternarize(e: &[f64], t: f64) -> TernaryCode {
    let max = e.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let scale = if max > 0.0 { max } else { 1.0 };
    let mut plus = vec![0.0; e.len()];
    let mut minus = vec![0.0; e.len()];
    for (i, &v) in e.iter().enumerate() {
        let x = v / scale;
        if x > 0.0 && x >= t {
            plus[i] = 1.0;
        } else if x < 0.0 && x <= -t {
            minus[i] = 1.0;
        }
    }
    TernaryCode {
        plus,
        minus,
        threshold: t,
        scale,
    }
}

//! SGD with momentum and Adam over lists of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum {
        momentum: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub learning_rate: f64,
    #[serde(flatten)]
    pub kind: OptimizerKind,
}

impl OptimizerSpec {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            kind: OptimizerKind::SgdMomentum { momentum },
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            kind: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } if !(0.0..1.0).contains(&momentum) => {
                Err(Error::InvalidConfig(format!("momentum {momentum} outside [0, 1)")))
            }
            OptimizerKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 =>
            {
                Err(Error::InvalidConfig("adam betas must lie in [0, 1), eps > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Optimizer plus its per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub spec: OptimizerSpec,
    pub learning_rate: f64,
    pub step_count: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(spec: OptimizerSpec) -> Self {
        Self {
            spec,
            learning_rate: spec.learning_rate,
            step_count: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    fn ensure_buffers(&mut self, params: &[&mut Tensor]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| p.zeros_like()).collect();
            if matches!(self.spec.kind, OptimizerKind::Adam { .. }) {
                self.second = params.iter().map(|p| p.zeros_like()).collect();
            }
            return Ok(());
        }
        if self.first.len() != params.len() {
            return Err(Error::dim("optimizer buffers", &[self.first.len()], &[params.len()]));
        }
        for (buf, p) in self.first.iter().zip(params) {
            if buf.shape() != p.shape() {
                return Err(Error::dim("optimizer buffers", buf.shape(), p.shape()));
            }
        }
        Ok(())
    }
}

/// Applies one optimizer step in place: `params[i] <- update(params[i], grads[i])`.
pub fn apply_update(params: &mut [&mut Tensor], grads: &[&Tensor], opt: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim("apply_update", &[params.len()], &[grads.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dim("apply_update", p.shape(), g.shape()));
        }
    }
    opt.ensure_buffers(params)?;
    opt.step_count += 1;
    let lr = opt.learning_rate;
    match opt.spec.kind {
        OptimizerKind::SgdMomentum { momentum } => {
            for ((p, g), v) in params.iter_mut().zip(grads).zip(opt.first.iter_mut()) {
                for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                    *vi = momentum * *vi + gi;
                    *pi -= lr * *vi;
                }
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            let t = opt.step_count as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (((p, g), m), v) in params
                .iter_mut()
                .zip(grads)
                .zip(opt.first.iter_mut())
                .zip(opt.second.iter_mut())
            {
                for (((pi, &gi), mi), vi) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *pi -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

/// Cosine decay from `base` to 0 over `total` steps.
pub fn cosine_learning_rate(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let progress = (step.min(total) as f64) / total as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::add_outer;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = Tensor::from_rows(&[&[1.0, 2.0]]).unwrap();
        let g = w.zeros_like();
        let mut opt = OptimizerState::new(OptimizerSpec::sgd(0.1, 0.9));
        apply_update(&mut [&mut w], &[&g], &mut opt).unwrap();
        assert_eq!(w.data(), &[1.0, 2.0]);
    }

    #[test]
    fn plain_sgd_hand_computation() {
        let mut w = Tensor::from_rows(&[&[0.0]]).unwrap();
        let mut g = w.zeros_like();
        add_outer(&mut g, 1.0, &[1.0], &[2.0]).unwrap();
        let mut opt = OptimizerState::new(OptimizerSpec::sgd(0.1, 0.0));
        apply_update(&mut [&mut w], &[&g], &mut opt).unwrap();
        assert!((w.data()[0] + 0.2).abs() < 1e-15);
        assert_eq!(w.data()[0], 0.0 - 0.1 * 2.0);
    }

    #[test]
    fn momentum_matches_scalar_recurrence() {
        let mut w = Tensor::vector(vec![1.0]);
        let g = Tensor::vector(vec![0.5]);
        let mut opt = OptimizerState::new(OptimizerSpec::sgd(0.01, 0.9));
        let (mut v, mut p) = (0.0f64, 1.0f64);
        for _ in 0..3 {
            apply_update(&mut [&mut w], &[&g], &mut opt).unwrap();
            v = 0.9 * v + 0.5;
            p -= 0.01 * v;
        }
        assert_eq!(w.data()[0], p);
        assert_eq!(opt.first_moments()[0].data()[0], v);
        assert_eq!(opt.step_count, 3);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut w = Tensor::vector(vec![0.0, 0.0]);
        let g = Tensor::vector(vec![3.0, -0.2]);
        let mut opt = OptimizerState::new(OptimizerSpec::adam(0.001));
        apply_update(&mut [&mut w], &[&g], &mut opt).unwrap();
        assert!((w.data()[0] + 0.001).abs() < 1e-9);
        assert!((w.data()[1] - 0.001).abs() < 1e-9);
    }

    #[test]
    fn buffer_shape_mismatch_is_rejected() {
        let mut a = Tensor::vector(vec![0.0, 0.0]);
        let g = Tensor::vector(vec![1.0, 1.0]);
        let mut opt = OptimizerState::new(OptimizerSpec::sgd(0.1, 0.5));
        apply_update(&mut [&mut a], &[&g], &mut opt).unwrap();
        let mut b = Tensor::vector(vec![0.0; 3]);
        let g3 = Tensor::vector(vec![1.0; 3]);
        assert!(apply_update(&mut [&mut b], &[&g3], &mut opt).is_err());
        assert!(apply_update(&mut [&mut a], &[&g3], &mut opt).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_learning_rate(1e-3, 0, 100), 1e-3);
        assert!(cosine_learning_rate(1e-3, 100, 100).abs() < 1e-18);
        assert!((cosine_learning_rate(1e-3, 50, 100) - 5e-4).abs() < 1e-15);
    }
}

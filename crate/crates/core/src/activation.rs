use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl ActivationKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => x,
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at the pre-activation `x`. `relu'(0)` is 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => 1.0,
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    pub fn apply_slice(self, h: &[f64]) -> Vec<f64> {
        h.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn derivative_slice(self, h: &[f64]) -> Vec<f64> {
        h.iter().map(|&v| self.derivative(v)).collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activate(kind: ActivationKind, h: &Tensor) -> Tensor {
    h.map(|v| kind.apply(v))
}

pub fn activation_derivative(kind: ActivationKind, h: &Tensor) -> Tensor {
    h.map(|v| kind.derivative(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActivationKind::*;

    #[test]
    fn hand_values() {
        assert_eq!(activate(Relu, &Tensor::vector(vec![-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(activate(Tanh, &Tensor::vector(vec![0.0])).data(), &[0.0]);
        assert_eq!(activate(Sigmoid, &Tensor::vector(vec![0.0])).data(), &[0.5]);
        assert_eq!(activation_derivative(Relu, &Tensor::vector(vec![-1.0, 2.0])).data(), &[0.0, 1.0]);
        assert_eq!(activation_derivative(Relu, &Tensor::vector(vec![0.0])).data(), &[0.0]);
        assert_eq!(activation_derivative(Tanh, &Tensor::vector(vec![0.0])).data(), &[1.0]);
    }

    fn central_difference(kind: ActivationKind, x: f64, step: f64) -> f64 {
        (kind.apply(x + step) - kind.apply(x - step)) / (2.0 * step)
    }

    #[test]
    fn tanh_derivative_matches_finite_difference() {
        for i in -40..=40 {
            let x = i as f64 * 0.1 + 0.013;
            let fd = central_difference(Tanh, x, 1e-5);
            let an = Tanh.derivative(x);
            assert!((fd - an).abs() / an.abs().max(1e-300) < 1e-8, "x={x} fd={fd} an={an}");
        }
    }

    proptest::proptest! {
        #[test]
        fn derivatives_match_finite_differences(x in -6.0f64..6.0) {
            for kind in [Identity, Relu, Tanh, Sigmoid] {
                if kind == Relu && x.abs() < 1e-3 {
                    continue;
                }
                let fd = central_difference(kind, x, 1e-6);
                let an = kind.derivative(x);
                let err = (fd - an).abs() / an.abs().max(1e-3);
                proptest::prop_assert!(err < 1e-6, "{:?} x={} fd={} an={}", kind, x, fd, an);
            }
        }
    }
}

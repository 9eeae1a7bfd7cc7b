use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Returns `(-log softmax(logits)[target], softmax(logits) - onehot(target))`.
///
/// The second value is the error signal `dL/dlogits`.
pub fn softmax_cross_entropy(logits: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    let (loss, e) = softmax_cross_entropy_slice(logits.data(), target)?;
    Ok((loss, Tensor::vector(e)))
}

pub fn softmax_cross_entropy_slice(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[target];
    let mut e: Vec<f64> = logits.iter().map(|&z| (z - log_z).exp()).collect();
    e[target] -= 1.0;
    Ok((loss, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn symmetric_case() {
        let (loss, e) = softmax_cross_entropy(&Tensor::vector(vec![0.0, 0.0]), 0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(e.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn saturated_logits_do_not_overflow() {
        let (loss, e) = softmax_cross_entropy(&Tensor::vector(vec![1000.0, 0.0]), 0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(e.data().iter().all(|v| v.abs() < 1e-12));
        assert!(e.is_finite());
    }

    #[test]
    fn target_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&Tensor::vector(vec![0.0; 3]), 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn error_matches_finite_difference() {
        let mut rng = seeded(3);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..7).map(|_| rng.random_range(-4.0..4.0)).collect();
            let target = rng.random_range(0..7);
            let (_, e) = softmax_cross_entropy_slice(&logits, target).unwrap();
            for i in 0..7 {
                let h = 1e-5;
                let mut up = logits.clone();
                up[i] += h;
                let mut dn = logits.clone();
                dn[i] -= h;
                let fd = (softmax_cross_entropy_slice(&up, target).unwrap().0
                    - softmax_cross_entropy_slice(&dn, target).unwrap().0)
                    / (2.0 * h);
                assert!((fd - e[i]).abs() / e[i].abs().max(1e-4) < 1e-6, "fd={fd} e={}", e[i]);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn error_sums_to_zero(logits in proptest::collection::vec(-50.0f64..50.0, 2..20), t in 0usize..20) {
            let t = t % logits.len();
            let (loss, e) = softmax_cross_entropy_slice(&logits, t).unwrap();
            proptest::prop_assert!(loss >= 0.0);
            proptest::prop_assert!(e.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}

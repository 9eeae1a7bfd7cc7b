use super::*;
use crate::activation::activate;
use crate::data::{synthetic_digits, SyntheticDigits};
use crate::loss::softmax_cross_entropy_slice;
use crate::opu::{EncoderMode, NoiseKind, NoiseSpec, SessionConfig};
use crate::optim::OptimizerSpec;
use crate::rng::{normal_vec, seeded};
use crate::tensor::affine_forward;
use rand::Rng;

fn random_input(n: usize, seed: u64) -> Vec<f64> {
    normal_vec(&mut seeded(seed), n, 1.0)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

#[test]
fn identity_network_passes_input_through() {
    let mut m = MlpModel::zeros(&[3, 3, 3], ActivationKind::Identity).unwrap();
    for w in m.weights_mut() {
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
    }
    let c = forward_mlp(&m, &[0.5, -2.0, 7.0]).unwrap();
    assert_eq!(c.logits(), &[0.5, -2.0, 7.0]);
}

#[test]
fn hand_set_two_layer_network() {
    let mut m = MlpModel::zeros(&[2, 2, 2], ActivationKind::Relu).unwrap();
    m.weights_mut()[0] = Tensor::from_rows(&[&[1.0, -1.0], &[2.0, 0.5]]).unwrap();
    m.biases_mut()[0] = Tensor::vector(vec![0.0, -1.0]);
    m.weights_mut()[1] = Tensor::from_rows(&[&[1.0, 1.0], &[-1.0, 3.0]]).unwrap();
    m.biases_mut()[1] = Tensor::vector(vec![0.5, 0.0]);
    // x = [1, 2]: h1 = [-1, 2], a1 = [0, 2], h2 = [2.5, 6]
    let c = forward_mlp(&m, &[1.0, 2.0]).unwrap();
    assert_eq!(c.preactivations[0], vec![-1.0, 2.0]);
    assert_eq!(c.activations[1], vec![0.0, 2.0]);
    assert_eq!(c.logits(), &[2.5, 6.0]);
}

#[test]
fn forward_matches_composition_of_primitives() {
    let m = MlpModel::new(&[7, 5, 6, 3], ActivationKind::Tanh, 4).unwrap();
    let x = random_input(7, 1);
    let c = forward_mlp(&m, &x).unwrap();
    let mut a = Tensor::vector(x);
    for l in 0..3 {
        let h = affine_forward(&m.weights()[l], &a, &m.biases()[l]).unwrap();
        a = if l == 2 { h } else { activate(ActivationKind::Tanh, &h) };
    }
    assert_eq!(c.logits(), a.data());
    assert!(forward_mlp(&m, &[0.0; 6]).is_err());
}

#[test]
fn zero_error_gives_zero_gradients() {
    let m = MlpModel::new(&[4, 6, 3], ActivationKind::Relu, 2).unwrap();
    let c = forward_mlp(&m, &random_input(4, 3)).unwrap();
    let fb = FeedbackMatrixSet::digital_gaussian(m.hidden_dims(), 3, 5).unwrap();
    for g in [backward_bp(&m, &c, &[0.0; 3]).unwrap(), backward_dfa(&m, &c, &[0.0; 3], &fb).unwrap()] {
        assert!(g.gradients.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn single_layer_delta_is_the_error() {
    let m = MlpModel::new(&[5, 3], ActivationKind::Relu, 1).unwrap();
    let c = forward_mlp(&m, &random_input(5, 2)).unwrap();
    let e = [0.2, -0.5, 0.3];
    let b = backward_bp(&m, &c, &e).unwrap();
    assert_eq!(b.deltas, vec![e.to_vec()]);
}

fn loss_of(m: &MlpModel, x: &[f64], y: usize) -> f64 {
    softmax_cross_entropy_slice(forward_mlp(m, x).unwrap().logits(), y).unwrap().0
}

#[test]
fn bp_gradients_match_central_differences() {
    for seed in 0..20u64 {
        let act = [ActivationKind::Tanh, ActivationKind::Sigmoid][seed as usize % 2];
        let mut m = MlpModel::new(&[5, 6, 4, 3], act, seed).unwrap();
        for b in m.biases_mut() {
            b.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64 - 0.15);
        }
        let x = random_input(5, 100 + seed);
        let y = (seed % 3) as usize;
        let c = forward_mlp(&m, &x).unwrap();
        let (_, e) = softmax_cross_entropy_slice(c.logits(), y).unwrap();
        let g = backward_bp(&m, &c, &e).unwrap().gradients;
        let analytic: Vec<f64> = g.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        let h = 1e-5;
        let mut k = 0;
        let count = m.parameters_mut().len();
        for p in 0..count {
            let len = m.parameters_mut()[p].len();
            for i in 0..len {
                let orig = m.parameters_mut()[p].data()[i];
                m.parameters_mut()[p].data_mut()[i] = orig + h;
                let up = loss_of(&m, &x, y);
                m.parameters_mut()[p].data_mut()[i] = orig - h;
                let down = loss_of(&m, &x, y);
                m.parameters_mut()[p].data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[k];
                assert!(
                    (a - numeric).abs() <= 1e-6 * a.abs().max(numeric.abs()) + 1e-9,
                    "seed {seed} param {p}[{i}]: {a} vs {numeric}"
                );
                k += 1;
            }
        }
    }
}

#[test]
fn dfa_with_transpose_chain_is_bp_on_linear_net() {
    let m = MlpModel::new(&[4, 5, 3], ActivationKind::Identity, 8).unwrap();
    let c = forward_mlp(&m, &random_input(4, 1)).unwrap();
    let e = [0.3, -0.1, -0.2];
    let fb = FeedbackMatrixSet::transpose_chain(&m).unwrap();
    assert_eq!(backward_dfa(&m, &c, &e, &fb).unwrap().deltas, backward_bp(&m, &c, &e).unwrap().deltas);
    let probe = alignment_probe(&m, &c, &e, &fb).unwrap();
    assert!(probe.iter().all(|v| (v.unwrap() - 1.0).abs() < 1e-12));

    let deep = MlpModel::new(&[4, 6, 5, 3], ActivationKind::Identity, 9).unwrap();
    let cd = forward_mlp(&deep, &random_input(4, 2)).unwrap();
    let chain = FeedbackMatrixSet::transpose_chain(&deep).unwrap();
    let dfa = backward_dfa(&deep, &cd, &e, &chain).unwrap().deltas;
    let bp = backward_bp(&deep, &cd, &e).unwrap().deltas;
    for (a, b) in dfa.iter().zip(&bp) {
        assert!(max_rel(a, b) < 1e-12);
    }
}

#[test]
fn dfa_hidden_deltas_match_direct_oracle() {
    let m = MlpModel::new(&[6, 8, 7, 4], ActivationKind::Relu, 3).unwrap();
    let c = forward_mlp(&m, &random_input(6, 4)).unwrap();
    let fb = FeedbackMatrixSet::digital_gaussian(m.hidden_dims(), 4, 6).unwrap();
    let e = [0.1, -0.4, 0.2, 0.1];
    let got = backward_dfa(&m, &c, &e, &fb).unwrap();
    for l in 0..2 {
        let b = &fb.matrices[l];
        for i in 0..b.rows() {
            let s: f64 = (0..4).map(|j| b.get(i, j) * e[j]).sum();
            let oracle = s * ActivationKind::Relu.derivative(c.preactivations[l][i]);
            assert!((got.deltas[l][i] - oracle).abs() < 1e-14);
        }
    }
    assert_eq!(got.deltas[2], e.to_vec());
}

#[test]
fn parallel_dfa_is_bit_identical() {
    let m = MlpModel::new(&[10, 9, 8, 7, 6, 5], ActivationKind::Tanh, 12).unwrap();
    let c = forward_mlp(&m, &random_input(10, 1)).unwrap();
    let fb = FeedbackMatrixSet::digital_gaussian(m.hidden_dims(), 5, 2).unwrap();
    let e = [0.3, -0.2, 0.0, 0.5, -0.6];
    let seq = backward_dfa(&m, &c, &e, &fb).unwrap();
    for threads in [1, 2, 3, 8] {
        assert_eq!(backward_dfa_parallel(&m, &c, &e, &fb, threads).unwrap(), seq);
    }
    // Reverse layer order gives the same per-layer values.
    let mut rev = Vec::new();
    for l in (0..4).rev() {
        let s = crate::tensor::matvec(&fb.matrices[l], &e).unwrap();
        rev.push((l, hidden_delta(&m, &c, l, &s).unwrap()));
    }
    for (l, d) in rev {
        assert_eq!(d, seq.deltas[l]);
    }
}

#[test]
fn tdfa_reduces_to_dfa_on_ternary_errors() {
    let m = MlpModel::new(&[5, 6, 4], ActivationKind::Relu, 1).unwrap();
    let c = forward_mlp(&m, &random_input(5, 9)).unwrap();
    let fb = FeedbackMatrixSet::digital_gaussian(m.hidden_dims(), 4, 3).unwrap();
    let e = [1.0, 0.0, -1.0, 1.0];
    assert_eq!(backward_tdfa(&m, &c, &e, &fb, 0.0).unwrap(), backward_dfa(&m, &c, &e, &fb).unwrap());
}

#[test]
fn tdfa_deadband_silences_hidden_layers() {
    let m = MlpModel::new(&[5, 6, 4], ActivationKind::Tanh, 1).unwrap();
    let c = forward_mlp(&m, &random_input(5, 9)).unwrap();
    let fb = FeedbackMatrixSet::digital_gaussian(m.hidden_dims(), 4, 3).unwrap();
    let e = [0.2, -0.3, 0.05, 0.05];
    let g = backward_tdfa(&m, &c, &e, &fb, 1.5).unwrap();
    assert!(g.gradients.weights[0].data().iter().all(|&v| v == 0.0));
    assert_eq!(g.deltas[1], e.to_vec());
    assert!(g.gradients.weights[1].data().iter().any(|&v| v != 0.0));
}

#[test]
fn tdfa_matches_ternarize_then_dfa() {
    let m = MlpModel::new(&[5, 6, 7, 4], ActivationKind::Relu, 11).unwrap();
    let c = forward_mlp(&m, &random_input(5, 1)).unwrap();
    let fb = FeedbackMatrixSet::digital_gaussian(m.hidden_dims(), 4, 3).unwrap();
    let e = [0.4, -0.25, 0.1, -0.9];
    let code = ternarize(&e, 0.3);
    let signals = fb.signals(&code.scaled_difference()).unwrap();
    let oracle = deltas_from_signals(&m, &c, &e, &signals).unwrap();
    assert_eq!(backward_tdfa(&m, &c, &e, &fb, 0.3).unwrap().deltas, oracle);
}

fn rel_close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    max_rel(a.data(), b.data()) <= tol
}

#[test]
fn odfa_matches_tdfa_with_oracle_session() {
    let mut rng = seeded(77);
    for case in 0..12u64 {
        let hidden = [rng.random_range(2..12), rng.random_range(2..12)];
        let dims = [rng.random_range(3..9), hidden[0], hidden[1], rng.random_range(2..6)];
        let m = MlpModel::new(&dims, ActivationKind::Relu, case).unwrap();
        let out = dims[3];
        let layout = if case % 2 == 0 { BandLayout::Disjoint } else { BandLayout::Shared };
        let rows = layout.required_rows(&hidden);
        let mut session = OpuSession::new(&SessionConfig::new(rows, out, 500 + case)).unwrap();
        let t = rng.random_range(0.0..0.8);
        session.set_threshold(t).unwrap();
        let fb = FeedbackMatrixSet::from_session(&session, &hidden, layout).unwrap();
        let c = forward_mlp(&m, &random_input(dims[0], case)).unwrap();
        let e = normal_vec(&mut rng, out, 1.0);
        let optical = backward_odfa(&m, &c, &e, &mut session, layout).unwrap();
        let digital = backward_tdfa(&m, &c, &e, &fb, t).unwrap();
        for (a, b) in optical.gradients.tensors().iter().zip(digital.gradients.tensors()) {
            assert!(rel_close(a, b, 1e-6), "case {case}");
        }
    }
}

#[test]
fn odfa_zero_error_still_charges_latency() {
    let m = MlpModel::new(&[4, 5, 3], ActivationKind::Relu, 1).unwrap();
    let mut s = OpuSession::new(&SessionConfig::new(5, 3, 2)).unwrap();
    s.set_threshold(0.2).unwrap();
    let c = forward_mlp(&m, &random_input(4, 1)).unwrap();
    let g = backward_odfa(&m, &c, &[0.0; 3], &mut s, BandLayout::Disjoint).unwrap();
    assert!(g.gradients.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    assert_eq!(s.step_counter(), 1);
    assert_eq!(s.optical_seconds(), 2.0 / 340.0);
}

#[test]
fn odfa_under_camera_noise_keeps_shapes() {
    let m = MlpModel::new(&[4, 5, 3], ActivationKind::Relu, 1).unwrap();
    let noise = NoiseSpec::new(NoiseKind::MeasurementNoise, 0.3, 5);
    let mut noisy = OpuSession::new(&SessionConfig::new(5, 3, 2).with_noise(noise)).unwrap();
    let mut clean = OpuSession::new(&SessionConfig::new(5, 3, 2)).unwrap();
    noisy.set_threshold(0.1).unwrap();
    clean.set_threshold(0.1).unwrap();
    let c = forward_mlp(&m, &random_input(4, 1)).unwrap();
    let e = [0.5, -0.4, -0.1];
    let a = backward_odfa(&m, &c, &e, &mut noisy, BandLayout::Disjoint).unwrap();
    let b = backward_odfa(&m, &c, &e, &mut clean, BandLayout::Disjoint).unwrap();
    assert_ne!(a.gradients, b.gradients);
    for (x, y) in a.gradients.tensors().iter().zip(b.gradients.tensors()) {
        assert_eq!(x.shape(), y.shape());
        assert!(x.is_finite());
    }
    let mut small = OpuSession::new(&SessionConfig::new(4, 3, 2)).unwrap();
    small.set_threshold(0.1).unwrap();
    assert!(backward_odfa(&m, &c, &e, &mut small, BandLayout::Disjoint).is_err());
}

#[test]
fn alignment_at_initialization_is_weak() {
    let mut small = 0;
    for seed in 0..10u64 {
        let m = MlpModel::new(&[50, 100, 100, 10], ActivationKind::Tanh, seed).unwrap();
        let fb = FeedbackMatrixSet::digital_gaussian(m.hidden_dims(), 10, 1000 + seed).unwrap();
        let c = forward_mlp(&m, &random_input(50, seed)).unwrap();
        let (_, e) = softmax_cross_entropy_slice(c.logits(), (seed % 10) as usize).unwrap();
        let cos = alignment_probe(&m, &c, &e, &fb).unwrap();
        let mean = cos.iter().map(|c| c.unwrap()).sum::<f64>() / cos.len() as f64;
        if mean.abs() < 0.3 {
            small += 1;
        }
    }
    assert!(small >= 9, "{small}");
}

#[test]
fn alignment_reports_absent_for_dead_layers() {
    let m = MlpModel::zeros(&[3, 4, 2], ActivationKind::Relu).unwrap();
    let fb = FeedbackMatrixSet::digital_gaussian(&[4], 2, 1).unwrap();
    let c = forward_mlp(&m, &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(alignment_probe(&m, &c, &[0.5, -0.5], &fb).unwrap(), vec![None]);
}

#[test]
fn checkpoint_round_trip() {
    let m = MlpModel::new(&[6, 4, 3], ActivationKind::Sigmoid, 5).unwrap();
    let ck = m.to_checkpoint();
    let bytes = ck.to_bytes(crate::checkpoint::Precision::F64).unwrap();
    let back = MlpModel::from_checkpoint(&crate::checkpoint::Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(m.parameter_count(), 6 * 4 + 4 + 4 * 3 + 3);
}

fn toy_data(n: usize, seed: u64) -> Dataset {
    synthetic_digits(&SyntheticDigits::new(8, n), seed).unwrap()
}

use crate::data::Dataset;

fn toy_config(algorithm: Algorithm, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::new(algorithm, 20, epochs, OptimizerSpec::sgd(0.05, 0.9), 3);
    c.alignment_probes = 16;
    c
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let data = toy_data(100, 1);
    let mut m = MlpModel::new(&[64, 16, 10], ActivationKind::Relu, 2).unwrap();
    let before = m.clone();
    let mut t = Trainer::new(&m, toy_config(Algorithm::Dfa, 0)).unwrap();
    let trace = t.fit(&mut m, &data, Some(&data)).unwrap();
    assert_eq!(m, before);
    assert_eq!(trace.records.len(), 1);
    assert_eq!(trace.records[0].split, crate::trace::Split::Validation);
}

#[test]
fn feedback_matrices_stay_fixed_without_noise() {
    let data = toy_data(200, 1);
    let mut m = MlpModel::new(&[64, 16, 12, 10], ActivationKind::Relu, 2).unwrap();
    for algorithm in [Algorithm::Dfa, Algorithm::Tdfa] {
        let mut t = Trainer::new(&m, toy_config(algorithm, 2)).unwrap();
        let initial = t.digital_feedback().unwrap().base().clone();
        t.fit(&mut m, &data, None).unwrap();
        assert_eq!(t.digital_feedback().unwrap().base(), &initial);
        assert_eq!(t.digital_feedback().unwrap().current(), &initial);
    }
}

#[test]
fn projection_count_follows_granularity() {
    let data = toy_data(200, 1);
    for (granularity, per_step) in [(Granularity::PerBatch, None), (Granularity::PerSample, Some(()))] {
        let mut m = MlpModel::new(&[64, 16, 10], ActivationKind::Relu, 2).unwrap();
        let mut cfg = toy_config(Algorithm::Odfa, 2);
        cfg.granularity = granularity;
        cfg.batch_size = 30;
        let mut t = Trainer::new(&m, cfg).unwrap();
        t.fit(&mut m, &data, None).unwrap();
        // 180 training samples: 6 batches per epoch, all full.
        assert_eq!(t.steps(), 12);
        let expected = if per_step.is_some() { 12 * 30 } else { 12 };
        assert_eq!(t.projections(), expected);
        assert_eq!(t.optical_seconds(), expected as f64 * 2.0 / 340.0);
    }
}

#[test]
fn shallow_training_freezes_hidden_layers() {
    let data = toy_data(100, 1);
    let mut m = MlpModel::new(&[64, 16, 12, 10], ActivationKind::Relu, 2).unwrap();
    let before = m.clone();
    let mut t = Trainer::new(&m, toy_config(Algorithm::Shlw, 1)).unwrap();
    t.fit(&mut m, &data, None).unwrap();
    assert_eq!(m.weights()[0], before.weights()[0]);
    assert_eq!(m.weights()[1], before.weights()[1]);
    assert_eq!(m.biases()[1], before.biases()[1]);
    assert_ne!(m.weights()[2], before.weights()[2]);
}

#[test]
fn training_is_deterministic() {
    let data = toy_data(150, 4);
    let run = || {
        let mut m = MlpModel::new(&[64, 16, 10], ActivationKind::Relu, 2).unwrap();
        let mut t = Trainer::new(&m, toy_config(Algorithm::Tdfa, 2)).unwrap();
        let trace = t.fit(&mut m, &data, Some(&data)).unwrap();
        (trace.to_csv(false), m)
    };
    assert_eq!(run(), run());
}

#[test]
fn invalid_combinations_fail_before_training() {
    let m = MlpModel::new(&[64, 16, 10], ActivationKind::Relu, 2).unwrap();
    let mut cfg = toy_config(Algorithm::Bp, 1);
    cfg.noise = NoiseSpec::new(NoiseKind::TmNoise, 0.1, 1);
    assert!(matches!(Trainer::new(&m, cfg), Err(Error::InvalidConfig(_))));
    let mut cfg = toy_config(Algorithm::Dfa, 1);
    cfg.batch_size = 0;
    assert!(Trainer::new(&m, cfg).is_err());
    let mut wrong = MlpModel::new(&[10, 16, 10], ActivationKind::Relu, 2).unwrap();
    let mut t = Trainer::new(&wrong, toy_config(Algorithm::Bp, 1)).unwrap();
    assert!(t.fit(&mut wrong, &toy_data(20, 1), None).is_err());
}

#[test]
fn non_finite_parameters_report_numerical_failure() {
    let data = toy_data(100, 1);
    let mut m = MlpModel::new(&[64, 16, 10], ActivationKind::Relu, 2).unwrap();
    m.biases_mut()[1].data_mut()[3] = f64::INFINITY;
    let mut t = Trainer::new(&m, toy_config(Algorithm::Bp, 1)).unwrap();
    assert!(matches!(t.fit(&mut m, &data, None), Err(Error::Numerical(_))));

    let mut m = MlpModel::new(&[64, 16, 10], ActivationKind::Relu, 2).unwrap();
    let mut cfg = toy_config(Algorithm::Bp, 1);
    cfg.optimizer = OptimizerSpec::sgd(f64::MAX, 0.0);
    let mut t = Trainer::new(&m, cfg).unwrap();
    assert!(matches!(t.fit(&mut m, &data, None), Err(Error::Numerical(_))));
}

#[test]
fn validation_mode_sessions_are_accepted_for_oracles() {
    let s = OpuSession::new(&SessionConfig::new(8, 3, 1).with_mode(EncoderMode::Validation)).unwrap();
    let fb = FeedbackMatrixSet::from_session(&s, &[4, 4], BandLayout::Disjoint).unwrap();
    assert_eq!(fb.matrices.len(), 2);
    assert!(FeedbackMatrixSet::from_session(&s, &[5, 4], BandLayout::Disjoint).is_err());
    assert!(FeedbackMatrixSet::from_session(&s, &[5, 4], BandLayout::Shared).is_ok());
}

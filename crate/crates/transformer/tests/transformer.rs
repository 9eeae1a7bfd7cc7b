use photon_dfa_core::mlp::{Algorithm, BandLayout, Granularity};
use photon_dfa_core::opu::{OpuSession, SessionConfig};
use photon_dfa_core::rng::{normal_vec, seeded};
use photon_dfa_core::Tensor;
use photon_dfa_core::checkpoint::{Checkpoint, Precision};
use photon_dfa_transformer::*;
use rand::Rng;

fn tiny(vocab: usize, blocks: usize) -> TransformerConfig {
    TransformerConfig {
        vocab_size: vocab,
        embed_dim: 8,
        n_blocks: blocks,
        n_heads: 2,
        mlp_dims: vec![8, 12, 8],
        context_size: 6,
    }
}

/// Random values everywhere, including shifts and gains, so no parameter
/// group has a trivially zero gradient.
fn randomized(config: &TransformerConfig, seed: u64) -> TransformerModel {
    let mut m = TransformerModel::new(config, seed).unwrap();
    let mut rng = seeded(seed ^ 0x55);
    for t in m.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    m
}

/// Relative error with an absolute floor, so gradients that are exactly zero
/// in theory (the key bias) compare against round-off instead of dividing by it.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|y| y * y).sum::<f64>().sqrt());
    num / den.max(1e-3)
}

#[test]
fn tokenize_small_and_round_trip() {
    let (tok, ids) = tokenize("aba").unwrap();
    assert_eq!(tok.chars(), &['a', 'b']);
    assert_eq!(ids, vec![0, 1, 0]);
    let text = synthetic_corpus(2000, 3);
    let (tok, ids) = tokenize(&text).unwrap();
    let mut rng = seeded(1);
    for _ in 0..20 {
        let a = rng.random_range(0..ids.len() - 50);
        let b = a + rng.random_range(1..50);
        let snippet = tok.decode(&ids[a..b]).unwrap();
        assert_eq!(tok.decode(&tok.encode(&snippet).unwrap()).unwrap(), snippet);
    }
    assert!(tokenize("").is_err());
    assert!(tok.encode("§").is_err());
}

#[test]
fn vocabulary_size_counts_distinct_characters() {
    let chars: String = (0..83u32).map(|i| char::from_u32(0x21 + i).unwrap()).collect();
    let corpus = format!("{chars}{chars}");
    let (tok, _) = tokenize(&corpus).unwrap();
    assert_eq!(tok.vocab_size(), 83);
    assert!(tok.chars().windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn subword_vocabulary_prefers_longest_match() {
    let tok = VocabTokenizer::new(["th", "the", "e", "t", "h", " ", "a"].map(String::from).to_vec()).unwrap();
    assert_eq!(tok.encode("the a").unwrap(), vec![1, 5, 6]);
    assert_eq!(tok.decode(&[1, 5, 6]).unwrap(), "the a");
    assert!(tok.encode("x").is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tok.json");
    tok.manifest().write(&path).unwrap();
    let back = TokenizerManifest::read(&path).unwrap().into_tokenizer().unwrap();
    assert_eq!(back.encode("the").unwrap(), vec![1]);
}

#[test]
fn parameter_count_matches_allocated_model() {
    for config in [tiny(7, 2), tiny(11, 3), TransformerConfig::desk(65)] {
        let m = TransformerModel::new(&config, 1).unwrap();
        assert_eq!(parameter_count(&config) as usize, m.parameter_count());
    }
}

#[test]
fn large_configuration_count_by_hand() {
    let config = TransformerConfig {
        vocab_size: 1016,
        embed_dim: 2040,
        n_blocks: 40,
        n_heads: 10,
        mlp_dims: vec![2040, 2060, 2040],
        context_size: 24,
    };
    let (v, e) = (1016u64, 2040u64);
    let attention = 4 * (e * e + e);
    let norms = 4 * e;
    let mlp = 2040 * 2060 + 2060 + 2060 * 2040 + 2040;
    let expected = v * e + 24 * e + 40 * (attention + norms + mlp) + 2 * e + v * e;
    assert_eq!(parameter_count(&config), expected);
    assert_eq!(expected, 1_007_063_120);
}

#[test]
fn config_validation() {
    let mut c = tiny(5, 2);
    c.n_heads = 3;
    assert!(c.validate().is_err());
    let mut c = tiny(5, 2);
    c.mlp_dims = vec![8, 12, 9];
    assert!(c.validate().is_err());
    let mut c = tiny(5, 2);
    c.context_size = 0;
    assert!(c.validate().is_err());
}

#[test]
fn zero_weights_give_uniform_predictions() {
    let m = TransformerModel::zeros(&tiny(6, 2)).unwrap();
    let cache = forward_transformer(&m, &[1, 2, 3]).unwrap();
    assert!(cache.logits().iter().all(|&l| l == 0.0));
    let single = forward_transformer(&m, &[4]).unwrap();
    assert_eq!(single.logits().len(), 6);
    assert!(forward_transformer(&m, &[0; 7]).is_err());
    assert!(forward_transformer(&m, &[6]).is_err());
    assert!(forward_transformer(&m, &[]).is_err());
}

// Independent straight-line forward pass over nested vectors.
fn oracle_logits(m: &TransformerModel, tokens: &[usize]) -> Vec<Vec<f64>> {
    let c = &m.config;
    let (n, e, h) = (tokens.len(), c.embed_dim, c.n_heads);
    let hd = e / h;
    let mat = |w: &Tensor, x: &[f64], b: Option<&Tensor>| -> Vec<f64> {
        (0..w.rows())
            .map(|o| (0..w.cols()).map(|k| w.get(o, k) * x[k]).sum::<f64>() + b.map_or(0.0, |b| b.data()[o]))
            .collect()
    };
    let norm = |x: &[f64], g: &Tensor, s: &Tensor| -> Vec<f64> {
        let mu = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64;
        x.iter().enumerate().map(|(k, v)| g.data()[k] * (v - mu) / (var + 1e-5).sqrt() + s.data()[k]).collect()
    };
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| (0..e).map(|d| m.token_embedding.get(t, d) + m.position_embedding.get(i, d)).collect())
        .collect();
    for b in &m.blocks {
        let u: Vec<Vec<f64>> = x.iter().map(|r| norm(r, &b.ln1_gain, &b.ln1_shift)).collect();
        let q: Vec<Vec<f64>> = u.iter().map(|r| mat(&b.wq, r, Some(&b.bq))).collect();
        let k: Vec<Vec<f64>> = u.iter().map(|r| mat(&b.wk, r, Some(&b.bk))).collect();
        let v: Vec<Vec<f64>> = u.iter().map(|r| mat(&b.wv, r, Some(&b.bv))).collect();
        let mut att = vec![vec![0.0; e]; n];
        for head in 0..h {
            for i in 0..n {
                let mut scores = Vec::new();
                for j in 0..=i {
                    let mut s = 0.0;
                    for t in 0..hd {
                        s += q[i][head * hd + t] * k[j][head * hd + t];
                    }
                    scores.push(s / (hd as f64).sqrt());
                }
                let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                for j in 0..=i {
                    let p = (scores[j] - mx).exp() / z;
                    for t in 0..hd {
                        att[i][head * hd + t] += p * v[j][head * hd + t];
                    }
                }
            }
        }
        for i in 0..n {
            let a = mat(&b.wo, &att[i], Some(&b.bo));
            let mid: Vec<f64> = x[i].iter().zip(&a).map(|(p, q)| p + q).collect();
            let mut hdn = norm(&mid, &b.ln2_gain, &b.ln2_shift);
            for (l, (w, bias)) in b.mlp_weights.iter().zip(&b.mlp_biases).enumerate() {
                hdn = mat(w, &hdn, Some(bias));
                if l + 1 < b.mlp_weights.len() {
                    hdn.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            x[i] = mid.iter().zip(&hdn).map(|(p, q)| p + q).collect();
        }
    }
    x.iter().map(|r| mat(&m.projector, &norm(r, &m.final_gain, &m.final_shift), None)).collect()
}

#[test]
fn forward_matches_straight_line_oracle() {
    for seed in 0..5 {
        let m = randomized(&tiny(9, 2), seed);
        let tokens = [3, 1, 4, 1, 5, 8];
        let cache = forward_transformer(&m, &tokens).unwrap();
        let oracle = oracle_logits(&m, &tokens);
        for (i, row) in oracle.iter().enumerate() {
            for (k, &o) in row.iter().enumerate() {
                assert!((cache.logits()[i * 9 + k] - o).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn later_tokens_never_affect_earlier_logits() {
    let m = randomized(&tiny(9, 3), 4);
    let base = [1, 2, 3, 4, 5, 6];
    let a = forward_transformer(&m, &base).unwrap();
    for j in 0..6 {
        let mut changed = base;
        changed[j] = (changed[j] + 3) % 9;
        let b = forward_transformer(&m, &changed).unwrap();
        for i in 0..6 {
            let same = a.logits()[i * 9..(i + 1) * 9] == b.logits()[i * 9..(i + 1) * 9];
            assert_eq!(same, i < j, "perturbing {j} vs position {i}");
        }
    }
}

fn window_loss(m: &TransformerModel, tokens: &[usize], targets: &[usize]) -> f64 {
    let cache = forward_transformer(m, tokens).unwrap();
    projector_error(m, &cache, targets).unwrap().0
}

#[test]
fn bp_gradients_match_finite_differences() {
    let h = 1e-6;
    for seed in 0..20u64 {
        let config = tiny(7, 2);
        let mut m = randomized(&config, seed);
        let mut rng = seeded(100 + seed);
        let tokens: Vec<usize> = (0..6).map(|_| rng.random_range(0..7)).collect();
        let targets: Vec<usize> = (0..6).map(|_| rng.random_range(0..7)).collect();
        let cache = forward_transformer(&m, &tokens).unwrap();
        let (_, grads) = backward_transformer(&m, &cache, &targets, Algorithm::Bp, None, Granularity::PerSample).unwrap();
        let analytic: Vec<(String, Vec<f64>)> =
            grads.named_tensors().into_iter().map(|(n, t)| (n, t.data().to_vec())).collect();
        let groups = m.tensors_mut().len();
        for g in 0..groups {
            let len = m.tensors_mut()[g].len();
            let mut numeric = vec![0.0; len];
            for i in 0..len {
                let orig = m.tensors_mut()[g].data()[i];
                m.tensors_mut()[g].data_mut()[i] = orig + h;
                let up = window_loss(&m, &tokens, &targets);
                m.tensors_mut()[g].data_mut()[i] = orig - h;
                let down = window_loss(&m, &tokens, &targets);
                m.tensors_mut()[g].data_mut()[i] = orig;
                numeric[i] = (up - down) / (2.0 * h);
            }
            let (name, a) = &analytic[g];
            let err = rel_err(a, &numeric);
            assert!(err < 1e-5, "seed {seed} {name}: rel err {err}");
        }
    }
}

fn session_pair(config: &TransformerConfig, seed: u64, t: f64) -> (FeedbackChannel, FeedbackChannel) {
    let rows = BandLayout::Disjoint.required_rows(&vec![config.embed_dim; config.n_blocks - 1]);
    let mut session = OpuSession::new(&SessionConfig::new(rows, config.embed_dim, seed)).unwrap();
    session.set_threshold(t).unwrap();
    let oracle = FeedbackChannel::oracle_of(&session, config, BandLayout::Disjoint).unwrap();
    (
        FeedbackChannel::Optical {
            session,
            layout: BandLayout::Disjoint,
        },
        oracle,
    )
}

#[test]
fn odfa_matches_tdfa_with_session_matrices() {
    let mut rng = seeded(9);
    for case in 0..10u64 {
        let config = tiny(7, 2 + (case as usize % 3));
        let m = randomized(&config, case);
        let tokens: Vec<usize> = (0..6).map(|_| rng.random_range(0..7)).collect();
        let targets: Vec<usize> = (0..6).map(|_| rng.random_range(0..7)).collect();
        let (mut optical, mut oracle) = session_pair(&config, 40 + case, rng.random_range(0.0..0.6));
        let cache = forward_transformer(&m, &tokens).unwrap();
        let granularity = if case % 2 == 0 { Granularity::PerSample } else { Granularity::PerBatch };
        let (_, a) = backward_transformer(&m, &cache, &targets, Algorithm::Odfa, Some(&mut optical), granularity).unwrap();
        let (_, b) = backward_transformer(&m, &cache, &targets, Algorithm::Tdfa, Some(&mut oracle), granularity).unwrap();
        for ((name, x), (_, y)) in a.named_tensors().into_iter().zip(b.named_tensors()) {
            assert!(rel_err(x.data(), y.data()) < 1e-6, "case {case} {name}");
        }
    }
}

#[test]
fn optical_projection_at_zero_threshold_equals_real_projection_of_ternary_error() {
    let config = tiny(7, 3);
    let (mut optical, oracle) = session_pair(&config, 5, 0.0);
    let FeedbackChannel::Digital { feedback, .. } = oracle else { unreachable!() };
    let mut dfa = FeedbackChannel::Digital {
        feedback,
        ternary: false,
        threshold: None,
    };
    let e = [1.0, 0.0, -1.0, -1.0, 0.0, 1.0, 1.0, 0.0];
    let a = optical.project(&e, 2).unwrap();
    let b = dfa.project(&e, 2).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(rel_err(x, y) < 1e-6);
    }
}

#[test]
fn shallow_mode_only_touches_the_head_and_last_block() {
    let config = tiny(7, 3);
    let m = randomized(&config, 2);
    let cache = forward_transformer(&m, &[1, 2, 3, 4]).unwrap();
    let (_, g) = backward_transformer(&m, &cache, &[2, 3, 4, 5], Algorithm::Shlw, None, Granularity::PerSample).unwrap();
    for (name, t) in g.named_tensors() {
        let zero = t.data().iter().all(|&v| v == 0.0);
        let trainable = name.starts_with("block2.") || name.starts_with("final") || name == "projector";
        assert_eq!(zero, !trainable, "{name}");
    }
}

#[test]
fn feedback_blocks_depend_only_on_their_own_parameters() {
    let config = tiny(7, 4);
    let m = randomized(&config, 3);
    let cache = forward_transformer(&m, &[0, 1, 2, 3, 4, 5]).unwrap();
    let targets = [1, 2, 3, 4, 5, 6];
    let mut rng = seeded(8);
    let signals: Vec<Vec<f64>> = (0..3).map(|_| normal_vec(&mut rng, 6 * 8, 1.0)).collect();
    let mut base = m.zero_like();
    backward_with_signals(&m, &cache, &targets, Algorithm::Dfa, Some(&signals), &mut base).unwrap();
    for k in 0..3 {
        let mut scrambled = m.clone();
        for b in &mut scrambled.blocks[k + 1..] {
            for t in b.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
        }
        let mut g = m.zero_like();
        backward_with_signals(&scrambled, &cache, &targets, Algorithm::Dfa, Some(&signals), &mut g).unwrap();
        assert_eq!(g.blocks[k], base.blocks[k], "block {k}");
    }
    // Each block alone gives the same gradients as the full pass.
    for k in 0..3 {
        let mut alone = m.zero_like();
        feedback_block_backward(&m.blocks[k], &cache.blocks()[k], &signals[k], &mut alone.blocks[k]);
        assert_eq!(alone.blocks[k], base.blocks[k]);
    }
}

#[test]
fn backward_leaves_forward_unchanged_in_every_mode() {
    let config = tiny(7, 3);
    let m = randomized(&config, 6);
    let tokens = [1, 2, 3];
    let before = forward_transformer(&m, &tokens).unwrap().logits().to_vec();
    let (mut optical, _) = session_pair(&config, 1, 0.2);
    let mut dfa = FeedbackChannel::digital(&config, 1, Default::default(), false).unwrap();
    let mut tdfa = FeedbackChannel::digital(&config, 1, Default::default(), true).unwrap();
    tdfa.set_threshold(0.3).unwrap();
    for (mode, ch) in [
        (Algorithm::Bp, None),
        (Algorithm::Shlw, None),
        (Algorithm::Dfa, Some(&mut dfa)),
        (Algorithm::Tdfa, Some(&mut tdfa)),
        (Algorithm::Odfa, Some(&mut optical)),
    ] {
        let cache = forward_transformer(&m, &tokens).unwrap();
        assert_eq!(cache.logits(), &before[..]);
        backward_transformer(&m, &cache, &[2, 3, 4], mode, ch, Granularity::PerSample).unwrap();
    }
}

#[test]
fn mode_and_channel_must_agree() {
    let config = tiny(7, 2);
    let m = randomized(&config, 6);
    let cache = forward_transformer(&m, &[1, 2]).unwrap();
    let mut dfa = FeedbackChannel::digital(&config, 1, Default::default(), false).unwrap();
    assert!(backward_transformer(&m, &cache, &[2, 3], Algorithm::Odfa, Some(&mut dfa), Granularity::PerSample).is_err());
    assert!(backward_transformer(&m, &cache, &[2, 3], Algorithm::Dfa, None, Granularity::PerSample).is_err());
    let mut tdfa = FeedbackChannel::digital(&config, 1, Default::default(), true).unwrap();
    assert!(backward_transformer(&m, &cache, &[2, 3], Algorithm::Tdfa, Some(&mut tdfa), Granularity::PerSample).is_err());
}

#[test]
fn per_sample_projection_count_is_windows_times_context() {
    let text = synthetic_corpus(600, 1);
    let (tok, ids) = tokenize(&text).unwrap();
    let mut config = tiny(tok.vocab_size(), 2);
    config.context_size = 8;
    let mut m = TransformerModel::new(&config, 1).unwrap();
    let mut cfg = LmTrainConfig::new(Algorithm::Odfa, 8, 1, 1e-3, 2);
    cfg.window_stride = 5;
    let mut trainer = LmTrainer::new(&m, cfg).unwrap();
    trainer.fit(&mut m, &ids, None).unwrap();
    let windows = window_count(ids.len(), 8, 5) as u64;
    assert_eq!(trainer.projections(), windows * 8);
    assert!((trainer.optical_seconds() - (windows * 8) as f64 * 2.0 / 340.0).abs() < 1e-9);

    let mut m = TransformerModel::new(&config, 1).unwrap();
    let mut cfg = LmTrainConfig::new(Algorithm::Odfa, 8, 1, 1e-3, 2);
    cfg.window_stride = 5;
    cfg.granularity = Granularity::PerBatch;
    let mut trainer = LmTrainer::new(&m, cfg).unwrap();
    trainer.fit(&mut m, &ids, None).unwrap();
    assert_eq!(trainer.projections(), trainer.steps());
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let text = synthetic_corpus(300, 1);
    let (tok, ids) = tokenize(&text).unwrap();
    let config = tiny(tok.vocab_size(), 2);
    let mut m = TransformerModel::new(&config, 1).unwrap();
    let before = m.clone();
    let mut trainer = LmTrainer::new(&m, LmTrainConfig::new(Algorithm::Bp, 4, 0, 1e-3, 1)).unwrap();
    let trace = trainer.fit(&mut m, &ids, Some(&ids)).unwrap();
    assert_eq!(m, before);
    assert_eq!(trace.records.len(), 1);
}

#[test]
fn training_is_deterministic_and_learns() {
    let text = synthetic_corpus(4000, 2);
    let (tok, ids) = tokenize(&text).unwrap();
    let config = tiny(tok.vocab_size(), 2);
    let run = |alg| {
        let mut m = TransformerModel::new(&config, 3).unwrap();
        let mut cfg = LmTrainConfig::new(alg, 8, 1, 3e-3, 4);
        cfg.window_stride = 3;
        let mut trainer = LmTrainer::new(&m, cfg).unwrap();
        let trace = trainer.fit(&mut m, &ids, None).unwrap();
        (trace.to_csv(false), m)
    };
    for alg in [Algorithm::Bp, Algorithm::Tdfa, Algorithm::Shlw] {
        let (a, ma) = run(alg);
        let (b, mb) = run(alg);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }
}

#[test]
fn greedy_generation_repeats_a_dominant_token() {
    let config = tiny(5, 2);
    let mut m = TransformerModel::zeros(&config).unwrap();
    m.final_shift = Tensor::vector(vec![1.0; 8]);
    m.projector.row_mut(3).iter_mut().for_each(|v| *v = 2.0);
    let tok = CharTokenizer::from_chars(vec!['a', 'b', 'c', 'd', 'e']).unwrap();
    assert_eq!(generate(&m, &tok, "ab", 5, 0.0, 1).unwrap(), "abddddd");
    assert_eq!(generate(&m, &tok, "ab", 0, 0.7, 1).unwrap(), "ab");
    assert!(generate(&m, &tok, "az", 3, 0.0, 1).is_err());
}

#[test]
fn sampling_is_reproducible_for_a_seed() {
    let config = tiny(5, 2);
    let m = randomized(&config, 1);
    let tok = CharTokenizer::from_chars(vec!['a', 'b', 'c', 'd', 'e']).unwrap();
    let a = generate(&m, &tok, "abc", 30, 1.0, 7).unwrap();
    assert_eq!(a, generate(&m, &tok, "abc", 30, 1.0, 7).unwrap());
    assert_eq!(a.chars().count(), 33);
}

#[test]
fn checkpoint_round_trip() {
    let m = randomized(&tiny(6, 2), 1);
    let bytes = m.to_checkpoint().to_bytes(Precision::F64).unwrap();
    assert_eq!(TransformerModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap(), m);
}

#[test]
fn window_arithmetic() {
    assert_eq!(window_count(10, 4, 1), 6);
    assert_eq!(training_windows(10, 4, 2), vec![0, 2, 4]);
    assert_eq!(window_count(4, 4, 1), 0);
}

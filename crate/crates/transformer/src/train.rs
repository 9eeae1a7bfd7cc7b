use std::time::Instant;

use rand::seq::SliceRandom as _;
use serde::{Deserialize, Serialize};

use photon_dfa_core::mlp::{Algorithm, BandLayout, Granularity};
use photon_dfa_core::opu::{select_threshold_batch, LatencyModel, NoiseSpec, OpuSession, SessionConfig};
use photon_dfa_core::rng::{derive_seed, derived};
use photon_dfa_core::trace::{config_hash, Split, TraceRecord, TrainingTrace};
use photon_dfa_core::{apply_update, cosine_learning_rate, Error, OptimizerSpec, OptimizerState, Result};

use crate::backward::{backward_with_signals, broadcast, feedback_dims, projector_error, window_signals, FeedbackChannel};
use crate::forward::{forward_transformer, ForwardCache};
use crate::model::TransformerModel;

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmTrainConfig {
    pub algorithm: Algorithm,
    /// Windows per step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Adam's starting rate; decays to zero along a cosine over all steps.
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub granularity: Granularity,
    /// Offset between consecutive training windows.
    #[serde(default = "one")]
    pub window_stride: usize,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub band_layout: BandLayout,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "one")]
    pub record_every: usize,
}

impl LmTrainConfig {
    pub fn new(algorithm: Algorithm, batch_size: usize, epochs: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            algorithm,
            batch_size,
            epochs,
            learning_rate,
            seed,
            granularity: Granularity::default(),
            window_stride: 1,
            noise: NoiseSpec::NONE,
            band_layout: BandLayout::default(),
            latency: LatencyModel::default(),
            threshold: None,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.window_stride == 0 || self.record_every == 0 {
            return Err(Error::InvalidConfig("batch_size, window_stride and record_every must be positive".into()));
        }
        OptimizerSpec::adam(self.learning_rate).validate()?;
        self.noise.validate()?;
        if self.noise.is_active() && !self.algorithm.uses_feedback() {
            return Err(Error::InvalidConfig(format!("{:?} has no feedback path for noise", self.algorithm)));
        }
        if let Some(t) = self.threshold {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::InvalidConfig(format!("threshold {t} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Number of full next-token windows of length `context` at offsets `0, stride, ...`.
pub fn window_count(tokens: usize, context: usize, stride: usize) -> usize {
    if tokens <= context || stride == 0 {
        0
    } else {
        (tokens - context - 1) / stride + 1
    }
}

pub fn training_windows(tokens: usize, context: usize, stride: usize) -> Vec<usize> {
    (0..window_count(tokens, context, stride)).map(|w| w * stride).collect()
}

pub struct LmTrainer {
    config: LmTrainConfig,
    optimizer: OptimizerState,
    channel: Option<FeedbackChannel>,
    steps: u64,
    total_steps: u64,
}

impl LmTrainer {
    pub fn new(model: &TransformerModel, config: LmTrainConfig) -> Result<Self> {
        config.validate()?;
        let mc = &model.config;
        let channel = if config.algorithm.uses_feedback() {
            if mc.n_blocks < 2 {
                return Err(Error::InvalidConfig("feedback training needs at least two blocks".into()));
            }
            let mut channel = match config.algorithm {
                Algorithm::Odfa => {
                    let rows = config.band_layout.required_rows(&feedback_dims(mc));
                    let session_config = SessionConfig::new(rows, mc.embed_dim, derive_seed(config.seed, &[0x0b]))
                        .with_noise(config.noise)
                        .with_latency(config.latency);
                    FeedbackChannel::Optical {
                        session: OpuSession::new(&session_config)?,
                        layout: config.band_layout,
                    }
                }
                alg => FeedbackChannel::digital(mc, derive_seed(config.seed, &[0xf0]), config.noise, alg == Algorithm::Tdfa)?,
            };
            if let Some(t) = config.threshold {
                if config.algorithm.needs_threshold() {
                    channel.set_threshold(t)?;
                }
            }
            Some(channel)
        } else {
            None
        };
        Ok(Self {
            optimizer: OptimizerState::new(OptimizerSpec::adam(config.learning_rate)),
            config,
            channel,
            steps: 0,
            total_steps: 0,
        })
    }

    /// Replaces the feedback channel, e.g. with a session-derived oracle.
    pub fn with_channel(mut self, channel: FeedbackChannel) -> Result<Self> {
        if channel.algorithm() != self.config.algorithm {
            return Err(Error::InvalidConfig(format!(
                "{:?} training cannot use a {:?} channel",
                self.config.algorithm,
                channel.algorithm()
            )));
        }
        self.channel = Some(channel);
        Ok(self)
    }

    pub fn config(&self) -> &LmTrainConfig {
        &self.config
    }

    pub fn channel(&self) -> Option<&FeedbackChannel> {
        self.channel.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn projections(&self) -> u64 {
        self.channel.as_ref().map_or(0, FeedbackChannel::projections)
    }

    pub fn optical_seconds(&self) -> f64 {
        self.channel.as_ref().map_or(0.0, FeedbackChannel::optical_seconds)
    }

    fn pick_threshold(&mut self, errors: Vec<Vec<f64>>) -> Result<()> {
        let Some(channel) = self.channel.as_mut() else { return Ok(()) };
        let choice = match &*channel {
            FeedbackChannel::Digital { feedback, .. } => {
                let stacked = feedback.current().stacked()?;
                select_threshold_batch(&errors, &stacked)
            }
            FeedbackChannel::Optical { session, .. } => select_threshold_batch(&errors, session),
        };
        // An all-zero first batch leaves nothing to fit; fall back to zero.
        let t = match choice {
            Ok(c) => c.threshold,
            Err(Error::ZeroVector(_)) => 0.0,
            Err(e) => return Err(e),
        };
        channel.set_threshold(t)
    }

    /// One optimizer step over the windows starting at `starts`; returns the mean loss.
    pub fn step(&mut self, model: &mut TransformerModel, tokens: &[usize], starts: &[usize]) -> Result<f64> {
        if starts.is_empty() {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        let c = model.config.context_size;
        let e = model.config.embed_dim;
        let mut caches: Vec<(ForwardCache, &[usize])> = Vec::with_capacity(starts.len());
        for &s in starts {
            let window = tokens
                .get(s..s + c + 1)
                .ok_or_else(|| Error::InvalidConfig(format!("window at {s} runs past {} tokens", tokens.len())))?;
            caches.push((forward_transformer(model, &window[..c])?, &window[1..]));
        }

        let algorithm = self.config.algorithm;
        let fb_blocks = model.config.n_blocks - 1;
        let mut signals: Vec<Option<Vec<Vec<f64>>>> = vec![None; caches.len()];
        if algorithm.uses_feedback() {
            let errors: Vec<Vec<f64>> = caches
                .iter()
                .map(|(cache, targets)| projector_error(model, cache, targets).map(|(_, ep)| ep))
                .collect::<Result<_>>()?;
            let channel = self.channel.as_ref().expect("feedback modes build a channel");
            if algorithm.needs_threshold() && channel.threshold().is_none() {
                let rows = match self.config.granularity {
                    Granularity::PerSample => errors.iter().flat_map(|ep| ep.chunks(e).map(<[f64]>::to_vec)).collect(),
                    Granularity::PerBatch => vec![mean_rows(&errors, e)],
                };
                self.pick_threshold(rows)?;
            }
            let channel = self.channel.as_mut().expect("feedback modes build a channel");
            match self.config.granularity {
                Granularity::PerSample => {
                    for (slot, ep) in signals.iter_mut().zip(&errors) {
                        *slot = Some(window_signals(channel, ep, e, fb_blocks, Granularity::PerSample)?);
                    }
                }
                Granularity::PerBatch => {
                    let s = channel.project(&mean_rows(&errors, e), fb_blocks)?;
                    for (slot, ep) in signals.iter_mut().zip(&errors) {
                        let mut out = vec![vec![0.0; ep.len()]; fb_blocks];
                        broadcast(&mut out, &s, ep.len() / e, e);
                        *slot = Some(out);
                    }
                }
            }
        }

        let mut grads = model.zero_like();
        let mut loss = 0.0;
        for ((cache, targets), sig) in caches.iter().zip(&signals) {
            loss += backward_with_signals(model, cache, targets, algorithm, sig.as_deref(), &mut grads)?;
        }
        let scale = 1.0 / starts.len() as f64;
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss at step {}", self.steps)));
        }
        grads.tensors_mut().into_iter().for_each(|t| t.scale_in_place(scale));

        self.optimizer.learning_rate = cosine_learning_rate(self.config.learning_rate, self.steps, self.total_steps);
        let g: Vec<&photon_dfa_core::Tensor> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
        if algorithm == Algorithm::Shlw {
            let trainable = shallow_mask(model);
            let mut params: Vec<&mut photon_dfa_core::Tensor> =
                model.tensors_mut().into_iter().zip(&trainable).filter(|(_, &k)| k).map(|(p, _)| p).collect();
            let g: Vec<&photon_dfa_core::Tensor> = g.into_iter().zip(&trainable).filter(|(_, &k)| k).map(|(t, _)| t).collect();
            apply_update(&mut params, &g, &mut self.optimizer)?;
        } else {
            apply_update(&mut model.tensors_mut(), &g, &mut self.optimizer)?;
        }
        if !model.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after step {}", self.steps)));
        }
        if let Some(ch) = self.channel.as_mut() {
            ch.advance_training_step()?;
        }
        self.steps += 1;
        Ok(loss)
    }

    /// Trains over every window of `tokens` per epoch, shuffled per epoch.
    pub fn fit(&mut self, model: &mut TransformerModel, tokens: &[usize], validation: Option<&[usize]>) -> Result<TrainingTrace> {
        let c = model.config.context_size;
        let windows = training_windows(tokens.len(), c, self.config.window_stride);
        if windows.is_empty() && self.config.epochs > 0 {
            return Err(Error::InvalidConfig(format!("{} tokens leave no window of context {c}", tokens.len())));
        }
        let per_epoch = windows.len().div_ceil(self.config.batch_size) as u64;
        self.total_steps = per_epoch * self.config.epochs as u64;
        let mut trace = TrainingTrace::new(config_hash(&(&self.config, &model.config))?, 0);
        let started = Instant::now();
        let record = |trainer: &Self, split, loss, accuracy| TraceRecord {
            step: trainer.steps,
            split,
            loss,
            accuracy,
            alignment: Vec::new(),
            optical_seconds: trainer.optical_seconds(),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(val) = validation {
            let (loss, acc) = evaluate_lm(model, val)?;
            trace.push(record(self, Split::Validation, loss, Some(acc)));
        }
        for epoch in 0..self.config.epochs {
            let mut order = windows.clone();
            order.shuffle(&mut derived(self.config.seed, &[0xe9, epoch as u64]));
            for batch in order.chunks(self.config.batch_size) {
                let loss = self.step(model, tokens, batch)?;
                if self.steps % self.config.record_every as u64 == 0 {
                    trace.push(record(self, Split::Train, loss, None));
                }
            }
            if let Some(val) = validation {
                let (loss, acc) = evaluate_lm(model, val)?;
                trace.push(record(self, Split::Validation, loss, Some(acc)));
            }
        }
        Ok(trace)
    }
}

fn mean_rows(errors: &[Vec<f64>], e: usize) -> Vec<f64> {
    let mut mean = vec![0.0; e];
    let mut count = 0usize;
    for ep in errors {
        for row in ep.chunks(e) {
            mean.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            count += 1;
        }
    }
    mean.iter_mut().for_each(|v| *v /= count.max(1) as f64);
    mean
}

/// Which tensors a shallow run updates: the last block, final norm and projector.
fn shallow_mask(model: &TransformerModel) -> Vec<bool> {
    let last = model.blocks.len() - 1;
    let mut mask = vec![false, false];
    for (i, b) in model.blocks.iter().enumerate() {
        mask.extend(std::iter::repeat_n(i == last, b.named_tensors().len()));
    }
    mask.extend([true, true, true]);
    mask
}

/// Mean next-token loss and accuracy over non-overlapping windows.
pub fn evaluate_lm(model: &TransformerModel, tokens: &[usize]) -> Result<(f64, f64)> {
    let c = model.config.context_size;
    let v = model.config.vocab_size;
    let starts = training_windows(tokens.len(), c, c);
    if starts.is_empty() {
        return Err(Error::InvalidConfig(format!("{} tokens leave no window of context {c}", tokens.len())));
    }
    let (mut loss, mut correct, mut total) = (0.0, 0usize, 0usize);
    for &s in &starts {
        let cache = forward_transformer(model, &tokens[s..s + c])?;
        let targets = &tokens[s + 1..s + c + 1];
        let (l, _) = projector_error(model, &cache, targets)?;
        loss += l;
        for (i, &t) in targets.iter().enumerate() {
            let row = &cache.logits()[i * v..(i + 1) * v];
            let best = (0..v).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            correct += usize::from(best == t);
            total += 1;
        }
    }
    Ok((loss / starts.len() as f64, correct as f64 / total as f64))
}

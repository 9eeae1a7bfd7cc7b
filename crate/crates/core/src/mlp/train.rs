use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::feedback::{BandLayout, DigitalFeedback, FeedbackMatrixSet};
use super::{alignment_probe, bp_deltas, deltas_from_signals, forward_mlp, ForwardCache, MlpGradients, MlpModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::softmax_cross_entropy_slice;
use crate::opu::{select_threshold_batch, ternarize, LatencyModel, NoiseSpec, OpuSession, SessionConfig};
use crate::optim::{apply_update, OptimizerSpec, OptimizerState};
use crate::rng::{derive_seed, derived, permutation};
use crate::trace::{config_hash, Split, TraceRecord, TrainingTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bp,
    Dfa,
    Tdfa,
    Odfa,
    /// Only the output layer trains, by exact gradient.
    Shlw,
}

impl Algorithm {
    pub fn uses_feedback(self) -> bool {
        matches!(self, Algorithm::Dfa | Algorithm::Tdfa | Algorithm::Odfa)
    }

    pub fn needs_threshold(self) -> bool {
        matches!(self, Algorithm::Tdfa | Algorithm::Odfa)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One projection of the batch-mean error per step.
    PerBatch,
    /// One projection per sample.
    #[default]
    PerSample,
}

fn default_validation_fraction() -> f64 {
    0.1
}

fn default_alignment_probes() -> usize {
    64
}

fn default_record_every() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerSpec,
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub band_layout: BandLayout,
    #[serde(default)]
    pub latency: LatencyModel,
    /// Fixed ternarization threshold; selected from the first batch when absent.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Validation samples averaged into each alignment reading.
    #[serde(default = "default_alignment_probes")]
    pub alignment_probes: usize,
    /// Training-loss records are kept every this many steps.
    #[serde(default = "default_record_every")]
    pub record_every: u64,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, batch_size: usize, epochs: usize, optimizer: OptimizerSpec, seed: u64) -> Self {
        Self {
            algorithm,
            batch_size,
            epochs,
            optimizer,
            seed,
            noise: NoiseSpec::NONE,
            granularity: Granularity::PerSample,
            validation_fraction: default_validation_fraction(),
            band_layout: BandLayout::Disjoint,
            latency: LatencyModel::default(),
            threshold: None,
            alignment_probes: default_alignment_probes(),
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.noise.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig("validation_fraction must lie in [0, 1)".into()));
        }
        if self.noise.is_active() && !self.algorithm.uses_feedback() {
            return Err(Error::InvalidConfig(format!(
                "noise models apply to feedback projections; {:?} has none",
                self.algorithm
            )));
        }
        if let Some(t) = self.threshold {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::InvalidConfig(format!("threshold {t} must be finite and >= 0")));
            }
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum FeedbackState {
    Exact,
    Digital(DigitalFeedback),
    Optical { session: OpuSession, layout: BandLayout },
}

/// Session settings an optical trainer builds for `model` under `config`.
/// Replaying a drift calibration against this config reproduces the exact
/// matrix trajectory the trainer will see.
pub fn session_config_for(model: &MlpModel, config: &TrainConfig) -> SessionConfig {
    let rows = config.band_layout.required_rows(model.hidden_dims()).max(1);
    SessionConfig::new(rows, model.output_dim(), derive_seed(config.seed, &[TAG_SESSION_SEED]))
        .with_noise(config.noise)
        .with_latency(config.latency)
}

/// Mini-batch trainer holding the optimizer and feedback state between steps.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    feedback: FeedbackState,
    optimizer: OptimizerState,
    threshold: Option<f64>,
    hidden_dims: Vec<usize>,
    steps: u64,
    grads: Option<MlpGradients>,
}

const TAG_FEEDBACK_SEED: u64 = 0xf0;
const TAG_SESSION_SEED: u64 = 0x0b;
const TAG_EPOCH: u64 = 0xe9;
const TAG_INIT: u64 = 0x1a;

impl Trainer {
    /// Validates the config against the model and builds the feedback source.
    pub fn new(model: &MlpModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let hidden = model.hidden_dims().to_vec();
        let out = model.output_dim();
        let feedback = match config.algorithm {
            Algorithm::Bp | Algorithm::Shlw => FeedbackState::Exact,
            Algorithm::Dfa | Algorithm::Tdfa => {
                let set = FeedbackMatrixSet::digital_gaussian(&hidden, out, derive_seed(config.seed, &[TAG_FEEDBACK_SEED]))?;
                FeedbackState::Digital(DigitalFeedback::new(set, config.noise)?)
            }
            Algorithm::Odfa => {
                let session_config = session_config_for(model, &config);
                FeedbackState::Optical {
                    session: OpuSession::new(&session_config)?,
                    layout: config.band_layout,
                }
            }
        };
        let mut trainer = Self {
            optimizer: OptimizerState::new(config.optimizer),
            threshold: None,
            hidden_dims: hidden,
            steps: 0,
            grads: None,
            feedback,
            config,
        };
        if let Some(t) = trainer.config.threshold {
            trainer.set_threshold(t)?;
        }
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Replaces the digital feedback matrices (noise settings are kept).
    pub fn with_feedback(mut self, set: FeedbackMatrixSet) -> Result<Self> {
        match &self.feedback {
            FeedbackState::Digital(_) => {
                self.feedback = FeedbackState::Digital(DigitalFeedback::new(set, self.config.noise)?);
                Ok(self)
            }
            _ => Err(Error::InvalidConfig("explicit feedback matrices need dfa or tdfa".into())),
        }
    }

    /// Replaces the optical session.
    pub fn with_session(mut self, session: OpuSession) -> Result<Self> {
        match &mut self.feedback {
            FeedbackState::Optical { session: s, .. } => {
                *s = session;
                if let Some(t) = self.threshold {
                    s.set_threshold(t)?;
                }
                Ok(self)
            }
            _ => Err(Error::InvalidConfig("an optical session needs odfa".into())),
        }
    }

    pub fn set_threshold(&mut self, t: f64) -> Result<()> {
        if let FeedbackState::Optical { session, .. } = &mut self.feedback {
            session.set_threshold(t)?;
        }
        self.threshold = Some(t);
        Ok(())
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Feedback projections issued so far.
    pub fn projections(&self) -> u64 {
        match &self.feedback {
            FeedbackState::Exact => 0,
            FeedbackState::Digital(d) => d.projections(),
            FeedbackState::Optical { session, .. } => session.step_counter(),
        }
    }

    pub fn optical_seconds(&self) -> f64 {
        match &self.feedback {
            FeedbackState::Optical { session, .. } => session.optical_seconds(),
            _ => 0.0,
        }
    }

    pub fn digital_feedback(&self) -> Option<&DigitalFeedback> {
        match &self.feedback {
            FeedbackState::Digital(d) => Some(d),
            _ => None,
        }
    }

    pub fn session(&self) -> Option<&OpuSession> {
        match &self.feedback {
            FeedbackState::Optical { session, .. } => Some(session),
            _ => None,
        }
    }

    /// Noiseless feedback matrices currently in effect, for alignment probes.
    pub fn feedback_snapshot(&self) -> Result<Option<FeedbackMatrixSet>> {
        match &self.feedback {
            FeedbackState::Exact => Ok(None),
            FeedbackState::Digital(d) => Ok(Some(d.current().clone())),
            FeedbackState::Optical { session, layout } => {
                Ok(Some(FeedbackMatrixSet::from_session(session, &self.hidden_dims, *layout)?))
            }
        }
    }

    fn hidden_signals(&mut self, e: &[f64]) -> Result<Vec<Vec<f64>>> {
        let algorithm = self.config.algorithm;
        let threshold = self.threshold;
        match &mut self.feedback {
            FeedbackState::Exact => Err(Error::InvalidConfig("no feedback source".into())),
            FeedbackState::Digital(d) => match algorithm {
                Algorithm::Tdfa => d.project_code(&ternarize(e, threshold.ok_or(Error::MissingThreshold)?)),
                _ => d.project(e),
            },
            FeedbackState::Optical { session, layout } => {
                let s = session.project_feedback(e)?;
                Ok(layout
                    .bands(&self.hidden_dims)
                    .into_iter()
                    .map(|(start, len)| s[start..start + len].to_vec())
                    .collect())
            }
        }
    }

    fn pick_threshold(&mut self, errors: &[Vec<f64>]) -> Result<()> {
        let choice = match &self.feedback {
            FeedbackState::Digital(d) => select_threshold_batch(errors, d.current())?,
            FeedbackState::Optical { session, .. } => select_threshold_batch(errors, session)?,
            FeedbackState::Exact => return Ok(()),
        };
        self.set_threshold(choice.threshold)
    }

    fn advance_noise(&mut self) -> Result<()> {
        match &mut self.feedback {
            FeedbackState::Exact => Ok(()),
            FeedbackState::Digital(d) => d.advance_training_step(),
            FeedbackState::Optical { session, .. } => session.advance_training_step(),
        }
    }

    /// One optimizer step on the given sample indices; returns the mean loss.
    pub fn step(&mut self, model: &mut MlpModel, data: &Dataset, batch: &[usize]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        let algorithm = self.config.algorithm;
        let mut caches: Vec<ForwardCache> = Vec::with_capacity(batch.len());
        let mut errors: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for &i in batch {
            let cache = forward_mlp(model, data.input(i))?;
            let (l, e) = softmax_cross_entropy_slice(cache.logits(), data.label(i))?;
            loss += l;
            caches.push(cache);
            errors.push(e);
        }
        let scale = 1.0 / batch.len() as f64;
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss at step {}", self.steps)));
        }
        let mean_error = || -> Vec<f64> {
            let mut m = vec![0.0; errors[0].len()];
            for e in &errors {
                m.iter_mut().zip(e).for_each(|(a, b)| *a += b);
            }
            m.iter_mut().for_each(|v| *v *= scale);
            m
        };
        if algorithm.needs_threshold() && self.threshold.is_none() {
            let probe = match self.config.granularity {
                Granularity::PerSample => errors.clone(),
                Granularity::PerBatch => vec![mean_error()],
            };
            self.pick_threshold(&probe)?;
        }

        let mut grads = self.grads.take().unwrap_or_else(|| MlpGradients::zeros_like(model));
        grads.weights.iter_mut().chain(grads.biases.iter_mut()).for_each(|t| t.scale_in_place(0.0));
        let last = model.depth() - 1;
        match (algorithm, self.config.granularity) {
            (Algorithm::Bp, _) => {
                for (cache, e) in caches.iter().zip(&errors) {
                    grads.accumulate(cache, &bp_deltas(model, cache, e)?, scale)?;
                }
            }
            (Algorithm::Shlw, _) => {
                for (cache, e) in caches.iter().zip(&errors) {
                    grads.accumulate_layer(last, cache, e, scale)?;
                }
            }
            (_, Granularity::PerSample) => {
                for (cache, e) in caches.iter().zip(&errors) {
                    let signals = self.hidden_signals(e)?;
                    grads.accumulate(cache, &deltas_from_signals(model, cache, e, &signals)?, scale)?;
                }
            }
            (_, Granularity::PerBatch) => {
                let signals = self.hidden_signals(&mean_error())?;
                for (cache, e) in caches.iter().zip(&errors) {
                    grads.accumulate(cache, &deltas_from_signals(model, cache, e, &signals)?, scale)?;
                }
            }
        }

        if algorithm == Algorithm::Shlw {
            let (w, b) = (&mut model.weights[last], &mut model.biases[last]);
            apply_update(&mut [w, b], &[&grads.weights[last], &grads.biases[last]], &mut self.optimizer)?;
        } else {
            let g = grads.tensors();
            apply_update(&mut model.parameters_mut(), &g, &mut self.optimizer)?;
        }
        if !model.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after step {}", self.steps)));
        }
        self.grads = Some(grads);
        self.advance_noise()?;
        self.steps += 1;
        Ok(loss)
    }

    fn alignment(&self, model: &MlpModel, probes: &Dataset) -> Result<Vec<Option<f64>>> {
        let hidden = self.hidden_dims.len();
        let Some(set) = self.feedback_snapshot()? else {
            return Ok(vec![None; hidden]);
        };
        let mut sums = vec![(0.0, 0usize); hidden];
        for i in 0..probes.len().min(self.config.alignment_probes) {
            let cache = forward_mlp(model, probes.input(i))?;
            let (_, e) = softmax_cross_entropy_slice(cache.logits(), probes.label(i))?;
            for (acc, c) in sums.iter_mut().zip(alignment_probe(model, &cache, &e, &set)?) {
                if let Some(c) = c {
                    acc.0 += c;
                    acc.1 += 1;
                }
            }
        }
        Ok(sums.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect())
    }

    /// Full training run: seeded validation split, shuffled mini-batches,
    /// a training-loss record per step and validation/test records per epoch.
    pub fn fit(&mut self, model: &mut MlpModel, data: &Dataset, test: Option<&Dataset>) -> Result<TrainingTrace> {
        if data.is_empty() {
            return Err(Error::InvalidConfig("training set is empty".into()));
        }
        if data.dim() != model.dims()[0] || data.classes() > model.output_dim() {
            return Err(Error::dim(
                "dataset vs model",
                &[data.dim(), data.classes()],
                &[model.dims()[0], model.output_dim()],
            ));
        }
        let (train, validation) = data.split_validation(self.config.validation_fraction, derive_seed(self.config.seed, &[TAG_INIT]))?;
        if train.is_empty() {
            return Err(Error::InvalidConfig("validation split leaves no training data".into()));
        }
        let start = Instant::now();
        let mut trace = TrainingTrace::new(config_hash(&self.config)?, self.hidden_dims.len());
        self.record_eval(&mut trace, model, &validation, Split::Validation, start)?;
        for epoch in 0..self.config.epochs {
            let order = permutation(&mut derived(self.config.seed, &[TAG_EPOCH, epoch as u64]), train.len());
            for batch in order.chunks(self.config.batch_size) {
                let loss = self.step(model, &train, batch)?;
                if self.steps % self.config.record_every == 0 {
                    trace.push(TraceRecord {
                        step: self.steps,
                        split: Split::Train,
                        loss,
                        accuracy: None,
                        alignment: Vec::new(),
                        optical_seconds: self.optical_seconds(),
                        wall_seconds: start.elapsed().as_secs_f64(),
                    });
                }
            }
            self.record_eval(&mut trace, model, &validation, Split::Validation, start)?;
            if let Some(test) = test {
                self.record_eval(&mut trace, model, test, Split::Test, start)?;
            }
        }
        Ok(trace)
    }

    fn record_eval(&self, trace: &mut TrainingTrace, model: &MlpModel, data: &Dataset, split: Split, start: Instant) -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        let (loss, accuracy) = evaluate(model, data)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite {} loss at step {}", split.as_str(), self.steps)));
        }
        let alignment = if split == Split::Validation {
            self.alignment(model, data)?
        } else {
            Vec::new()
        };
        trace.push(TraceRecord {
            step: self.steps,
            split,
            loss,
            accuracy: Some(accuracy),
            alignment,
            optical_seconds: self.optical_seconds(),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

/// Mean cross-entropy and accuracy (first maximal logit wins ties).
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate on an empty dataset".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..data.len() {
        let cache = forward_mlp(model, data.input(i))?;
        let logits = cache.logits();
        let (l, _) = softmax_cross_entropy_slice(logits, data.label(i))?;
        loss += l;
        let pred = logits
            .iter()
            .enumerate()
            .fold(0, |best, (k, &v)| if v > logits[best] { k } else { best });
        if pred == data.label(i) {
            correct += 1;
        }
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

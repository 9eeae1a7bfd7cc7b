use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ternary::{ternarize, TernaryCode};
use super::transmission::{sample_transmission_matrix, TransmissionMatrix};
use super::{LatencyModel, NoiseKind, NoiseSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived, normal_vec};
use crate::stats::pearson_correlation;
use crate::tensor::Tensor;

/// Anchor pixels dimmer than this cannot normalize the recovered projection.
pub const ANCHOR_FLOOR: f64 = 1e-12;

const TAG_TM_NOISE: u64 = 0x71;
const TAG_DRIFT: u64 = 0xd7;
const TAG_CAMERA: u64 = 0xca;
const MAX_ANCHOR_DRAWS: u64 = 64;

/// Binary reference frame; roughly half its pixels are on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorVector {
    pub r: Vec<f64>,
    pub seed: u64,
}

impl AnchorVector {
    /// Bernoulli(1/2) pixels, redrawn until at least one is on.
    pub fn sample(cols: usize, seed: u64) -> Self {
        let mut attempt = 0u64;
        loop {
            let mut rng = derived(seed, &[0xa7, attempt]);
            let r: Vec<f64> = (0..cols).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
            if r.iter().any(|&v| v != 0.0) {
                return Self { r, seed };
            }
            attempt += 1;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Only `{-1, 0, 1}` frames can be displayed.
    #[default]
    Hardware,
    /// Arbitrary real inputs, for checking the recovery algebra.
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub rows: usize,
    pub cols: usize,
    pub tm_seed: u64,
    pub anchor_seed: u64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub mode: EncoderMode,
}

impl SessionConfig {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        Self {
            rows,
            cols,
            tm_seed: seed,
            anchor_seed: derive_seed(seed, &[0xa4]),
            noise: NoiseSpec::NONE,
            latency: LatencyModel::default(),
            mode: EncoderMode::Hardware,
        }
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_latency(mut self, latency: LatencyModel) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_mode(mut self, mode: EncoderMode) -> Self {
        self.mode = mode;
        self
    }
}

/// Everything except the matrix itself; stored as the checkpoint trailer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMetadata {
    pub tm_seed: u64,
    pub anchor: AnchorVector,
    pub noise: NoiseSpec,
    pub latency: LatencyModel,
    pub mode: EncoderMode,
    pub threshold: Option<f64>,
    pub step_counter: u64,
    pub training_step: u64,
    pub drift_steps: u64,
    pub frames: u64,
}

/// A simulated device plus its bookkeeping.
///
/// `step_counter` counts feedback signals, `training_step` selects the
/// per-step matrix perturbation, and `drift_steps` counts permanent drift
/// increments applied to the stored matrix.
#[derive(Clone, Debug)]
pub struct OpuSession {
    tm: TransmissionMatrix,
    view: Option<TransmissionMatrix>,
    anchor: AnchorVector,
    anchor_intensity: Vec<f64>,
    noise: NoiseSpec,
    latency: LatencyModel,
    mode: EncoderMode,
    threshold: Option<f64>,
    step_counter: u64,
    training_step: u64,
    drift_steps: u64,
    frames: u64,
}

impl OpuSession {
    /// Samples the matrix and anchor; a degenerate anchor is redrawn.
    pub fn new(config: &SessionConfig) -> Result<Self> {
        config.noise.validate()?;
        let tm = sample_transmission_matrix(config.rows, config.cols, config.tm_seed)?;
        let mut session = Self::from_parts(tm, AnchorVector::sample(config.cols, config.anchor_seed), config)?;
        if session.degenerate_pixel().is_some() {
            session.reseed_anchor()?;
        }
        Ok(session)
    }

    /// Builds a session around an existing matrix and anchor without redrawing.
    pub fn from_parts(tm: TransmissionMatrix, anchor: AnchorVector, config: &SessionConfig) -> Result<Self> {
        if anchor.r.len() != tm.cols {
            return Err(Error::dim("anchor", &[tm.cols], &[anchor.r.len()]));
        }
        if anchor.r.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroVector("anchor"));
        }
        let anchor_intensity = tm.intensity(&anchor.r)?;
        let mut session = Self {
            tm,
            view: None,
            anchor,
            anchor_intensity,
            noise: config.noise,
            latency: config.latency,
            mode: config.mode,
            threshold: None,
            step_counter: 0,
            training_step: 0,
            drift_steps: 0,
            frames: 0,
        };
        session.rebuild_view()?;
        Ok(session)
    }

    pub fn rows(&self) -> usize {
        self.tm.rows
    }

    pub fn cols(&self) -> usize {
        self.tm.cols
    }

    /// Stored matrix: `T(0)` unless drift has been applied.
    pub fn transmission_matrix(&self) -> &TransmissionMatrix {
        &self.tm
    }

    pub fn anchor(&self) -> &AnchorVector {
        &self.anchor
    }

    pub fn anchor_intensity(&self) -> &[f64] {
        &self.anchor_intensity
    }

    pub fn noise(&self) -> NoiseSpec {
        self.noise
    }

    pub fn latency(&self) -> LatencyModel {
        self.latency
    }

    pub fn mode(&self) -> EncoderMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: EncoderMode) {
        self.mode = mode;
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn set_threshold(&mut self, t: f64) -> Result<()> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidConfig(format!("threshold {t} must be finite and >= 0")));
        }
        self.threshold = Some(t);
        Ok(())
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn training_step(&self) -> u64 {
        self.training_step
    }

    pub fn drift_steps(&self) -> u64 {
        self.drift_steps
    }

    /// Camera frames captured by feedback projections (anchor frames are cached).
    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Simulated optical seconds charged so far.
    pub fn optical_seconds(&self) -> f64 {
        self.latency.elapsed(self.step_counter)
    }

    fn degenerate_pixel(&self) -> Option<(usize, f64)> {
        self.anchor_intensity
            .iter()
            .enumerate()
            .find(|(_, &v)| v < ANCHOR_FLOOR)
            .map(|(i, &v)| (i, v))
    }

    /// Draws fresh anchors until every pixel clears [`ANCHOR_FLOOR`].
    pub fn reseed_anchor(&mut self) -> Result<()> {
        let base = self.anchor.seed;
        for k in 1..=MAX_ANCHOR_DRAWS {
            let anchor = AnchorVector::sample(self.cols(), derive_seed(base, &[0x5eed, k]));
            let intensity = self.tm.intensity(&anchor.r)?;
            if intensity.iter().all(|&v| v >= ANCHOR_FLOOR) {
                self.anchor = anchor;
                self.anchor_intensity = intensity;
                return Ok(());
            }
        }
        let (pixel, intensity) = self.degenerate_pixel().unwrap_or((0, 0.0));
        Err(Error::DegenerateAnchor { pixel, intensity })
    }

    fn current(&self) -> &TransmissionMatrix {
        self.view.as_ref().unwrap_or(&self.tm)
    }

    fn rebuild_view(&mut self) -> Result<()> {
        self.view = if self.noise.kind == NoiseKind::TmNoise && self.noise.is_active() {
            Some(self.noisy_tm_view()?)
        } else {
            None
        };
        Ok(())
    }

    /// `T(0)` plus this training step's perturbation. Calling twice in the
    /// same step gives the same matrix.
    pub fn noisy_tm_view(&self) -> Result<TransmissionMatrix> {
        if self.noise.kind != NoiseKind::TmNoise {
            return Err(Error::WrongNoiseKind {
                expected: NoiseKind::TmNoise,
                actual: self.noise.kind,
            });
        }
        let mut view = self.tm.clone();
        if self.noise.is_active() {
            let n = view.rows * view.cols;
            let sigma = self.noise.sigma;
            let re = normal_vec(&mut derived(self.noise.seed, &[TAG_TM_NOISE, self.training_step, 0]), n, sigma);
            let im = normal_vec(&mut derived(self.noise.seed, &[TAG_TM_NOISE, self.training_step, 1]), n, sigma);
            add_into(view.real.data_mut(), &re);
            add_into(view.imag.data_mut(), &im);
        }
        Ok(view)
    }

    /// Permanently adds `Normal(0, sigma²)` to both parts of the stored matrix.
    pub fn drift_step(&mut self) -> Result<()> {
        if self.noise.kind != NoiseKind::Drift {
            return Err(Error::WrongNoiseKind {
                expected: NoiseKind::Drift,
                actual: self.noise.kind,
            });
        }
        if self.noise.is_active() {
            let n = self.tm.rows * self.tm.cols;
            let sigma = self.noise.sigma;
            let re = normal_vec(&mut derived(self.noise.seed, &[TAG_DRIFT, self.drift_steps, 0]), n, sigma);
            let im = normal_vec(&mut derived(self.noise.seed, &[TAG_DRIFT, self.drift_steps, 1]), n, sigma);
            add_into(self.tm.real.data_mut(), &re);
            add_into(self.tm.imag.data_mut(), &im);
            self.anchor_intensity = self.tm.intensity(&self.anchor.r)?;
        }
        self.drift_steps += 1;
        Ok(())
    }

    /// Moves to the next training step: drifts the matrix or redraws the
    /// per-step perturbation depending on the noise kind.
    pub fn advance_training_step(&mut self) -> Result<()> {
        self.training_step += 1;
        match self.noise.kind {
            NoiseKind::Drift => self.drift_step(),
            NoiseKind::TmNoise => self.rebuild_view(),
            NoiseKind::None | NoiseKind::MeasurementNoise => Ok(()),
        }
    }

    fn check_encodable(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.cols() {
            return Err(Error::dim("linear_project", &[self.cols()], &[e.len()]));
        }
        if self.mode == EncoderMode::Hardware {
            if let Some((index, &value)) = e.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0 && v != -1.0) {
                return Err(Error::NotEncodable { index, value });
            }
        }
        Ok(())
    }

    /// One linear recovery from two fresh intensity frames and the cached
    /// anchor frame. `frame_tag` separates camera-noise draws within a step.
    fn recover(&self, e: &[f64], frame_tag: Option<u64>) -> Result<Vec<f64>> {
        if e.len() != self.cols() {
            return Err(Error::dim("linear_project", &[self.cols()], &[e.len()]));
        }
        if let Some((pixel, intensity)) = self.degenerate_pixel() {
            return Err(Error::DegenerateAnchor { pixel, intensity });
        }
        let tm = self.current();
        let mut i_e = tm.intensity(e)?;
        let r_minus_e: Vec<f64> = self.anchor.r.iter().zip(e).map(|(r, x)| r - x).collect();
        let mut i_d = tm.intensity(&r_minus_e)?;
        if let Some(tag) = frame_tag {
            self.camera_noise(&mut i_e, tag);
            self.camera_noise(&mut i_d, tag + 1);
        }
        Ok(self
            .anchor_intensity
            .iter()
            .zip(i_e.iter().zip(&i_d))
            .map(|(&i_r, (&a, &b))| (i_r + a - b) / (2.0 * i_r.sqrt()))
            .collect())
    }

    fn camera_noise(&self, frame: &mut [f64], tag: u64) {
        if self.noise.kind != NoiseKind::MeasurementNoise || !self.noise.is_active() {
            return;
        }
        let noise = normal_vec(
            &mut derived(self.noise.seed, &[TAG_CAMERA, self.step_counter, self.training_step, tag]),
            frame.len(),
            self.noise.sigma,
        );
        for (v, n) in frame.iter_mut().zip(noise) {
            *v = (*v + n).max(0.0);
        }
    }

    /// Recovers `s = Re(conj(u) ⊙ T e)` per pixel, with camera noise if configured.
    pub fn linear_project(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check_encodable(e)?;
        self.recover(e, Some(0))
    }

    fn project_code_tagged(&self, code: &TernaryCode) -> Result<Vec<f64>> {
        self.check_encodable(&code.plus)?;
        let sp = self.recover(&code.plus, Some(0))?;
        let sm = self.recover(&code.minus, Some(2))?;
        Ok(sp.iter().zip(&sm).map(|(a, b)| code.scale * (a - b)).collect())
    }

    /// Ternarizes `e` at the session threshold and projects both frames.
    /// Advances the signal counter and the latency ledger.
    pub fn project_feedback(&mut self, e: &[f64]) -> Result<Vec<f64>> {
        let t = self.threshold.ok_or(Error::MissingThreshold)?;
        let code = ternarize(e, t);
        self.project_feedback_code(&code)
    }

    pub fn project_feedback_code(&mut self, code: &TernaryCode) -> Result<Vec<f64>> {
        if code.len() != self.cols() {
            return Err(Error::dim("project_feedback", &[self.cols()], &[code.len()]));
        }
        let s = self.project_code_tagged(code)?;
        self.step_counter += 1;
        self.frames += 2 * self.latency.projections_per_signal as u64;
        Ok(s)
    }

    /// Noiseless recovery of an arbitrary real vector; bypasses the encoder check.
    pub fn project_real(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.recover(e, None)
    }

    /// `T_eff` probed one column at a time with one-hot inputs, without camera noise.
    pub fn effective_matrix(&self) -> Result<Tensor> {
        let (rows, cols) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(&[rows, cols])?;
        let mut probe = vec![0.0; cols];
        for j in 0..cols {
            probe[j] = 1.0;
            let col = self.recover(&probe, None)?;
            probe[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                out.set(i, j, v);
            }
        }
        Ok(out)
    }

    /// Applies drift and records `(step, PCC(s(step), s(0)))` for a fixed
    /// probe every `stride` steps, starting with step 0. Sessions without
    /// drift noise stay put, so every record reads 1.
    pub fn stability_trace(&mut self, probe: &[f64], steps: u64, stride: u64) -> Result<Vec<(u64, f64)>> {
        if probe.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroVector("stability_trace probe"));
        }
        let stride = stride.max(1);
        let s0 = self.project_real(probe)?;
        let mut trace = vec![(0, pearson_correlation(&s0, &s0)?)];
        for step in 1..=steps {
            if self.noise.kind == NoiseKind::Drift {
                self.drift_step()?;
            }
            if step % stride == 0 || step == steps {
                let s = self.project_real(probe)?;
                trace.push((step, pearson_correlation(&s, &s0)?));
            }
        }
        Ok(trace)
    }

    pub fn metadata(&self) -> SessionMetadata {
        SessionMetadata {
            tm_seed: self.tm.seed,
            anchor: self.anchor.clone(),
            noise: self.noise,
            latency: self.latency,
            mode: self.mode,
            threshold: self.threshold,
            step_counter: self.step_counter,
            training_step: self.training_step,
            drift_steps: self.drift_steps,
            frames: self.frames,
        }
    }

    /// Rebuilds a session from a stored matrix and its metadata.
    pub fn restore(tm: TransmissionMatrix, meta: SessionMetadata) -> Result<Self> {
        let config = SessionConfig {
            rows: tm.rows,
            cols: tm.cols,
            tm_seed: meta.tm_seed,
            anchor_seed: meta.anchor.seed,
            noise: meta.noise,
            latency: meta.latency,
            mode: meta.mode,
        };
        let mut s = Self::from_parts(tm, meta.anchor, &config)?;
        s.threshold = meta.threshold;
        s.step_counter = meta.step_counter;
        s.training_step = meta.training_step;
        s.drift_steps = meta.drift_steps;
        s.frames = meta.frames;
        s.rebuild_view()?;
        Ok(s)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

//! Fully connected networks with hand-written backward passes for
//! backpropagation and the direct-feedback family.

mod feedback;
mod train;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use feedback::{digital_drift_pcc, BandLayout, DigitalFeedback, FeedbackMatrixSet, FeedbackProvenance};
pub use train::{evaluate, session_config_for, Algorithm, Granularity, TrainConfig, Trainer};

use crate::activation::ActivationKind;
use crate::checkpoint::{pack_tensors, unpack_tensors, Checkpoint, CheckpointKind, TensorEntry};
use crate::error::{Error, Result};
use crate::opu::{ternarize, OpuSession};
use crate::rng::derived;
use crate::stats::cosine_similarity;
use crate::tensor::{add_outer, dot, matvec_transposed, Tensor};

/// Hidden layers use `hidden`; the output layer is linear and feeds a
/// softmax cross-entropy head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    dims: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    hidden: ActivationKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MlpManifest {
    dims: Vec<usize>,
    hidden: ActivationKind,
    tensors: Vec<TensorEntry>,
}

impl MlpModel {
    /// Weights uniform in `±1/sqrt(d_in)`, biases zero.
    pub fn new(dims: &[usize], hidden: ActivationKind, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(dims, hidden)?;
        for (l, w) in model.weights.iter_mut().enumerate() {
            let bound = 1.0 / (w.cols() as f64).sqrt();
            let mut rng = derived(seed, &[0x3e, l as u64]);
            w.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        Ok(model)
    }

    pub fn zeros(dims: &[usize], hidden: ActivationKind) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidShape {
                shape: dims.to_vec(),
                reason: "a network needs at least two positive layer sizes".into(),
            });
        }
        let weights = dims.windows(2).map(|p| Tensor::zeros(&[p[1], p[0]])).collect::<Result<_>>()?;
        let biases = dims[1..].iter().map(|&d| Tensor::zeros(&[d])).collect::<Result<_>>()?;
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
            hidden,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn hidden_activation(&self) -> ActivationKind {
        self.hidden
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Tensor] {
        &mut self.biases
    }

    pub fn parameter_count(&self) -> usize {
        self.dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    fn activation_of(&self, layer: usize) -> ActivationKind {
        if layer + 1 == self.depth() {
            ActivationKind::Identity
        } else {
            self.hidden
        }
    }

    /// Parameters in layer order, weight then bias.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(Tensor::is_finite)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let named = self.weights.iter().zip(&self.biases).enumerate().flat_map(|(l, (w, b))| {
            [(format!("layer{}.weight", l + 1), w), (format!("layer{}.bias", l + 1), b)]
        });
        let (data, tensors) = pack_tensors(named);
        let manifest = MlpManifest {
            dims: self.dims.clone(),
            hidden: self.hidden,
            tensors,
        };
        Checkpoint {
            kind: CheckpointKind::Mlp,
            dims: vec![data.len() as u64],
            data,
            trailer: serde_json::to_value(manifest).expect("manifest serializes"),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CheckpointKind::Mlp {
            return Err(Error::Format(format!("expected an mlp checkpoint, got {:?}", ck.kind)));
        }
        let manifest: MlpManifest = serde_json::from_value(ck.trailer.clone())?;
        let mut model = Self::zeros(&manifest.dims, manifest.hidden)?;
        let tensors = unpack_tensors(&ck.data, &manifest.tensors)?;
        if tensors.len() != 2 * model.depth() {
            return Err(Error::Format("layer manifest does not match dims".into()));
        }
        for (l, pair) in tensors.chunks(2).enumerate() {
            if pair[0].shape() != model.weights[l].shape() || pair[1].shape() != model.biases[l].shape() {
                return Err(Error::Format(format!("layer {} has the wrong shape", l + 1)));
            }
            model.weights[l] = pair[0].clone();
            model.biases[l] = pair[1].clone();
        }
        Ok(model)
    }
}

/// Values kept from the forward pass: `activations[0] = x`,
/// `activations[l] = g(h^(l))`, `preactivations[l - 1] = h^(l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    pub activations: Vec<Vec<f64>>,
    pub preactivations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("non-empty cache")
    }
}

pub fn forward_mlp(model: &MlpModel, x: &[f64]) -> Result<ForwardCache> {
    if x.len() != model.dims[0] {
        return Err(Error::dim("forward_mlp", &[model.dims[0]], &[x.len()]));
    }
    let mut activations = Vec::with_capacity(model.depth() + 1);
    let mut preactivations = Vec::with_capacity(model.depth());
    activations.push(x.to_vec());
    for l in 0..model.depth() {
        let w = &model.weights[l];
        let a = activations.last().expect("input pushed");
        let h: Vec<f64> = (0..w.rows()).map(|i| dot(w.row(i), a) + model.biases[l].data()[i]).collect();
        activations.push(model.activation_of(l).apply_slice(&h));
        preactivations.push(h);
    }
    Ok(ForwardCache {
        activations,
        preactivations,
    })
}

/// Parameter gradients, shaped like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl MlpGradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(Tensor::zeros_like).collect(),
            biases: model.biases.iter().map(Tensor::zeros_like).collect(),
        }
    }

    /// `∇W^(l) += scale · δh^(l) a^(l-1)ᵀ`, `∇b^(l) += scale · δh^(l)` for every layer.
    pub fn accumulate(&mut self, cache: &ForwardCache, deltas: &[Vec<f64>], scale: f64) -> Result<()> {
        if deltas.len() != self.weights.len() {
            return Err(Error::dim("gradient accumulate", &[self.weights.len()], &[deltas.len()]));
        }
        for l in 0..deltas.len() {
            self.accumulate_layer(l, cache, &deltas[l], scale)?;
        }
        Ok(())
    }

    pub fn accumulate_layer(&mut self, layer: usize, cache: &ForwardCache, delta: &[f64], scale: f64) -> Result<()> {
        add_outer(&mut self.weights[layer], scale, delta, &cache.activations[layer])?;
        for (b, d) in self.biases[layer].data_mut().iter_mut().zip(delta) {
            *b += scale * d;
        }
        Ok(())
    }

    pub fn from_deltas(model: &MlpModel, cache: &ForwardCache, deltas: &[Vec<f64>]) -> Result<Self> {
        let mut g = Self::zeros_like(model);
        g.accumulate(cache, deltas, 1.0)?;
        Ok(g)
    }

    /// Tensors in layer order, weight then bias, matching [`MlpModel::parameters_mut`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }
}

/// Layer deltas `δh^(1..L)` together with the parameter gradients they imply.
#[derive(Clone, Debug, PartialEq)]
pub struct Backward {
    pub deltas: Vec<Vec<f64>>,
    pub gradients: MlpGradients,
}

fn check_error(model: &MlpModel, cache: &ForwardCache, e: &[f64]) -> Result<()> {
    if e.len() != model.output_dim() {
        return Err(Error::dim("output error", &[model.output_dim()], &[e.len()]));
    }
    if cache.preactivations.len() != model.depth() {
        return Err(Error::dim("forward cache", &[model.depth()], &[cache.preactivations.len()]));
    }
    Ok(())
}

/// Exact chain-rule deltas.
pub fn bp_deltas(model: &MlpModel, cache: &ForwardCache, e: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_error(model, cache, e)?;
    let depth = model.depth();
    let mut deltas = vec![Vec::new(); depth];
    deltas[depth - 1] = e.to_vec();
    for l in (0..depth - 1).rev() {
        let back = matvec_transposed(&model.weights[l + 1], &deltas[l + 1])?;
        let gp = model.hidden.derivative_slice(&cache.preactivations[l]);
        deltas[l] = back.iter().zip(&gp).map(|(a, b)| a * b).collect();
    }
    Ok(deltas)
}

/// Deltas when every hidden layer receives its own feedback signal:
/// `δh^(l) = s^(l) ⊙ g'(h^(l))`; the output layer keeps the exact error.
pub fn deltas_from_signals(model: &MlpModel, cache: &ForwardCache, e: &[f64], signals: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_error(model, cache, e)?;
    let hidden = model.depth() - 1;
    if signals.len() != hidden {
        return Err(Error::dim("feedback signals", &[hidden], &[signals.len()]));
    }
    let mut deltas = Vec::with_capacity(model.depth());
    for (l, s) in signals.iter().enumerate() {
        deltas.push(hidden_delta(model, cache, l, s)?);
    }
    deltas.push(e.to_vec());
    Ok(deltas)
}

fn hidden_delta(model: &MlpModel, cache: &ForwardCache, layer: usize, signal: &[f64]) -> Result<Vec<f64>> {
    let h = &cache.preactivations[layer];
    if signal.len() != h.len() {
        return Err(Error::dim("feedback signal", &[h.len()], &[signal.len()]));
    }
    Ok(signal
        .iter()
        .zip(h)
        .map(|(s, &x)| s * model.hidden.derivative(x))
        .collect())
}

pub fn backward_bp(model: &MlpModel, cache: &ForwardCache, e: &[f64]) -> Result<Backward> {
    let deltas = bp_deltas(model, cache, e)?;
    let gradients = MlpGradients::from_deltas(model, cache, &deltas)?;
    Ok(Backward { deltas, gradients })
}

pub fn dfa_deltas(model: &MlpModel, cache: &ForwardCache, e: &[f64], feedback: &FeedbackMatrixSet) -> Result<Vec<Vec<f64>>> {
    feedback.check_against(model)?;
    deltas_from_signals(model, cache, e, &feedback.signals(e)?)
}

pub fn backward_dfa(model: &MlpModel, cache: &ForwardCache, e: &[f64], feedback: &FeedbackMatrixSet) -> Result<Backward> {
    let deltas = dfa_deltas(model, cache, e, feedback)?;
    let gradients = MlpGradients::from_deltas(model, cache, &deltas)?;
    Ok(Backward { deltas, gradients })
}

/// [`backward_dfa`] with hidden layers split across `threads` scoped
/// threads. Each layer's work is independent, so the result is bit-identical.
pub fn backward_dfa_parallel(
    model: &MlpModel,
    cache: &ForwardCache,
    e: &[f64],
    feedback: &FeedbackMatrixSet,
    threads: usize,
) -> Result<Backward> {
    feedback.check_against(model)?;
    check_error(model, cache, e)?;
    let depth = model.depth();
    let threads = threads.clamp(1, depth);
    let layers: Vec<usize> = (0..depth).collect();
    let per = depth.div_ceil(threads);
    let mut results: Vec<Result<Vec<(usize, Vec<f64>, Tensor, Tensor)>>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = layers
            .chunks(per)
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|&l| {
                            let delta = if l + 1 == depth {
                                e.to_vec()
                            } else {
                                let s = crate::tensor::matvec(&feedback.matrices[l], e)?;
                                hidden_delta(model, cache, l, &s)?
                            };
                            let mut gw = model.weights[l].zeros_like();
                            add_outer(&mut gw, 1.0, &delta, &cache.activations[l])?;
                            let mut gb = model.biases[l].zeros_like();
                            gb.data_mut().iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
                            Ok((l, delta, gw, gb))
                        })
                        .collect()
                })
            })
            .collect();
        results = handles.into_iter().map(|h| h.join().expect("feedback worker panicked")).collect();
    });
    let mut deltas = vec![Vec::new(); depth];
    let mut gradients = MlpGradients::zeros_like(model);
    for chunk in results {
        for (l, delta, gw, gb) in chunk? {
            deltas[l] = delta;
            gradients.weights[l] = gw;
            gradients.biases[l] = gb;
        }
    }
    Ok(Backward { deltas, gradients })
}

/// DFA with the error replaced by `scale · (e⁺ − e⁻)` for the hidden layers.
pub fn backward_tdfa(
    model: &MlpModel,
    cache: &ForwardCache,
    e: &[f64],
    feedback: &FeedbackMatrixSet,
    threshold: f64,
) -> Result<Backward> {
    feedback.check_against(model)?;
    let code = ternarize(e, threshold);
    let signals = feedback.signals(&code.scaled_difference())?;
    let deltas = deltas_from_signals(model, cache, e, &signals)?;
    let gradients = MlpGradients::from_deltas(model, cache, &deltas)?;
    Ok(Backward { deltas, gradients })
}

/// Hidden signals come from one session projection, split into row bands.
pub fn backward_odfa(
    model: &MlpModel,
    cache: &ForwardCache,
    e: &[f64],
    session: &mut OpuSession,
    layout: BandLayout,
) -> Result<Backward> {
    check_error(model, cache, e)?;
    let bands = layout.bands(model.hidden_dims());
    let need = layout.required_rows(model.hidden_dims());
    if session.rows() < need || session.cols() != model.output_dim() {
        return Err(Error::dim("odfa session", &[need, model.output_dim()], &[session.rows(), session.cols()]));
    }
    let s = session.project_feedback(e)?;
    let signals: Vec<Vec<f64>> = bands.iter().map(|&(start, len)| s[start..start + len].to_vec()).collect();
    let deltas = deltas_from_signals(model, cache, e, &signals)?;
    let gradients = MlpGradients::from_deltas(model, cache, &deltas)?;
    Ok(Backward { deltas, gradients })
}

/// Cosine between feedback and exact deltas for each hidden layer; `None`
/// where either delta vanishes.
pub fn alignment_probe(model: &MlpModel, cache: &ForwardCache, e: &[f64], feedback: &FeedbackMatrixSet) -> Result<Vec<Option<f64>>> {
    let bp = bp_deltas(model, cache, e)?;
    let dfa = dfa_deltas(model, cache, e, feedback)?;
    Ok((0..model.depth() - 1)
        .map(|l| cosine_similarity(&dfa[l], &bp[l]).ok())
        .collect())
}

#[cfg(test)]
mod tests;

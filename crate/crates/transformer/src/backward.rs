use photon_dfa_core::loss::softmax_cross_entropy_slice;
use photon_dfa_core::mlp::{Algorithm, BandLayout, DigitalFeedback, FeedbackMatrixSet, Granularity};
use photon_dfa_core::opu::{ternarize, NoiseSpec, OpuSession};
use photon_dfa_core::{Error, Result};

use crate::forward::{BlockCache, ForwardCache};
use crate::model::{DecoderBlock, TransformerConfig, TransformerModel};
use crate::ops::{causal_attention_backward, layer_norm_backward, linear_backward};

/// Source of the per-block feedback signals. Every block except the last
/// gets one `embed_dim` band of the projection.
#[derive(Clone, Debug)]
pub enum FeedbackChannel {
    /// Gaussian matrices. With `ternary` the error is ternarized first,
    /// which needs `threshold` to be set.
    Digital {
        feedback: DigitalFeedback,
        ternary: bool,
        threshold: Option<f64>,
    },
    Optical {
        session: OpuSession,
        layout: BandLayout,
    },
}

pub(crate) fn feedback_dims(config: &TransformerConfig) -> Vec<usize> {
    vec![config.embed_dim; config.n_blocks - 1]
}

impl FeedbackChannel {
    pub fn digital(config: &TransformerConfig, seed: u64, noise: NoiseSpec, ternary: bool) -> Result<Self> {
        let set = FeedbackMatrixSet::digital_gaussian(&feedback_dims(config), config.embed_dim, seed)?;
        Ok(FeedbackChannel::Digital {
            feedback: DigitalFeedback::new(set, noise)?,
            ternary,
            threshold: None,
        })
    }

    /// The matrices a noiseless session applies, as a digital ternary channel.
    pub fn oracle_of(session: &OpuSession, config: &TransformerConfig, layout: BandLayout) -> Result<Self> {
        let set = FeedbackMatrixSet::from_session(session, &feedback_dims(config), layout)?;
        Ok(FeedbackChannel::Digital {
            feedback: DigitalFeedback::new(set, NoiseSpec::NONE)?,
            ternary: true,
            threshold: Some(session.threshold().ok_or(Error::MissingThreshold)?),
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            FeedbackChannel::Digital { ternary: false, .. } => Algorithm::Dfa,
            FeedbackChannel::Digital { ternary: true, .. } => Algorithm::Tdfa,
            FeedbackChannel::Optical { .. } => Algorithm::Odfa,
        }
    }

    pub fn set_threshold(&mut self, t: f64) -> Result<()> {
        match self {
            FeedbackChannel::Digital { threshold, .. } => {
                *threshold = Some(t);
                Ok(())
            }
            FeedbackChannel::Optical { session, .. } => session.set_threshold(t),
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        match self {
            FeedbackChannel::Digital { threshold, .. } => *threshold,
            FeedbackChannel::Optical { session, .. } => session.threshold(),
        }
    }

    pub fn projections(&self) -> u64 {
        match self {
            FeedbackChannel::Digital { feedback, .. } => feedback.projections(),
            FeedbackChannel::Optical { session, .. } => session.step_counter(),
        }
    }

    pub fn optical_seconds(&self) -> f64 {
        match self {
            FeedbackChannel::Digital { .. } => 0.0,
            FeedbackChannel::Optical { session, .. } => session.optical_seconds(),
        }
    }

    pub fn advance_training_step(&mut self) -> Result<()> {
        match self {
            FeedbackChannel::Digital { feedback, .. } => feedback.advance_training_step(),
            FeedbackChannel::Optical { session, .. } => session.advance_training_step(),
        }
    }

    /// One projection of `e`, split into one signal per feedback block.
    pub fn project(&mut self, e: &[f64], blocks: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            FeedbackChannel::Digital {
                feedback,
                ternary,
                threshold,
            } => {
                if *ternary {
                    let t = threshold.ok_or(Error::MissingThreshold)?;
                    feedback.project_code(&ternarize(e, t))
                } else {
                    feedback.project(e)
                }
            }
            FeedbackChannel::Optical { session, layout } => {
                let dims = vec![e.len(); blocks];
                let need = layout.required_rows(&dims);
                if session.rows() < need || session.cols() != e.len() {
                    return Err(Error::dim("transformer session", &[need, e.len()], &[session.rows(), session.cols()]));
                }
                let s = session.project_feedback(e)?;
                Ok(layout.bands(&dims).into_iter().map(|(start, len)| s[start..start + len].to_vec()).collect())
            }
        }
    }
}

/// Mean next-token loss, and the error at the projector's input
/// (`[seq, embed]`), for one window.
pub fn projector_error(model: &TransformerModel, cache: &ForwardCache, targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (loss, dlogits) = logits_error(model, cache, targets)?;
    Ok((loss, error_at_projector(model, &dlogits)))
}

fn logits_error(model: &TransformerModel, cache: &ForwardCache, targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (n, v) = (cache.len(), model.config.vocab_size);
    if targets.len() != n {
        return Err(Error::dim("transformer targets", &[n], &[targets.len()]));
    }
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; n * v];
    for i in 0..n {
        let (l, e) = softmax_cross_entropy_slice(&cache.logits[i * v..(i + 1) * v], targets[i])?;
        loss += l / n as f64;
        for (d, g) in dlogits[i * v..(i + 1) * v].iter_mut().zip(e) {
            *d = g / n as f64;
        }
    }
    Ok((loss, dlogits))
}

fn error_at_projector(model: &TransformerModel, dlogits: &[f64]) -> Vec<f64> {
    let (v, e) = (model.config.vocab_size, model.config.embed_dim);
    let n = dlogits.len() / v;
    let mut dz = vec![0.0; n * e];
    for i in 0..n {
        for o in 0..v {
            let g = dlogits[i * v + o];
            let row = model.projector.row(o);
            for d in 0..e {
                dz[i * e + d] += g * row[d];
            }
        }
    }
    dz
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Path {
    /// Chain rule with relu' and residual branches.
    Exact,
    /// tanh' in place of relu', residual branches dropped.
    Feedback,
}

fn block_backward(block: &DecoderBlock, cache: &BlockCache, dy: &[f64], g: &mut DecoderBlock, path: Path) -> Vec<f64> {
    let e = block.wq.rows();
    let n = dy.len() / e;
    let heads = n_heads_of(cache, n);

    let last = block.mlp_weights.len() - 1;
    let mut d = dy.to_vec();
    for l in (0..=last).rev() {
        if l != last {
            for (dv, &p) in d.iter_mut().zip(&cache.mlp_pre[l]) {
                *dv *= match path {
                    Path::Exact => f64::from(p > 0.0),
                    Path::Feedback => 1.0 - p.tanh().powi(2),
                };
            }
        }
        let (gw, gb) = (&mut g.mlp_weights[l], &mut g.mlp_biases[l]);
        d = linear_backward(&d, &cache.mlp_inputs[l], &block.mlp_weights[l], gw, Some(gb));
    }
    let mut dx_mid = layer_norm_backward(&d, &cache.ln2, &block.ln2_gain, &mut g.ln2_gain, &mut g.ln2_shift);
    if path == Path::Exact {
        dx_mid.iter_mut().zip(dy).for_each(|(a, b)| *a += b);
    }

    let d_att = linear_backward(&dx_mid, &cache.attended, &block.wo, &mut g.wo, Some(&mut g.bo));
    let (dq, dk, dv) = causal_attention_backward(&d_att, &cache.q, &cache.k, &cache.v, &cache.probs, n, heads, e);
    let mut du = linear_backward(&dq, &cache.u, &block.wq, &mut g.wq, Some(&mut g.bq));
    for (dproj, w, gw, gb) in [(&dk, &block.wk, &mut g.wk, &mut g.bk), (&dv, &block.wv, &mut g.wv, &mut g.bv)] {
        let part = linear_backward(dproj, &cache.u, w, gw, Some(gb));
        du.iter_mut().zip(part).for_each(|(a, b)| *a += b);
    }
    let mut dx = layer_norm_backward(&du, &cache.ln1, &block.ln1_gain, &mut g.ln1_gain, &mut g.ln1_shift);
    if path == Path::Exact {
        dx.iter_mut().zip(&dx_mid).for_each(|(a, b)| *a += b);
    }
    dx
}

fn n_heads_of(cache: &BlockCache, n: usize) -> usize {
    cache.probs.len() / (n * n)
}

/// Backward pass of one block driven by a feedback signal at its output
/// (`[seq, embed]`). Accumulates into `grads` and returns the signal at the
/// block's input. Reads only this block's parameters and cache.
pub fn feedback_block_backward(block: &DecoderBlock, cache: &BlockCache, signal: &[f64], grads: &mut DecoderBlock) -> Vec<f64> {
    block_backward(block, cache, signal, grads, Path::Feedback)
}

fn embedding_backward(cache: &ForwardCache, d: &[f64], grads: &mut TransformerModel) {
    let e = grads.config.embed_dim;
    for (i, &t) in cache.tokens.iter().enumerate() {
        let row = &d[i * e..(i + 1) * e];
        grads.token_embedding.row_mut(t).iter_mut().zip(row).for_each(|(a, b)| *a += b);
        grads.position_embedding.row_mut(i).iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
}

/// Accumulates one window's gradients into `grads` and returns its loss.
///
/// The projector, final norm and last block always get exact gradients.
/// For feedback modes `signals[b]` (`[seq, embed]`) drives block `b` for
/// every block but the last; the embeddings take whatever reaches the first
/// block's input.
pub fn backward_with_signals(
    model: &TransformerModel,
    cache: &ForwardCache,
    targets: &[usize],
    mode: Algorithm,
    signals: Option<&[Vec<f64>]>,
    grads: &mut TransformerModel,
) -> Result<f64> {
    let (loss, dlogits) = logits_error(model, cache, targets)?;
    let v = model.config.vocab_size;
    for i in 0..cache.len() {
        let z = &cache.projector_input[i * model.config.embed_dim..(i + 1) * model.config.embed_dim];
        for o in 0..v {
            let g = dlogits[i * v + o];
            grads.projector.row_mut(o).iter_mut().zip(z).for_each(|(a, b)| *a += g * b);
        }
    }
    let dz = error_at_projector(model, &dlogits);
    let d_resid = layer_norm_backward(&dz, &cache.final_ln, &model.final_gain, &mut grads.final_gain, &mut grads.final_shift);
    let last = model.blocks.len() - 1;
    let mut d = block_backward(&model.blocks[last], &cache.blocks[last], &d_resid, &mut grads.blocks[last], Path::Exact);

    match mode {
        Algorithm::Bp => {
            for b in (0..last).rev() {
                d = block_backward(&model.blocks[b], &cache.blocks[b], &d, &mut grads.blocks[b], Path::Exact);
            }
            embedding_backward(cache, &d, grads);
        }
        Algorithm::Shlw => {}
        Algorithm::Dfa | Algorithm::Tdfa | Algorithm::Odfa => {
            let signals = signals.unwrap_or(&[]);
            if signals.len() != last {
                return Err(Error::dim("transformer feedback signals", &[last], &[signals.len()]));
            }
            for b in 0..last {
                if signals[b].len() != d_resid.len() {
                    return Err(Error::dim("transformer feedback signal", &[d_resid.len()], &[signals[b].len()]));
                }
                let dx = feedback_block_backward(&model.blocks[b], &cache.blocks[b], &signals[b], &mut grads.blocks[b]);
                if b == 0 {
                    d = dx;
                }
            }
            embedding_backward(cache, &d, grads);
        }
    }
    Ok(loss)
}

/// Per-block signals for one window: one projection per position, or one
/// projection of the position-mean error reused everywhere.
pub(crate) fn window_signals(
    channel: &mut FeedbackChannel,
    e_p: &[f64],
    embed: usize,
    blocks: usize,
    granularity: Granularity,
) -> Result<Vec<Vec<f64>>> {
    let n = e_p.len() / embed;
    let mut out = vec![vec![0.0; n * embed]; blocks];
    match granularity {
        Granularity::PerSample => {
            for i in 0..n {
                let s = channel.project(&e_p[i * embed..(i + 1) * embed], blocks)?;
                for (b, sb) in s.iter().enumerate() {
                    out[b][i * embed..(i + 1) * embed].copy_from_slice(sb);
                }
            }
        }
        Granularity::PerBatch => {
            let mut mean = vec![0.0; embed];
            for i in 0..n {
                mean.iter_mut().zip(&e_p[i * embed..(i + 1) * embed]).for_each(|(a, b)| *a += b / n as f64);
            }
            let s = channel.project(&mean, blocks)?;
            broadcast(&mut out, &s, n, embed);
        }
    }
    Ok(out)
}

pub(crate) fn broadcast(out: &mut [Vec<f64>], s: &[Vec<f64>], n: usize, embed: usize) {
    for (b, sb) in s.iter().enumerate() {
        for i in 0..n {
            out[b][i * embed..(i + 1) * embed].copy_from_slice(sb);
        }
    }
}

/// Gradients for one window. `channel` must match `mode`: none for bp and
/// shlw, digital for dfa and tdfa, optical for odfa.
pub fn backward_transformer(
    model: &TransformerModel,
    cache: &ForwardCache,
    targets: &[usize],
    mode: Algorithm,
    channel: Option<&mut FeedbackChannel>,
    granularity: Granularity,
) -> Result<(f64, TransformerModel)> {
    let mut grads = model.zero_like();
    let blocks = model.blocks.len() - 1;
    let signals = match (mode.uses_feedback(), channel) {
        (false, _) => None,
        (true, Some(ch)) => {
            if ch.algorithm() != mode {
                return Err(Error::InvalidConfig(format!("{mode:?} mode cannot use a {:?} channel", ch.algorithm())));
            }
            if blocks == 0 {
                None
            } else {
                let (_, e_p) = projector_error(model, cache, targets)?;
                Some(window_signals(ch, &e_p, model.config.embed_dim, blocks, granularity)?)
            }
        }
        (true, None) => return Err(Error::InvalidConfig(format!("{mode:?} mode needs a feedback channel"))),
    };
    let loss = backward_with_signals(model, cache, targets, mode, signals.as_deref(), &mut grads)?;
    Ok((loss, grads))
}

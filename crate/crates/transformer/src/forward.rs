use photon_dfa_core::{Error, Result};

use crate::model::{DecoderBlock, TransformerModel};
use crate::ops::{causal_attention, layer_norm, linear, LayerNormCache};

/// Everything one block's backward pass needs.
pub struct BlockCache {
    pub(crate) x_in: Vec<f64>,
    pub(crate) ln1: LayerNormCache,
    pub(crate) u: Vec<f64>,
    pub(crate) q: Vec<f64>,
    pub(crate) k: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub(crate) probs: Vec<f64>,
    pub(crate) attended: Vec<f64>,
    pub(crate) ln2: LayerNormCache,
    /// Input to each MLP layer; the first is the second layer norm's output.
    pub(crate) mlp_inputs: Vec<Vec<f64>>,
    pub(crate) mlp_pre: Vec<Vec<f64>>,
    pub(crate) x_out: Vec<f64>,
}

impl BlockCache {
    pub fn input(&self) -> &[f64] {
        &self.x_in
    }

    pub fn output(&self) -> &[f64] {
        &self.x_out
    }

    /// Attention weights `[head][query][key]`.
    pub fn attention(&self) -> &[f64] {
        &self.probs
    }
}

pub struct ForwardCache {
    pub(crate) tokens: Vec<usize>,
    pub(crate) blocks: Vec<BlockCache>,
    pub(crate) residual: Vec<f64>,
    pub(crate) final_ln: LayerNormCache,
    pub(crate) projector_input: Vec<f64>,
    pub(crate) logits: Vec<f64>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    /// `[seq, vocab]`, row-major.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn blocks(&self) -> &[BlockCache] {
        &self.blocks
    }

    /// Output of the last block, before the final norm.
    pub fn final_residual(&self) -> &[f64] {
        &self.residual
    }

    /// Input of the vocabulary projector, `[seq, embed]`.
    pub fn projector_input(&self) -> &[f64] {
        &self.projector_input
    }
}

fn block_forward(block: &DecoderBlock, x: Vec<f64>, n: usize, heads: usize, e: usize) -> BlockCache {
    let (u, ln1) = layer_norm(&x, &block.ln1_gain, &block.ln1_shift);
    let q = linear(&u, &block.wq, Some(&block.bq));
    let k = linear(&u, &block.wk, Some(&block.bk));
    let v = linear(&u, &block.wv, Some(&block.bv));
    let (attended, probs) = causal_attention(&q, &k, &v, n, heads, e);
    let a = linear(&attended, &block.wo, Some(&block.bo));
    let x_mid: Vec<f64> = x.iter().zip(&a).map(|(p, q)| p + q).collect();
    let (mut h, ln2) = layer_norm(&x_mid, &block.ln2_gain, &block.ln2_shift);
    let last = block.mlp_weights.len() - 1;
    let mut mlp_inputs = Vec::with_capacity(last + 1);
    let mut mlp_pre = Vec::with_capacity(last + 1);
    for (l, (w, b)) in block.mlp_weights.iter().zip(&block.mlp_biases).enumerate() {
        let pre = linear(&h, w, Some(b));
        mlp_inputs.push(h);
        h = if l == last { pre.clone() } else { pre.iter().map(|v| v.max(0.0)).collect() };
        mlp_pre.push(pre);
    }
    let x_out = x_mid.iter().zip(&h).map(|(p, q)| p + q).collect();
    BlockCache {
        x_in: x,
        ln1,
        u,
        q,
        k,
        v,
        probs,
        attended,
        ln2,
        mlp_inputs,
        mlp_pre,
        x_out,
    }
}

/// Runs the decoder on up to `context_size` tokens.
pub fn forward_transformer(model: &TransformerModel, tokens: &[usize]) -> Result<ForwardCache> {
    let c = &model.config;
    let (n, e) = (tokens.len(), c.embed_dim);
    if n == 0 || n > c.context_size {
        return Err(Error::InvalidConfig(format!("sequence length {n} outside 1..={}", c.context_size)));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= c.vocab_size) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: c.vocab_size,
        });
    }
    let mut x = vec![0.0; n * e];
    for (i, &t) in tokens.iter().enumerate() {
        let (tok, pos) = (model.token_embedding.row(t), model.position_embedding.row(i));
        for d in 0..e {
            x[i * e + d] = tok[d] + pos[d];
        }
    }
    let mut blocks = Vec::with_capacity(model.blocks.len());
    for block in &model.blocks {
        let cache = block_forward(block, x, n, c.n_heads, e);
        x = cache.x_out.clone();
        blocks.push(cache);
    }
    let (z, final_ln) = layer_norm(&x, &model.final_gain, &model.final_shift);
    let logits = linear(&z, &model.projector, None);
    Ok(ForwardCache {
        tokens: tokens.to_vec(),
        blocks,
        residual: x,
        final_ln,
        projector_input: z,
        logits,
    })
}

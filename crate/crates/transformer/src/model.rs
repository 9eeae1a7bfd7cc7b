use rand::Rng as _;
use serde::{Deserialize, Serialize};

use photon_dfa_core::checkpoint::{pack_tensors, unpack_tensors, Checkpoint, CheckpointKind, TensorEntry};
use photon_dfa_core::rng::derived;
use photon_dfa_core::{Error, Result, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Widths through each block's MLP; first and last equal `embed_dim`.
    pub mlp_dims: Vec<usize>,
    pub context_size: usize,
}

impl TransformerConfig {
    /// Embed 64, 4 blocks of 4 heads, MLP [64, 96, 64], context 24.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            n_blocks: 4,
            n_heads: 4,
            mlp_dims: vec![64, 96, 64],
            context_size: 24,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidConfig(reason));
        if [self.vocab_size, self.embed_dim, self.n_blocks, self.n_heads, self.context_size].contains(&0) {
            return bad("transformer sizes must all be positive".into());
        }
        if self.embed_dim % self.n_heads != 0 {
            return bad(format!("embed_dim {} not divisible by n_heads {}", self.embed_dim, self.n_heads));
        }
        if self.mlp_dims.len() < 2
            || self.mlp_dims[0] != self.embed_dim
            || *self.mlp_dims.last().unwrap() != self.embed_dim
            || self.mlp_dims.contains(&0)
        {
            return bad(format!("mlp_dims {:?} must start and end at embed_dim {}", self.mlp_dims, self.embed_dim));
        }
        Ok(())
    }
}

/// Trainable parameters, counted without building the model.
///
/// Every linear map inside a block carries a bias, each layer norm has a
/// gain and a shift, a final layer norm precedes the projector, and the
/// projector to the vocabulary has no bias.
pub fn parameter_count(config: &TransformerConfig) -> u64 {
    let (v, e, c) = (config.vocab_size as u64, config.embed_dim as u64, config.context_size as u64);
    let mlp: u64 = config.mlp_dims.windows(2).map(|p| p[0] as u64 * p[1] as u64 + p[1] as u64).sum();
    let block = 2 * e + 4 * (e * e + e) + 2 * e + mlp;
    v * e + c * e + config.n_blocks as u64 * block + 2 * e + e * v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderBlock {
    pub ln1_gain: Tensor,
    pub ln1_shift: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_shift: Tensor,
    /// `[out, in]` per MLP layer.
    pub mlp_weights: Vec<Tensor>,
    pub mlp_biases: Vec<Tensor>,
}

impl DecoderBlock {
    fn zeros(config: &TransformerConfig) -> Result<Self> {
        let e = config.embed_dim;
        let sq = || Tensor::zeros(&[e, e]);
        let vec = || Tensor::zeros(&[e]);
        Ok(Self {
            ln1_gain: Tensor::vector(vec![1.0; e]),
            ln1_shift: vec()?,
            wq: sq()?,
            bq: vec()?,
            wk: sq()?,
            bk: vec()?,
            wv: sq()?,
            bv: vec()?,
            wo: sq()?,
            bo: vec()?,
            ln2_gain: Tensor::vector(vec![1.0; e]),
            ln2_shift: vec()?,
            mlp_weights: config.mlp_dims.windows(2).map(|p| Tensor::zeros(&[p[1], p[0]])).collect::<Result<_>>()?,
            mlp_biases: config.mlp_dims[1..].iter().map(|&d| Tensor::zeros(&[d])).collect::<Result<_>>()?,
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("ln1_gain".into(), &self.ln1_gain),
            ("ln1_shift".into(), &self.ln1_shift),
            ("wq".into(), &self.wq),
            ("bq".into(), &self.bq),
            ("wk".into(), &self.wk),
            ("bk".into(), &self.bk),
            ("wv".into(), &self.wv),
            ("bv".into(), &self.bv),
            ("wo".into(), &self.wo),
            ("bo".into(), &self.bo),
            ("ln2_gain".into(), &self.ln2_gain),
            ("ln2_shift".into(), &self.ln2_shift),
        ];
        for (i, (w, b)) in self.mlp_weights.iter().zip(&self.mlp_biases).enumerate() {
            out.push((format!("mlp{i}_weight"), w));
            out.push((format!("mlp{i}_bias"), b));
        }
        out
    }

    /// Same order as [`DecoderBlock::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.ln1_gain,
            &mut self.ln1_shift,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_shift,
        ];
        for (w, b) in self.mlp_weights.iter_mut().zip(self.mlp_biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerModel {
    pub config: TransformerConfig,
    /// `[vocab, embed]`
    pub token_embedding: Tensor,
    /// `[context, embed]`
    pub position_embedding: Tensor,
    pub blocks: Vec<DecoderBlock>,
    pub final_gain: Tensor,
    pub final_shift: Tensor,
    /// `[vocab, embed]`, no bias.
    pub projector: Tensor,
}

#[derive(Serialize, Deserialize)]
struct TransformerManifest {
    config: TransformerConfig,
    tensors: Vec<TensorEntry>,
}

impl TransformerModel {
    /// All weights zero, layer-norm gains one. Doubles as a gradient buffer
    /// after [`TransformerModel::zero_like`].
    pub fn zeros(config: &TransformerConfig) -> Result<Self> {
        config.validate()?;
        let (v, e, c) = (config.vocab_size, config.embed_dim, config.context_size);
        Ok(Self {
            config: config.clone(),
            token_embedding: Tensor::zeros(&[v, e])?,
            position_embedding: Tensor::zeros(&[c, e])?,
            blocks: (0..config.n_blocks).map(|_| DecoderBlock::zeros(config)).collect::<Result<_>>()?,
            final_gain: Tensor::vector(vec![1.0; e]),
            final_shift: Tensor::zeros(&[e])?,
            projector: Tensor::zeros(&[v, e])?,
        })
    }

    /// Every matrix uniform in `±1/sqrt(fan_in)`; embedding tables use their
    /// row count as fan-in. Biases and shifts zero, gains one.
    pub fn new(config: &TransformerConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut k = 0u64;
        let mut fill = |t: &mut Tensor, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = derived(seed, &[0x7f, k]);
            k += 1;
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        };
        fill(&mut model.token_embedding, config.vocab_size);
        fill(&mut model.position_embedding, config.context_size);
        for b in &mut model.blocks {
            for w in [&mut b.wq, &mut b.wk, &mut b.wv, &mut b.wo] {
                fill(w, config.embed_dim);
            }
            for w in &mut b.mlp_weights {
                let fan_in = w.cols();
                fill(w, fan_in);
            }
        }
        fill(&mut model.projector, config.embed_dim);
        Ok(model)
    }

    /// Zero-filled copy with the same shapes; gains are zeroed too.
    pub fn zero_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.scale_in_place(0.0));
        z
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named_tensors().into_iter().map(|(n, t)| (format!("block{i}.{n}"), t)));
        }
        out.push(("final_gain".into(), &self.final_gain));
        out.push(("final_shift".into(), &self.final_shift));
        out.push(("projector".into(), &self.projector));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.final_gain);
        out.push(&mut self.final_shift);
        out.push(&mut self.projector);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Adds `scale * other` parameter-wise.
    pub fn axpy(&mut self, scale: f64, other: &TransformerModel) -> Result<()> {
        let src: Vec<&Tensor> = other.named_tensors().into_iter().map(|(_, t)| t).collect();
        let dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::InvalidConfig("transformer shapes differ".into()));
        }
        for (d, s) in dst.into_iter().zip(src) {
            d.axpy(scale, s)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (data, tensors) = pack_tensors(self.named_tensors());
        let c = &self.config;
        Checkpoint {
            kind: CheckpointKind::Transformer,
            dims: vec![data.len() as u64],
            data,
            trailer: serde_json::to_value(TransformerManifest {
                config: c.clone(),
                tensors,
            })
            .expect("manifest serializes"),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CheckpointKind::Transformer {
            return Err(Error::Format(format!("expected a transformer checkpoint, got {:?}", ck.kind)));
        }
        let manifest: TransformerManifest = serde_json::from_value(ck.trailer.clone())?;
        let mut model = Self::zeros(&manifest.config)?;
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != manifest.tensors.len() || names.iter().zip(&manifest.tensors).any(|(n, e)| *n != e.name) {
            return Err(Error::Format("transformer manifest does not match its config".into()));
        }
        let loaded = unpack_tensors(&ck.data, &manifest.tensors)?;
        for (dst, src) in model.tensors_mut().into_iter().zip(loaded) {
            if dst.shape() != src.shape() {
                return Err(Error::dim("transformer checkpoint", dst.shape(), src.shape()));
            }
            *dst = src;
        }
        Ok(model)
    }
}

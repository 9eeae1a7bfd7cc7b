use rand::Rng as _;

use photon_dfa_core::rng::derived;
use photon_dfa_core::{Error, Result};

use crate::forward::forward_transformer;
use crate::model::TransformerModel;
use crate::tokenizer::Tokenizer;

/// Samples `n_tokens` continuations of `prompt` from the last
/// `context_size` tokens. Temperature 0 picks the first maximal logit.
pub fn generate(
    model: &TransformerModel,
    tokenizer: &dyn Tokenizer,
    prompt: &str,
    n_tokens: usize,
    temperature: f64,
    seed: u64,
) -> Result<String> {
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(Error::InvalidConfig(format!("temperature {temperature} must be finite and non-negative")));
    }
    let mut tokens = tokenizer.encode(prompt)?;
    if n_tokens == 0 {
        return Ok(prompt.to_string());
    }
    if tokens.is_empty() {
        return Err(Error::InvalidConfig("generation needs a non-empty prompt".into()));
    }
    let (c, v) = (model.config.context_size, model.config.vocab_size);
    let mut rng = derived(seed, &[0x6e]);
    let start = tokens.len();
    for _ in 0..n_tokens {
        let window = &tokens[tokens.len().saturating_sub(c)..];
        let cache = forward_transformer(model, window)?;
        let logits = &cache.logits()[(window.len() - 1) * v..window.len() * v];
        let next = if temperature == 0.0 {
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            best
        } else {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random_range(0.0..total);
            let mut pick = v - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        };
        tokens.push(next);
    }
    Ok(format!("{prompt}{}", tokenizer.decode(&tokens[start..])?))
}

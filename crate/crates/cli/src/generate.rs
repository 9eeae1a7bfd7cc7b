use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use photon_dfa_core::checkpoint::Checkpoint;
use photon_dfa_transformer::{generate, TokenizerManifest, TransformerModel};

use crate::config::{resolve, GlobalArgs};
use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `tokenizer.json` beside the checkpoint.
    pub tokenizer: Option<PathBuf>,
    pub prompt: String,
    pub tokens: usize,
    pub temperature: f64,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            tokenizer: None,
            prompt: String::new(),
            tokens: 200,
            temperature: 1.0,
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct GenerateArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

/// Loads a transformer checkpoint and its tokenizer and returns (and
/// prints) the prompt followed by the sampled continuation.
pub fn cmd_generate(global: &GlobalArgs, args: &GenerateArgs) -> Result<String> {
    let run = resolve::<GenerateSettings>("generate", global, |s| {
        if args.checkpoint.is_some() {
            s.checkpoint = args.checkpoint.clone();
        }
        if args.tokenizer.is_some() {
            s.tokenizer = args.tokenizer.clone();
        }
        if let Some(p) = &args.prompt {
            s.prompt = p.clone();
        }
        if let Some(v) = args.tokens {
            s.tokens = v;
        }
        if let Some(v) = args.temperature {
            s.temperature = v;
        }
    })?;
    let s = &run.settings;
    let path = s.checkpoint.as_ref().ok_or_else(|| CliError::Config("generate needs --checkpoint".into()))?;
    if !path.is_file() {
        return Err(CliError::Data(format!("checkpoint {} not found", path.display())));
    }
    let model = TransformerModel::from_checkpoint(&Checkpoint::read(path).map_err(|e| CliError::Data(e.to_string()))?)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let tok_path = s
        .tokenizer
        .clone()
        .unwrap_or_else(|| path.parent().unwrap_or(std::path::Path::new(".")).join("tokenizer.json"));
    let manifest = TokenizerManifest::read(&tok_path).map_err(|e| CliError::Data(format!("{}: {e}", tok_path.display())))?;
    if manifest.vocab_size() != model.config.vocab_size {
        return Err(CliError::Data(format!(
            "tokenizer has {} entries, model expects {}",
            manifest.vocab_size(),
            model.config.vocab_size
        )));
    }
    let tokenizer = manifest.into_tokenizer()?;
    let text = generate(&model, tokenizer.as_ref(), &s.prompt, s.tokens, s.temperature, run.seed)?;
    if !global.quiet {
        println!("{text}");
    }
    Ok(text)
}

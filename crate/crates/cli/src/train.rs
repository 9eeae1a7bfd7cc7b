use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};

use photon_dfa_core::checkpoint::{Checkpoint, Precision};
use photon_dfa_core::data::{load_mnist, synthetic_digits, Dataset, SyntheticDigits};
use photon_dfa_core::mlp::{evaluate, Algorithm, BandLayout, Granularity, MlpModel, TrainConfig, Trainer};
use photon_dfa_core::opu::{LatencyModel, NoiseKind, NoiseSpec};
use photon_dfa_core::rng::derive_seed;
use photon_dfa_core::trace::{Split, TrainingTrace};
use photon_dfa_core::{ActivationKind, OptimizerSpec};
use photon_dfa_transformer::{
    evaluate_lm, synthetic_corpus, tokenize, LmTrainConfig, LmTrainer, TransformerConfig, TransformerModel,
};

use crate::config::{parse_list, UsizeList, parse_name, resolve, write_json, write_run_log, write_text, GlobalArgs, RunConfig};
use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Mlp,
    Transformer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Rendered digit glyphs at `sqrt(dims[0])` pixels a side.
    #[default]
    Synthetic,
    /// IDX files in `data_dir`.
    Mnist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerShape {
    pub embed_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mlp_dims: Vec<usize>,
    pub context_size: usize,
}

impl Default for TransformerShape {
    fn default() -> Self {
        let d = TransformerConfig::desk(1);
        Self {
            embed_dim: d.embed_dim,
            n_blocks: d.n_blocks,
            n_heads: d.n_heads,
            mlp_dims: d.mlp_dims,
            context_size: d.context_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub model: ModelKind,
    pub algorithm: Algorithm,
    pub dataset: DatasetKind,
    /// MNIST directory, or a text corpus file for the transformer.
    pub data_dir: Option<PathBuf>,
    /// Seeds the synthetic digits and corpus, independent of the run seed.
    pub data_seed: u64,
    pub dims: Vec<usize>,
    pub activation: ActivationKind,
    pub epochs: usize,
    pub batch: usize,
    /// Defaults to 0.01 (SGD, MLP) or 0.001 (Adam, transformer).
    pub lr: Option<f64>,
    pub momentum: f64,
    /// Training examples kept; all of MNIST when absent, 10000 synthetic.
    pub train_samples: Option<usize>,
    pub test_samples: usize,
    pub validation_fraction: f64,
    pub noise: NoiseSpec,
    pub granularity: Granularity,
    pub band_layout: BandLayout,
    pub latency: LatencyModel,
    pub threshold: Option<f64>,
    pub record_every: u64,
    pub transformer: TransformerShape,
    /// Synthetic corpus length when no corpus file is given.
    pub corpus_chars: usize,
    pub window_stride: usize,
    pub precision: Precision,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            model: ModelKind::Mlp,
            algorithm: Algorithm::Bp,
            dataset: DatasetKind::Synthetic,
            data_dir: None,
            data_seed: 1,
            dims: vec![784, 100, 10],
            activation: ActivationKind::Relu,
            epochs: 50,
            batch: 100,
            lr: None,
            momentum: 0.9,
            train_samples: None,
            test_samples: 2000,
            validation_fraction: 0.1,
            noise: NoiseSpec::NONE,
            granularity: Granularity::PerSample,
            band_layout: BandLayout::Disjoint,
            latency: LatencyModel::default(),
            threshold: None,
            record_every: 1,
            transformer: TransformerShape::default(),
            corpus_chars: 20_000,
            window_stride: 1,
            precision: Precision::F64,
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_name::<ModelKind>)]
    pub model: Option<ModelKind>,
    #[arg(long, value_parser = parse_name::<Algorithm>)]
    pub algorithm: Option<Algorithm>,
    #[arg(long, value_parser = parse_name::<DatasetKind>)]
    pub dataset: Option<DatasetKind>,
    #[arg(long, value_name = "PATH")]
    pub data_dir: Option<PathBuf>,
    /// Layer widths, e.g. 784,100,10.
    #[arg(long, value_parser = parse_list)]
    pub dims: Option<UsizeList>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    #[arg(long, value_parser = parse_name::<NoiseKind>)]
    pub noise: Option<NoiseKind>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long, value_parser = parse_name::<Granularity>)]
    pub granularity: Option<Granularity>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl TrainArgs {
    fn apply(&self, s: &mut TrainSettings) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = &self.$f { s.$f = v.clone(); })* };
        }
        set!(model, algorithm, dataset, dims, epochs, batch, momentum, test_samples, granularity);
        if self.data_dir.is_some() {
            s.data_dir = self.data_dir.clone();
        }
        if self.lr.is_some() {
            s.lr = self.lr;
        }
        if self.train_samples.is_some() {
            s.train_samples = self.train_samples;
        }
        if self.threshold.is_some() {
            s.threshold = self.threshold;
        }
        if let Some(k) = self.noise {
            s.noise.kind = k;
        }
        if let Some(v) = self.noise_sigma {
            s.noise.sigma = v;
        }
        if let Some(v) = self.noise_seed {
            s.noise.seed = v;
        }
    }
}

/// End-of-run numbers; every field is reproducible from the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub model: ModelKind,
    pub algorithm: Algorithm,
    pub parameters: usize,
    pub steps: u64,
    pub projections: u64,
    pub optical_seconds: f64,
    pub threshold: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub final_validation_loss: Option<f64>,
    pub final_validation_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// Trains one model and writes `trace.csv`, `model.ckpt`, `summary.json`,
/// `config.json` and a `run.log` sidecar into the output directory.
pub fn cmd_train(global: &GlobalArgs, args: &TrainArgs) -> Result<TrainSummary> {
    let run = resolve::<TrainSettings>("train", global, |s| args.apply(s))?;
    validate(&run.settings)?;
    let started = Instant::now();
    let summary = match run.settings.model {
        ModelKind::Mlp => train_mlp(&run)?,
        ModelKind::Transformer => train_transformer(&run)?,
    };
    write_json(&run.path("summary.json"), &summary)?;
    write_run_log(&run.out, run.command, &run.hash, started.elapsed().as_secs_f64())?;
    if !global.quiet {
        println!("{}", serde_json::to_string(&summary).map_err(|e| CliError::Numerical(e.to_string()))?);
    }
    Ok(summary)
}

fn validate(s: &TrainSettings) -> Result<()> {
    let bad = |m: String| Err(CliError::Config(m));
    if s.batch == 0 {
        return bad("batch must be positive".into());
    }
    if s.model == ModelKind::Mlp {
        if s.dims.len() < 2 || s.dims.contains(&0) {
            return bad(format!("dims {:?} need at least two positive widths", s.dims));
        }
        if s.dataset == DatasetKind::Synthetic {
            let side = (s.dims[0] as f64).sqrt().round() as usize;
            if side * side != s.dims[0] || side < 4 {
                return bad(format!("synthetic digits need a square input width of at least 16, got {}", s.dims[0]));
            }
        }
        if *s.dims.last().unwrap() < 10 {
            return bad("digit classification needs at least 10 outputs".into());
        }
    }
    Ok(())
}

fn load_digits(s: &TrainSettings) -> Result<(Dataset, Dataset)> {
    match s.dataset {
        DatasetKind::Mnist => {
            let dir = s
                .data_dir
                .as_ref()
                .ok_or_else(|| CliError::Data("dataset mnist needs data_dir".into()))?;
            let (train, test) = load_mnist(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
            let keep = |d: Dataset, n: Option<usize>| match n {
                Some(n) if n < d.len() => d.subset(&(0..n).collect::<Vec<_>>()),
                _ => d,
            };
            Ok((keep(train, s.train_samples), keep(test, Some(s.test_samples))))
        }
        DatasetKind::Synthetic => {
            let side = (s.dims[0] as f64).sqrt().round() as usize;
            let train = synthetic_digits(
                &SyntheticDigits::new(side, s.train_samples.unwrap_or(10_000)),
                derive_seed(s.data_seed, &[0]),
            )?;
            let test = synthetic_digits(&SyntheticDigits::new(side, s.test_samples.max(1)), derive_seed(s.data_seed, &[1]))?;
            Ok((train, test))
        }
    }
}

fn finish_trace(run: &RunConfig<TrainSettings>, mut trace: TrainingTrace) -> Result<TrainingTrace> {
    trace.config_hash = run.hash.clone();
    write_text(&run.path("trace.csv"), &trace.to_csv(false))?;
    Ok(trace)
}

fn write_checkpoint(run: &RunConfig<TrainSettings>, mut ck: Checkpoint) -> Result<()> {
    if let Some(obj) = ck.trailer.as_object_mut() {
        obj.insert("config_hash".into(), run.hash.clone().into());
    }
    let path = run.path("model.ckpt");
    ck.write(&path, run.settings.precision).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn last(trace: &TrainingTrace, split: Split) -> (Option<f64>, Option<f64>) {
    trace.last(split).map_or((None, None), |r| (Some(r.loss), r.accuracy))
}

fn train_mlp(run: &RunConfig<TrainSettings>) -> Result<TrainSummary> {
    let s = &run.settings;
    let (train, test) = load_digits(s)?;
    if train.dim() != s.dims[0] {
        return Err(CliError::Config(format!("data has {} inputs, dims[0] is {}", train.dim(), s.dims[0])));
    }
    let mut model = MlpModel::new(&s.dims, s.activation, run.seed)?;
    let mut config = TrainConfig::new(
        s.algorithm,
        s.batch,
        s.epochs,
        OptimizerSpec::sgd(s.lr.unwrap_or(0.01), s.momentum),
        run.seed,
    );
    config.noise = s.noise;
    config.granularity = s.granularity;
    config.validation_fraction = s.validation_fraction;
    config.band_layout = s.band_layout;
    config.latency = s.latency;
    config.threshold = s.threshold;
    config.record_every = s.record_every;
    config.validate()?;
    run.prepare_out()?;
    let mut trainer = Trainer::new(&model, config)?;
    let trace = finish_trace(run, trainer.fit(&mut model, &train, None)?)?;
    write_checkpoint(run, model.to_checkpoint())?;
    let (test_loss, test_accuracy) = evaluate(&model, &test)?;
    if !test_loss.is_finite() {
        return Err(CliError::Numerical("test loss is not finite".into()));
    }
    let (val_loss, val_acc) = last(&trace, Split::Validation);
    Ok(TrainSummary {
        config_hash: run.hash.clone(),
        model: s.model,
        algorithm: s.algorithm,
        parameters: model.parameter_count(),
        steps: trainer.steps(),
        projections: trainer.projections(),
        optical_seconds: trainer.optical_seconds(),
        threshold: trainer.threshold(),
        final_train_loss: last(&trace, Split::Train).0,
        final_validation_loss: val_loss,
        final_validation_accuracy: val_acc,
        test_loss: Some(test_loss),
        test_accuracy: Some(test_accuracy),
    })
}

fn train_transformer(run: &RunConfig<TrainSettings>) -> Result<TrainSummary> {
    let s = &run.settings;
    let corpus = match &s.data_dir {
        Some(path) => std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?,
        None => synthetic_corpus(s.corpus_chars, s.data_seed),
    };
    let (tokenizer, tokens) = tokenize(&corpus)?;
    let split = tokens.len() - tokens.len() / 10;
    let (train, validation) = tokens.split_at(split);
    let shape = &s.transformer;
    let config = TransformerConfig {
        vocab_size: tokenizer.chars().len(),
        embed_dim: shape.embed_dim,
        n_blocks: shape.n_blocks,
        n_heads: shape.n_heads,
        mlp_dims: shape.mlp_dims.clone(),
        context_size: shape.context_size,
    };
    config.validate()?;
    let mut model = TransformerModel::new(&config, run.seed)?;
    let mut lm = LmTrainConfig::new(s.algorithm, s.batch, s.epochs, s.lr.unwrap_or(1e-3), run.seed);
    lm.granularity = s.granularity;
    lm.window_stride = s.window_stride;
    lm.noise = s.noise;
    lm.band_layout = s.band_layout;
    lm.latency = s.latency;
    lm.threshold = s.threshold;
    lm.record_every = s.record_every as usize;
    lm.validate()?;
    run.prepare_out()?;
    tokenizer.manifest().write(run.path("tokenizer.json"))?;
    let mut trainer = LmTrainer::new(&model, lm)?;
    let validation = (validation.len() > config.context_size).then_some(validation);
    let trace = finish_trace(run, trainer.fit(&mut model, train, validation)?)?;
    write_checkpoint(run, model.to_checkpoint())?;
    let (val_loss, val_acc) = match validation {
        Some(v) => {
            let (l, a) = evaluate_lm(&model, v)?;
            (Some(l), Some(a))
        }
        None => (None, None),
    };
    Ok(TrainSummary {
        config_hash: run.hash.clone(),
        model: s.model,
        algorithm: s.algorithm,
        parameters: model.parameter_count(),
        steps: trainer.steps(),
        projections: trainer.projections(),
        optical_seconds: trainer.optical_seconds(),
        threshold: None,
        final_train_loss: last(&trace, Split::Train).0,
        final_validation_loss: val_loss,
        final_validation_accuracy: val_acc,
        test_loss: None,
        test_accuracy: None,
    })
}

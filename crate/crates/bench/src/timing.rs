use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use photon_dfa_core::loss::softmax_cross_entropy_slice;
use photon_dfa_core::mlp::{bp_deltas, deltas_from_signals, forward_mlp, Algorithm, BandLayout, FeedbackMatrixSet, MlpGradients, MlpModel};
use photon_dfa_core::opu::{ternarize, LatencyModel, OpuSession, SessionConfig};
use photon_dfa_core::rng::{derive_seed, derived, normal_vec};
use photon_dfa_core::{apply_update, ActivationKind, OptimizerSpec, OptimizerState};

use crate::error::{BenchError, Result};

/// Output classes of the synthetic benchmark task.
const CLASSES: usize = 10;
/// Threshold used for ternary feedback; timing does not depend on its value.
const BENCH_THRESHOLD: f64 = 0.1;

/// How stage durations are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Clock {
    /// Measured with the monotonic system clock.
    Wall,
    /// Arithmetic-operation count times a fixed cost per operation. Bit-for-bit
    /// reproducible, so results files can be compared across runs.
    Counted { seconds_per_flop: f64 },
}

impl Clock {
    pub fn counted() -> Self {
        Clock::Counted { seconds_per_flop: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingOptions {
    pub clock: Clock,
    /// Timed repetitions; the median one is reported.
    pub repetitions: usize,
    pub seed: u64,
    /// Upper bound on model, gradient, optimizer and feedback storage.
    pub max_bytes: u64,
    /// Sleep for the simulated optical time so a run takes as long as the hardware would.
    pub realtime: bool,
}

impl Default for TimingOptions {
    fn default() -> Self {
        Self {
            clock: Clock::counted(),
            repetitions: 3,
            seed: 0,
            max_bytes: 4 << 30,
            realtime: false,
        }
    }
}

/// Seconds per sample spent in each stage. `optical` is the latency ledger
/// and is zero for digital algorithms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub forward: f64,
    pub feedback: f64,
    pub update: f64,
    pub optical: f64,
}

impl Breakdown {
    pub fn total(&self) -> f64 {
        self.forward + self.feedback + self.update + self.optical
    }

    /// Everything except the optical ledger.
    pub fn digital(&self) -> f64 {
        self.forward + self.feedback + self.update
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            forward: self.forward * factor,
            feedback: self.feedback * factor,
            update: self.update * factor,
            optical: self.optical * factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub width: usize,
    pub depth: usize,
    pub algorithm: Algorithm,
    /// Always `breakdown.total()`.
    pub seconds_per_sample: f64,
    pub breakdown: Breakdown,
}

impl ScalingPoint {
    pub fn new(width: usize, depth: usize, algorithm: Algorithm, breakdown: Breakdown) -> Self {
        Self {
            width,
            depth,
            algorithm,
            seconds_per_sample: breakdown.total(),
            breakdown,
        }
    }
}

fn layer_dims(width: usize, depth: usize) -> Vec<usize> {
    let mut dims = vec![width; depth + 1];
    dims.push(CLASSES);
    dims
}

/// Bytes held by the model, its gradients, the optimizer state and the feedback source.
pub fn model_bytes(width: usize, depth: usize, algorithm: Algorithm) -> u64 {
    let dims = layer_dims(width, depth);
    let params: u64 = dims.windows(2).map(|p| (p[0] * p[1] + p[1]) as u64).sum();
    let hidden = (width * depth) as u64;
    let feedback = match algorithm {
        Algorithm::Dfa | Algorithm::Tdfa => hidden * CLASSES as u64,
        // Complex transmission matrix: two parts.
        Algorithm::Odfa => 2 * hidden * CLASSES as u64,
        _ => 0,
    };
    8 * (3 * params + feedback)
}

/// Operation counts per sample for each stage.
fn stage_flops(width: usize, depth: usize, algorithm: Algorithm) -> Breakdown {
    let dims = layer_dims(width, depth);
    let pairs: Vec<(f64, f64)> = dims.windows(2).map(|p| (p[0] as f64, p[1] as f64)).collect();
    let hidden: Vec<f64> = dims[1..dims.len() - 1].iter().map(|&d| d as f64).collect();
    let out = CLASSES as f64;
    // Matrix-vector product, bias and activation per layer, then softmax.
    let forward = pairs.iter().map(|(i, o)| 2.0 * i * o + 2.0 * o).sum::<f64>() + 3.0 * out;
    let feedback = match algorithm {
        // Transposed product through every layer above the first, then g'.
        Algorithm::Bp | Algorithm::Shlw => pairs[1..].iter().map(|(i, o)| 2.0 * i * o + i).sum(),
        Algorithm::Dfa => hidden.iter().map(|h| 2.0 * h * out + h).sum(),
        Algorithm::Tdfa => hidden.iter().map(|h| 2.0 * h * out + h).sum::<f64>() + 2.0 * out,
        // Ternarization and g'; the projection itself is on the optical ledger.
        Algorithm::Odfa => hidden.iter().sum::<f64>() + 2.0 * out,
    };
    // Outer products for the gradients, then one multiply-add per parameter.
    let update = pairs.iter().map(|(i, o)| 2.0 * i * o + o + 2.0 * (i * o + o)).sum();
    Breakdown {
        forward,
        feedback,
        update,
        optical: 0.0,
    }
}

enum Feedback {
    Exact,
    Digital(FeedbackMatrixSet, bool),
    Optical(OpuSession),
}

struct Bench {
    model: MlpModel,
    optimizer: OptimizerState,
    feedback: Feedback,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

/// Wall time of each stage, with the optical simulation excluded.
#[derive(Default)]
struct StageTimes {
    forward: Duration,
    feedback: Duration,
    update: Duration,
}

impl Bench {
    fn new(width: usize, depth: usize, algorithm: Algorithm, latency: LatencyModel, samples: usize, seed: u64) -> Result<Self> {
        let dims = layer_dims(width, depth);
        let model = MlpModel::new(&dims, ActivationKind::Relu, derive_seed(seed, &[1]))?;
        let hidden = model.hidden_dims().to_vec();
        let feedback = match algorithm {
            Algorithm::Bp => Feedback::Exact,
            Algorithm::Dfa | Algorithm::Tdfa => Feedback::Digital(
                FeedbackMatrixSet::digital_gaussian(&hidden, CLASSES, derive_seed(seed, &[2]))?,
                algorithm == Algorithm::Tdfa,
            ),
            Algorithm::Odfa => {
                let rows = BandLayout::Disjoint.required_rows(&hidden);
                let mut session = OpuSession::new(&SessionConfig::new(rows, CLASSES, derive_seed(seed, &[3])).with_latency(latency))?;
                session.set_threshold(BENCH_THRESHOLD)?;
                Feedback::Optical(session)
            }
            Algorithm::Shlw => return Err(BenchError::Invalid("shallow training is not a timing target".into())),
        };
        let mut rng = derived(seed, &[4]);
        let inputs = (0..samples).map(|_| normal_vec(&mut rng, width, 1.0)).collect();
        let labels = (0..samples).map(|_| rng.random_range(0..CLASSES)).collect();
        Ok(Self {
            model,
            optimizer: OptimizerState::new(OptimizerSpec::sgd(1e-4, 0.0)),
            feedback,
            inputs,
            labels,
        })
    }

    /// Feedback signals sent through the optical session so far.
    fn signals(&self) -> u64 {
        match &self.feedback {
            Feedback::Optical(s) => s.step_counter(),
            _ => 0,
        }
    }

    /// One forward, feedback and update pass per sample.
    fn run(&mut self, times: &mut StageTimes) -> Result<()> {
        for i in 0..self.inputs.len() {
            let t0 = Instant::now();
            let cache = forward_mlp(&self.model, &self.inputs[i])?;
            let (_, e) = softmax_cross_entropy_slice(cache.logits(), self.labels[i])?;
            let t1 = Instant::now();
            let mut simulated = Duration::ZERO;
            let deltas = match &mut self.feedback {
                Feedback::Exact => bp_deltas(&self.model, &cache, &e)?,
                Feedback::Digital(set, ternary) => {
                    let signals = if *ternary {
                        set.signals(&ternarize(&e, BENCH_THRESHOLD).scaled_difference())?
                    } else {
                        set.signals(&e)?
                    };
                    deltas_from_signals(&self.model, &cache, &e, &signals)?
                }
                Feedback::Optical(session) => {
                    let start = Instant::now();
                    let s = session.project_feedback(&e)?;
                    simulated = start.elapsed();
                    let signals: Vec<Vec<f64>> = BandLayout::Disjoint
                        .bands(self.model.hidden_dims())
                        .into_iter()
                        .map(|(a, n)| s[a..a + n].to_vec())
                        .collect();
                    deltas_from_signals(&self.model, &cache, &e, &signals)?
                }
            };
            let t2 = Instant::now();
            let grads = MlpGradients::from_deltas(&self.model, &cache, &deltas)?;
            let grad_refs = grads.tensors();
            apply_update(&mut self.model.parameters_mut(), &grad_refs, &mut self.optimizer)?;
            let t3 = Instant::now();
            times.forward += t1 - t0;
            times.feedback += (t2 - t1).saturating_sub(simulated);
            times.update += t3 - t2;
        }
        Ok(())
    }
}

/// Per-sample training time of a `depth`-hidden-layer, `width`-wide network
/// on seeded Gaussian inputs. Wall-clock runs do one warm-up pass and report
/// the repetition with the median total.
pub fn time_training(
    width: usize,
    depth: usize,
    algorithm: Algorithm,
    latency: LatencyModel,
    samples: usize,
    options: &TimingOptions,
) -> Result<ScalingPoint> {
    if width == 0 || depth == 0 || samples == 0 {
        return Err(BenchError::Invalid(format!(
            "width, depth and samples must be positive (got {width}, {depth}, {samples})"
        )));
    }
    if options.repetitions == 0 {
        return Err(BenchError::Invalid("repetitions must be positive".into()));
    }
    if !(latency.seconds_per_projection >= 0.0 && latency.seconds_per_projection.is_finite()) {
        return Err(BenchError::Invalid("seconds_per_projection must be finite and non-negative".into()));
    }
    let bytes = model_bytes(width, depth, algorithm);
    if bytes > options.max_bytes {
        return Err(BenchError::Capacity {
            what: format!("{algorithm:?} network of width {width} and depth {depth}"),
            bytes,
            limit: options.max_bytes,
        });
    }
    let mut bench = Bench::new(width, depth, algorithm, latency, samples, options.seed)?;
    let per_sample = 1.0 / samples as f64;

    let breakdown = match options.clock {
        Clock::Counted { seconds_per_flop } => {
            let before = bench.signals();
            bench.run(&mut StageTimes::default())?;
            let mut b = stage_flops(width, depth, algorithm).scaled(seconds_per_flop);
            b.optical = latency.elapsed(bench.signals() - before) / samples as f64;
            b
        }
        Clock::Wall => {
            bench.run(&mut StageTimes::default())?;
            let mut reps = Vec::with_capacity(options.repetitions);
            for _ in 0..options.repetitions {
                let mut times = StageTimes::default();
                let before = bench.signals();
                bench.run(&mut times)?;
                let optical = latency.elapsed(bench.signals() - before);
                if options.realtime {
                    std::thread::sleep(Duration::from_secs_f64(optical));
                }
                reps.push(Breakdown {
                    forward: times.forward.as_secs_f64() * per_sample,
                    feedback: times.feedback.as_secs_f64() * per_sample,
                    update: times.update.as_secs_f64() * per_sample,
                    optical: optical / samples as f64,
                });
            }
            reps.sort_by(|a, b| a.total().total_cmp(&b.total()));
            reps[reps.len() / 2]
        }
    };
    Ok(ScalingPoint::new(width, depth, algorithm, breakdown))
}

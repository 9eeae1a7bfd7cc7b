use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};

use photon_dfa_core::opu::{
    calibrate_drift_sigma, select_threshold_batch, session_drift_pcc, NoiseKind, NoiseSpec, OpuSession, SessionConfig,
};
use photon_dfa_core::rng::{derive_seed, derived, normal_vec};

use crate::config::{resolve, write_json, write_run_log, GlobalArgs};
use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSettings {
    /// Calibrate sigma so the trace ends at this correlation.
    pub target_pcc: Option<f64>,
    /// Used as given when no target is set.
    pub sigma: f64,
    pub steps: u64,
    pub stride: u64,
    pub noise_seed: u64,
    /// Allowed distance between the final correlation and the target.
    pub tolerance: f64,
}

impl Default for DriftSettings {
    fn default() -> Self {
        Self {
            target_pcc: None,
            sigma: 0.0,
            steps: 1000,
            stride: 100,
            noise_seed: 99,
            tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSettings {
    pub rows: usize,
    pub cols: usize,
    pub noise: NoiseSpec,
    pub probes: usize,
    /// Largest accepted relative linearity error.
    pub tolerance: f64,
    /// Random errors averaged by the threshold search.
    pub threshold_samples: usize,
    pub drift: Option<DriftSettings>,
}

impl Default for DiagnoseSettings {
    fn default() -> Self {
        Self {
            rows: 256,
            cols: 256,
            noise: NoiseSpec::NONE,
            probes: 100,
            tolerance: 1e-9,
            threshold_samples: 16,
            drift: None,
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub probes: Option<usize>,
    /// Enables the stability trace, calibrated to this final correlation.
    #[arg(long)]
    pub drift_target: Option<f64>,
    /// Enables the stability trace at this drift sigma.
    #[arg(long)]
    pub drift_sigma: Option<f64>,
    #[arg(long)]
    pub drift_steps: Option<u64>,
}

impl DiagnoseArgs {
    fn apply(&self, s: &mut DiagnoseSettings) {
        if let Some(v) = self.rows {
            s.rows = v;
        }
        if let Some(v) = self.cols {
            s.cols = v;
        }
        if let Some(v) = self.probes {
            s.probes = v;
        }
        if self.drift_target.is_some() || self.drift_sigma.is_some() || self.drift_steps.is_some() {
            let d = s.drift.get_or_insert_with(DriftSettings::default);
            if self.drift_target.is_some() {
                d.target_pcc = self.drift_target;
            }
            if let Some(v) = self.drift_sigma {
                d.sigma = v;
            }
            if let Some(v) = self.drift_steps {
                d.steps = v;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub probes: usize,
    pub max_additivity_error: f64,
    pub max_homogeneity_error: f64,
    /// Largest output magnitude for a zero input.
    pub zero_input_max_abs: f64,
    /// Largest relative distance between the anchor's recovery and `sqrt(I_r)`.
    pub anchor_max_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixStats {
    pub rows: usize,
    pub cols: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub sigma: f64,
    pub target_pcc: Option<f64>,
    pub final_pcc: f64,
    pub trace: Vec<(u64, f64)>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub config_hash: String,
    pub linearity: LinearityReport,
    pub effective_matrix: MatrixStats,
    pub threshold: ThresholdReport,
    pub stability: Option<StabilityReport>,
    pub passed: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(f64::MIN_POSITIVE)
}

fn linearity(session: &OpuSession, probes: usize, seed: u64, tolerance: f64) -> Result<LinearityReport> {
    let n = session.cols();
    let mut rng = derived(seed, &[0x11]);
    let (mut add, mut hom) = (0.0f64, 0.0f64);
    for _ in 0..probes {
        let a = normal_vec(&mut rng, n, 1.0);
        let b = normal_vec(&mut rng, n, 1.0);
        let c = normal_vec(&mut rng, 1, 2.0)[0];
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
        let (la, lb) = (session.project_real(&a)?, session.project_real(&b)?);
        let parts: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x + y).collect();
        add = add.max(rel_gap(&session.project_real(&sum)?, &parts));
        let expect: Vec<f64> = la.iter().map(|x| c * x).collect();
        hom = hom.max(rel_gap(&session.project_real(&scaled)?, &expect));
    }
    let zero = session.project_real(&vec![0.0; n])?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let anchor = session.project_real(&session.anchor().r)?;
    let root: Vec<f64> = session.anchor_intensity().iter().map(|i| i.sqrt()).collect();
    let anchor_err = anchor
        .iter()
        .zip(&root)
        .map(|(a, r)| (a - r).abs() / r.max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max);
    let passed = add <= tolerance && hom <= tolerance && zero <= tolerance && anchor_err <= tolerance;
    Ok(LinearityReport {
        probes,
        max_additivity_error: add,
        max_homogeneity_error: hom,
        zero_input_max_abs: zero,
        anchor_max_error: anchor_err,
        passed,
    })
}

fn matrix_stats(session: &OpuSession) -> Result<MatrixStats> {
    let m = session.effective_matrix()?;
    let v = m.data();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    Ok(MatrixStats {
        rows: session.rows(),
        cols: session.cols(),
        mean,
        std: var.sqrt(),
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Fixed ternary probe `1, -1, 0, 1, -1, 0, ...`.
fn drift_probe(n: usize) -> Vec<f64> {
    (0..n).map(|i| [1.0, -1.0, 0.0][i % 3]).collect()
}

fn stability(base: &SessionConfig, d: &DriftSettings) -> Result<StabilityReport> {
    let probe = drift_probe(base.cols);
    let sigma = match d.target_pcc {
        Some(target) => {
            calibrate_drift_sigma(target, d.tolerance / 5.0, |sg| session_drift_pcc(base, &probe, d.steps, sg, d.noise_seed))?
                .sigma
        }
        None => d.sigma,
    };
    let config = base.clone().with_noise(NoiseSpec::new(NoiseKind::Drift, sigma, d.noise_seed));
    let mut session = OpuSession::new(&config)?;
    let trace = session.stability_trace(&probe, d.steps, d.stride)?;
    let final_pcc = trace.last().map_or(1.0, |t| t.1);
    let passed = d.target_pcc.is_none_or(|t| (final_pcc - t).abs() <= d.tolerance);
    Ok(StabilityReport {
        sigma,
        target_pcc: d.target_pcc,
        final_pcc,
        trace,
        passed,
    })
}

/// Runs the projector checks and writes `diagnostics.json`. Returns exit 4
/// (after writing the report) when any check is out of tolerance.
pub fn cmd_diagnose(global: &GlobalArgs, args: &DiagnoseArgs) -> Result<Diagnostics> {
    let run = resolve::<DiagnoseSettings>("diagnose", global, |s| args.apply(s))?;
    let s = &run.settings;
    if s.rows == 0 || s.cols == 0 || s.threshold_samples == 0 {
        return Err(CliError::Config("rows, cols and threshold_samples must be positive".into()));
    }
    if s.noise.kind == NoiseKind::Drift && s.noise.is_active() {
        return Err(CliError::Config("drift is configured under `drift`, not `noise`".into()));
    }
    s.noise.validate()?;
    let started = Instant::now();
    let base = SessionConfig::new(s.rows, s.cols, derive_seed(run.seed, &[0x5e55]));
    let session = OpuSession::new(&base.clone().with_noise(s.noise))?;
    let linearity = linearity(&session, s.probes, run.seed, s.tolerance)?;
    let effective_matrix = matrix_stats(&session)?;
    let mut rng = derived(run.seed, &[0x7e]);
    let errors: Vec<Vec<f64>> = (0..s.threshold_samples).map(|_| normal_vec(&mut rng, s.cols, 1.0)).collect();
    let choice = select_threshold_batch(&errors, &session)?;
    let stability = s.drift.as_ref().map(|d| stability(&base, d)).transpose()?;
    let passed = linearity.passed && stability.as_ref().is_none_or(|st| st.passed);
    let report = Diagnostics {
        config_hash: run.hash.clone(),
        linearity,
        effective_matrix,
        threshold: ThresholdReport {
            threshold: choice.threshold,
            cosine: choice.cosine,
        },
        stability,
        passed,
    };
    run.prepare_out()?;
    write_json(&run.path("diagnostics.json"), &report)?;
    write_run_log(&run.out, run.command, &run.hash, started.elapsed().as_secs_f64())?;
    if !global.quiet {
        println!(
            "linearity max error {:.3e}, threshold {}, passed {}",
            report.linearity.max_additivity_error.max(report.linearity.max_homogeneity_error),
            report.threshold.threshold,
            report.passed
        );
    }
    if !report.passed {
        return Err(CliError::Diagnostic(format!("see {}", run.path("diagnostics.json").display())));
    }
    Ok(report)
}

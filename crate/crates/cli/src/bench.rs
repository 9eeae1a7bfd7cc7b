use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};

use photon_dfa_bench::{
    calibrate_latency, find_crossover, fit_scaling, predict_points, scan_widths, Calibration, CalibrationTarget, Clock,
    FitModel, FitResult, ScalingPoint, ScanGrid, TimingOptions,
};
use photon_dfa_core::mlp::Algorithm;
use photon_dfa_core::opu::LatencyModel;

use crate::config::{parse_list, UsizeList, resolve, thread_cap, write_json, write_run_log, GlobalArgs};
use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub target: CalibrationTarget,
    /// Widths searched for the calibrated crossover, at the target depth.
    pub widths: Vec<usize>,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            target: CalibrationTarget::default(),
            widths: (1..=31).map(|k| k * 100).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub grid: ScanGrid,
    pub clock: Clock,
    pub repetitions: usize,
    pub latency: LatencyModel,
    pub max_bytes: u64,
    /// Sleep for simulated optical time during wall-clock runs.
    pub realtime: bool,
    pub calibration: Option<CalibrationSettings>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        let t = TimingOptions::default();
        Self {
            grid: ScanGrid::new(vec![2], vec![64, 128, 192, 256], vec![Algorithm::Bp, Algorithm::Odfa], 16),
            clock: t.clock,
            repetitions: t.repetitions,
            latency: LatencyModel::default(),
            max_bytes: t.max_bytes,
            realtime: false,
            calibration: None,
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct BenchArgs {
    /// Comma-separated hidden widths.
    #[arg(long, value_parser = parse_list)]
    pub widths: Option<UsizeList>,
    /// Comma-separated hidden-layer counts.
    #[arg(long, value_parser = parse_list)]
    pub depths: Option<UsizeList>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Time with the system clock instead of operation counts.
    #[arg(long)]
    pub wall: bool,
}

impl BenchArgs {
    fn apply(&self, s: &mut BenchSettings) {
        if let Some(v) = &self.widths {
            s.grid.widths = v.clone();
        }
        if let Some(v) = &self.depths {
            s.grid.depths = v.clone();
        }
        if let Some(v) = self.samples {
            s.grid.samples = v;
        }
        if self.wall {
            s.clock = Clock::Wall;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub algorithm: Algorithm,
    /// Depth held fixed for width fits, width held fixed for depth fits.
    pub fixed: usize,
    pub fit: FitResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub calibration: Calibration,
    pub crossover: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub config_hash: String,
    pub points: usize,
    pub width_fits: Vec<FitEntry>,
    pub depth_fits: Vec<FitEntry>,
    /// First measured grid point where the optical run is faster.
    pub crossover: Option<(usize, usize)>,
    pub calibration: Option<CalibrationReport>,
}

fn of(points: &[ScalingPoint], alg: Algorithm) -> Vec<ScalingPoint> {
    points.iter().filter(|p| p.algorithm == alg).cloned().collect()
}

fn fits(points: &[ScalingPoint], grid: &ScanGrid) -> Result<(Vec<FitEntry>, Vec<FitEntry>)> {
    let (mut by_width, mut by_depth) = (Vec::new(), Vec::new());
    for &alg in &grid.algorithms {
        let pts = of(points, alg);
        if grid.widths.len() >= 4 {
            for &d in &grid.depths {
                let row: Vec<ScalingPoint> = pts.iter().filter(|p| p.depth == d).cloned().collect();
                let fit = fit_scaling(&row, FitModel::QuadraticInWidth)?;
                by_width.push(FitEntry { algorithm: alg, fixed: d, fit });
            }
        }
        if grid.depths.len() >= 4 {
            for &w in &grid.widths {
                let col: Vec<ScalingPoint> = pts.iter().filter(|p| p.width == w).cloned().collect();
                let fit = fit_scaling(&col, FitModel::LinearInDepth)?;
                by_depth.push(FitEntry { algorithm: alg, fixed: w, fit });
            }
        }
    }
    Ok((by_width, by_depth))
}

/// Scans the grid into `points.csv` (resuming a partial file), fits the
/// timings and writes `summary.json`.
pub fn cmd_bench(global: &GlobalArgs, args: &BenchArgs) -> Result<BenchSummary> {
    let run = resolve::<BenchSettings>("bench", global, |s| args.apply(s))?;
    let s = &run.settings;
    let started = Instant::now();
    let mut grid = s.grid.clone();
    grid.threads = grid.threads.min(thread_cap()?).max(1);
    let options = TimingOptions {
        clock: s.clock,
        repetitions: s.repetitions,
        seed: run.seed,
        max_bytes: s.max_bytes,
        realtime: s.realtime,
    };
    run.prepare_out()?;
    let points = scan_widths(&grid, s.latency, &options, Some(&run.path("points.csv")))?;
    let (width_fits, depth_fits) = fits(&points, &grid)?;
    let (bp, odfa) = (of(&points, Algorithm::Bp), of(&points, Algorithm::Odfa));
    let both = !bp.is_empty() && !odfa.is_empty();
    let crossover = if both { find_crossover(&bp, &odfa)? } else { None };
    let calibration = match &s.calibration {
        Some(c) if both => {
            let calibration = calibrate_latency(&bp, &odfa, c.target, s.latency.projections_per_signal)?;
            let (pb, po) = predict_points(&calibration, &c.widths, c.target.depth);
            let crossover = find_crossover(&pb, &po)?;
            Some(CalibrationReport { calibration, crossover })
        }
        Some(_) => return Err(CliError::Config("calibration needs both bp and odfa in the grid".into())),
        None => None,
    };
    let summary = BenchSummary {
        config_hash: run.hash.clone(),
        points: points.len(),
        width_fits,
        depth_fits,
        crossover,
        calibration,
    };
    write_json(&run.path("summary.json"), &summary)?;
    write_run_log(&run.out, run.command, &run.hash, started.elapsed().as_secs_f64())?;
    if !global.quiet {
        println!("{} points, crossover {:?}", summary.points, summary.crossover);
    }
    Ok(summary)
}

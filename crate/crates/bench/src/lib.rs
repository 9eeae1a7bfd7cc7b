//! Timing harness for dense-network training: per-sample stage timings over
//! width and depth grids, least-squares scaling fits, and the search for the
//! point where optical feedback overtakes backpropagation.

mod crossover;
mod error;
mod fit;
mod scan;
mod timing;

pub use crossover::{calibrate_latency, find_crossover, latency_ratio_curve, predict_points, Calibration, CalibrationTarget, RatioPoint};
pub use error::{BenchError, Result};
pub use fit::{fit_scaling, FitModel, FitResult};
pub use scan::{read_points, scan_widths, write_points, ScanGrid};
pub use timing::{model_bytes, time_training, Breakdown, Clock, ScalingPoint, TimingOptions};

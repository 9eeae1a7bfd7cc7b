use std::collections::HashMap;
use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use photon_dfa_core::mlp::Algorithm;
use photon_dfa_core::opu::LatencyModel;

use crate::error::{BenchError, Result};
use crate::timing::{time_training, Breakdown, ScalingPoint, TimingOptions};

/// Cross product of depths, widths and algorithms, visited in that nesting order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGrid {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    /// Samples timed per repetition.
    pub samples: usize,
    /// Points computed concurrently. Values above 1 distort wall-clock timings.
    #[serde(default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

impl ScanGrid {
    pub fn new(depths: Vec<usize>, widths: Vec<usize>, algorithms: Vec<Algorithm>, samples: usize) -> Self {
        Self {
            depths,
            widths,
            algorithms,
            samples,
            threads: 1,
        }
    }

    fn keys(&self) -> Vec<(usize, usize, Algorithm)> {
        let mut out = Vec::new();
        for &d in &self.depths {
            for &w in &self.widths {
                for &a in &self.algorithms {
                    out.push((w, d, a));
                }
            }
        }
        out
    }
}

/// Flat CSV row; column names double as gnuplot column headers.
#[derive(Debug, Serialize, Deserialize)]
struct Row {
    width: usize,
    depth: usize,
    algorithm: Algorithm,
    seconds_per_sample: f64,
    forward: f64,
    feedback: f64,
    update: f64,
    optical: f64,
}

const HEADER: [&str; 8] = ["width", "depth", "algorithm", "seconds_per_sample", "forward", "feedback", "update", "optical"];

impl From<&ScalingPoint> for Row {
    fn from(p: &ScalingPoint) -> Self {
        Row {
            width: p.width,
            depth: p.depth,
            algorithm: p.algorithm,
            seconds_per_sample: p.seconds_per_sample,
            forward: p.breakdown.forward,
            feedback: p.breakdown.feedback,
            update: p.breakdown.update,
            optical: p.breakdown.optical,
        }
    }
}

impl From<Row> for ScalingPoint {
    fn from(r: Row) -> Self {
        ScalingPoint {
            width: r.width,
            depth: r.depth,
            algorithm: r.algorithm,
            seconds_per_sample: r.seconds_per_sample,
            breakdown: Breakdown {
                forward: r.forward,
                feedback: r.feedback,
                update: r.update,
                optical: r.optical,
            },
        }
    }
}

fn corrupt(path: &Path, reason: impl ToString) -> BenchError {
    BenchError::Corrupt {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

/// Reads a results file written by [`write_points`] or [`scan_widths`].
pub fn read_points(path: &Path) -> Result<Vec<ScalingPoint>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| corrupt(path, e))?;
    let headers = reader.headers().map_err(|e| corrupt(path, e))?.clone();
    if headers.iter().ne(HEADER) {
        return Err(corrupt(path, format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut points = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| corrupt(path, e))?;
        let p = ScalingPoint::from(row);
        let parts = [p.seconds_per_sample, p.breakdown.forward, p.breakdown.feedback, p.breakdown.update, p.breakdown.optical];
        if parts.iter().any(|v| !v.is_finite() || *v < 0.0) || p.width == 0 || p.depth == 0 {
            return Err(corrupt(path, format!("invalid values for width {} depth {}", p.width, p.depth)));
        }
        points.push(p);
    }
    Ok(points)
}

/// Writes a complete results file, replacing any existing one.
pub fn write_points(path: &Path, points: &[ScalingPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| corrupt(path, e))?;
    for p in points {
        w.serialize(Row::from(p)).map_err(|e| corrupt(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn append(path: &Path, point: &ScalingPoint, with_header: bool) -> Result<()> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(with_header).from_writer(file);
    w.serialize(Row::from(point)).map_err(|e| corrupt(path, e))?;
    w.flush()?;
    Ok(())
}

/// Times every grid point, in grid order. With an output file, points
/// already recorded there are reused and each new point is appended as soon
/// as it finishes, so an interrupted scan resumes where it stopped.
pub fn scan_widths(
    grid: &ScanGrid,
    latency: LatencyModel,
    options: &TimingOptions,
    output: Option<&Path>,
) -> Result<Vec<ScalingPoint>> {
    if grid.depths.is_empty() || grid.widths.is_empty() || grid.algorithms.is_empty() {
        return Err(BenchError::Invalid("scan grid needs at least one depth, width and algorithm".into()));
    }
    let mut done: HashMap<(usize, usize, Algorithm), ScalingPoint> = HashMap::new();
    let mut file_exists = false;
    if let Some(path) = output {
        // An empty file is what an interrupted first write leaves behind.
        if path.exists() && std::fs::metadata(path)?.len() > 0 {
            file_exists = true;
            for p in read_points(path)? {
                done.insert((p.width, p.depth, p.algorithm), p);
            }
        }
    }
    let keys = grid.keys();
    let missing: Vec<(usize, usize, Algorithm)> = keys.iter().copied().filter(|k| !done.contains_key(k)).collect();
    let measure = |&(w, d, a): &(usize, usize, Algorithm)| time_training(w, d, a, latency, grid.samples, options);

    if grid.threads <= 1 {
        for key in &missing {
            let point = measure(key)?;
            if let Some(path) = output {
                append(path, &point, !file_exists)?;
                file_exists = true;
            }
            done.insert(*key, point);
        }
    } else {
        let per = missing.len().div_ceil(grid.threads).max(1);
        let mut results: Vec<Result<Vec<ScalingPoint>>> = Vec::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = missing
                .chunks(per)
                .map(|chunk| scope.spawn(move || chunk.iter().map(measure).collect::<Result<Vec<_>>>()))
                .collect();
            results = handles.into_iter().map(|h| h.join().expect("timing worker panicked")).collect();
        });
        for chunk in results {
            for point in chunk? {
                if let Some(path) = output {
                    append(path, &point, !file_exists)?;
                    file_exists = true;
                }
                done.insert((point.width, point.depth, point.algorithm), point);
            }
        }
    }
    Ok(keys.iter().map(|k| done[k].clone()).collect())
}

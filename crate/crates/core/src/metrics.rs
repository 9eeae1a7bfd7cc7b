//! Latitude-weighted error metrics over gridded time series.
//!
//! Latitude rows are weighted by `sin(pi * i / H)` with `i` counted from 1,
//! so the last row carries zero weight.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default weight of the global term in [`total_nrmse`].
pub const DEFAULT_ALPHA: f64 = 5.0;

/// A `[T, H, W]` field of finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    values: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl GridField {
    pub fn new(t: usize, h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape {
                shape: vec![t, h, w],
                reason: "every grid extent must be at least 1".into(),
            });
        }
        let values = Tensor::new(vec![t, h, w], values)?;
        if !values.is_finite() {
            return Err(Error::Numerical("grid field contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn shape(&self) -> GridShape {
        let s = self.values.shape();
        GridShape { t: s[0], h: s[1], w: s[2] }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// The `[H, W]` slice at time `t`, row-major.
    pub fn slice(&self, t: usize) -> &[f64] {
        let GridShape { h, w, .. } = self.shape();
        &self.values.data()[t * h * w..(t + 1) * h * w]
    }

    /// Mean over time of each grid cell.
    pub fn time_mean(&self) -> Vec<f64> {
        let GridShape { t, h, w } = self.shape();
        let mut out = vec![0.0; h * w];
        for k in 0..t {
            out.iter_mut().zip(self.slice(k)).for_each(|(a, b)| *a += b);
        }
        out.iter_mut().for_each(|v| *v /= t as f64);
        out
    }

    /// Raw little-endian f64 values plus a JSON sidecar holding the shape.
    pub fn write_binary(&self, data: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.values.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(data, bytes)?;
        std::fs::write(sidecar, serde_json::to_vec_pretty(&self.shape())?)?;
        Ok(())
    }

    pub fn read_binary(data: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<Self> {
        let shape: GridShape = serde_json::from_slice(&std::fs::read(sidecar)?)?;
        let bytes = std::fs::read(data)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format(format!("binary field length {} is not a multiple of 8", bytes.len())));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(shape.t, shape.h, shape.w, values)
    }

    /// Long-form CSV with header `t,lat,lon,value`.
    pub fn to_csv(&self) -> String {
        let GridShape { t, h, w } = self.shape();
        let mut out = String::from("t,lat,lon,value\n");
        for k in 0..t {
            for i in 0..h {
                for j in 0..w {
                    let _ = writeln!(out, "{k},{i},{j},{}", self.values.data()[(k * h + i) * w + j]);
                }
            }
        }
        out
    }

    /// Parses [`GridField::to_csv`] output. Every cell must appear exactly once.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "t,lat,lon,value" => {}
            other => return Err(Error::Format(format!("unexpected grid CSV header {other:?}"))),
        }
        let mut cells = Vec::new();
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 4 {
                return Err(Error::Format(format!("grid CSV row {} has {} columns", n + 2, parts.len())));
            }
            let idx = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("row {}: {e}", n + 2)));
            let v = parts[3].parse::<f64>().map_err(|e| Error::Format(format!("row {}: {e}", n + 2)))?;
            cells.push((idx(parts[0])?, idx(parts[1])?, idx(parts[2])?, v));
        }
        let extent = |f: fn(&(usize, usize, usize, f64)) -> usize| cells.iter().map(f).max().map_or(0, |m| m + 1);
        let (t, h, w) = (extent(|c| c.0), extent(|c| c.1), extent(|c| c.2));
        if cells.len() != t * h * w {
            return Err(Error::Format(format!("grid CSV has {} cells for a {t}x{h}x{w} grid", cells.len())));
        }
        let mut values = vec![f64::NAN; t * h * w];
        let mut seen = vec![false; t * h * w];
        for (k, i, j, v) in cells {
            let at = (k * h + i) * w + j;
            if std::mem::replace(&mut seen[at], true) {
                return Err(Error::Format(format!("grid CSV repeats cell ({k},{i},{j})")));
            }
            values[at] = v;
        }
        Self::new(t, h, w, values)
    }
}

fn latitude_weight(i: usize, h: usize) -> f64 {
    (std::f64::consts::PI * (i + 1) as f64 / h as f64).sin()
}

/// Sin-weighted mean of one `[H, W]` slice, divided by `H * W`.
pub fn global_mean(slice: &[f64], h: usize, w: usize) -> Result<f64> {
    if h == 0 || slice.len() != h * w {
        return Err(Error::dim("global_mean", &[slice.len()], &[h, w]));
    }
    let mut acc = 0.0;
    for (i, row) in slice.chunks_exact(w.max(1)).enumerate() {
        acc += latitude_weight(i, h) * row.iter().sum::<f64>();
    }
    Ok(acc / (h * w) as f64)
}

fn check_pair(pred: &GridField, target: &GridField) -> Result<GridShape> {
    let (p, t) = (pred.shape(), target.shape());
    if p != t {
        return Err(Error::dim("grid metric", &[p.t, p.h, p.w], &[t.t, t.h, t.w]));
    }
    Ok(p)
}

/// Time average of the prediction's weighted mean; every normalized metric divides by it.
fn denominator(pred: &GridField) -> Result<f64> {
    let GridShape { t, h, w } = pred.shape();
    let mut acc = 0.0;
    for k in 0..t {
        acc += global_mean(pred.slice(k), h, w)?;
    }
    let d = acc / t as f64;
    if d == 0.0 {
        return Err(Error::Numerical("prediction has zero weighted mean; normalized error undefined".into()));
    }
    Ok(d)
}

pub fn spatial_nrmse(pred: &GridField, target: &GridField) -> Result<f64> {
    let GridShape { h, w, .. } = check_pair(pred, target)?;
    let d = denominator(pred)?;
    let sq: Vec<f64> = pred.time_mean().iter().zip(target.time_mean()).map(|(a, b)| (a - b).powi(2)).collect();
    Ok(global_mean(&sq, h, w)?.sqrt() / d)
}

pub fn global_nrmse(pred: &GridField, target: &GridField) -> Result<f64> {
    let GridShape { t, h, w } = check_pair(pred, target)?;
    let d = denominator(pred)?;
    let mut acc = 0.0;
    for k in 0..t {
        acc += (global_mean(pred.slice(k), h, w)? - global_mean(target.slice(k), h, w)?).powi(2);
    }
    Ok((acc / t as f64).sqrt() / d)
}

pub fn total_nrmse(pred: &GridField, target: &GridField, alpha: f64) -> Result<f64> {
    Ok(spatial_nrmse(pred, target)? + alpha * global_nrmse(pred, target)?)
}

/// Unweighted root-mean-square error over every cell and time step.
pub fn rmse(pred: &GridField, target: &GridField) -> Result<f64> {
    check_pair(pred, target)?;
    let (p, t) = (pred.values.data(), target.values.data());
    Ok((p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub spatial: f64,
    pub global: f64,
    pub total: f64,
    pub rmse: f64,
    pub alpha: f64,
}

pub fn evaluate_fields(pred: &GridField, target: &GridField, alpha: f64) -> Result<MetricReport> {
    let spatial = spatial_nrmse(pred, target)?;
    let global = global_nrmse(pred, target)?;
    Ok(MetricReport {
        spatial,
        global,
        total: spatial + alpha * global,
        rmse: rmse(pred, target)?,
        alpha,
    })
}

//! Classification datasets: IDX files and a seeded synthetic digit generator.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{derived, permutation};

/// Row-major samples with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(Error::Format(format!(
                "{} input values do not form {} samples of width {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::IndexOutOfRange { index: bad, len: classes });
        }
        Ok(Self {
            dim,
            classes,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        Self {
            dim: self.dim,
            classes: self.classes,
            inputs,
            labels,
        }
    }

    /// Seeded shuffle, then the first `fraction` of samples become validation.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidConfig(format!("validation fraction {fraction} outside [0, 1)")));
        }
        let order = permutation(&mut derived(seed, &[0x5a1]), self.len());
        let n_val = (self.len() as f64 * fraction).round() as usize;
        let (val, train) = order.split_at(n_val);
        Ok((self.subset(train), self.subset(val)))
    }
}

fn read_be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Parses an IDX image file (magic `0x00000803`) into `[0, 1]` pixels.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != 0x0000_0803 {
        return Err(Error::Format(format!("image file magic {magic:#010x}, expected 0x00000803")));
    }
    let n = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)? as usize;
    let cols = read_be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Format(format!("image payload has {} bytes, header promises {}", body.len(), n * rows * cols)));
    }
    Ok((n, rows * cols, body.iter().map(|&b| b as f64 / 255.0).collect()))
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != 0x0000_0801 {
        return Err(Error::Format(format!("label file magic {magic:#010x}, expected 0x00000801")));
    }
    let n = read_be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!("label payload has {} bytes, header promises {n}", body.len())));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

pub fn load_idx_pair(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (n, dim, inputs) = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    if labels.len() != n {
        return Err(Error::Format(format!("{n} images but {} labels", labels.len())));
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(10);
    Dataset::new(dim, classes, inputs, labels)
}

/// Loads `train-images-idx3-ubyte` and friends from `dir` as (train, test).
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_idx_pair(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let test = load_idx_pair(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

pub fn encode_idx_images(side: usize, data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + data.inputs.len());
    for v in [0x0803u32, data.len() as u32, side as u32, side as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(data.inputs.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn encode_idx_labels(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + data.len());
    for v in [0x0801u32, data.len() as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(data.labels.iter().map(|&y| y as u8));
    out
}

// 8×8 stroke templates for the ten digits.
const GLYPHS: [[&str; 8]; 10] = [
    ["..####..", ".##..##.", "##....##", "##....##", "##....##", "##....##", ".##..##.", "..####.."],
    ["...##...", "..###...", ".####...", "...##...", "...##...", "...##...", "...##...", ".######."],
    ["..####..", ".##..##.", "......##", ".....##.", "...###..", "..##....", ".##.....", "########"],
    [".#####..", "##...##.", "......##", "...####.", "......##", "......##", "##...##.", ".#####.."],
    [".....##.", "....###.", "...####.", "..##.##.", ".##..##.", "########", ".....##.", ".....##."],
    ["#######.", "##......", "##......", "######..", ".....##.", "......##", "##...##.", ".#####.."],
    ["..####..", ".##.....", "##......", "######..", "##...##.", "##....##", ".##..##.", "..####.."],
    ["########", "......##", ".....##.", "....##..", "...##...", "..##....", "..##....", "..##...."],
    ["..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", "##....##", ".##..##.", "..####.."],
    ["..####..", ".##..##.", "##....##", ".##..###", "..######", "......##", ".....##.", "..####.."],
];

fn glyph_value(digit: usize, x: f64, y: f64) -> f64 {
    // Bilinear sample; outside the 8×8 cell grid reads as background.
    let fx = x - 0.5;
    let fy = y - 0.5;
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let at = |cx: f64, cy: f64| -> f64 {
        if !(0.0..8.0).contains(&cx) || !(0.0..8.0).contains(&cy) {
            return 0.0;
        }
        if GLYPHS[digit][cy as usize].as_bytes()[cx as usize] == b'#' {
            1.0
        } else {
            0.0
        }
    };
    let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Knobs for [`synthetic_digits`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticDigits {
    pub side: usize,
    pub samples: usize,
    pub max_rotation: f64,
    pub scale_jitter: f64,
    pub shear_jitter: f64,
    /// Translation range as a fraction of the image side.
    pub shift: f64,
    pub pixel_noise: f64,
}

impl SyntheticDigits {
    pub fn new(side: usize, samples: usize) -> Self {
        Self {
            side,
            samples,
            max_rotation: 0.3,
            scale_jitter: 0.2,
            shear_jitter: 0.3,
            shift: 0.12,
            pixel_noise: 0.25,
        }
    }
}

/// Renders jittered glyphs: random rotation, scale, shear and shift, a
/// random stroke gain and multiplicative Gaussian noise on inked pixels,
/// clamped to `[0, 1]`. Background pixels are exactly zero.
/// Labels cycle through the ten classes in a seeded order.
pub fn synthetic_digits(spec: &SyntheticDigits, seed: u64) -> Result<Dataset> {
    if spec.side < 4 || spec.samples == 0 {
        return Err(Error::InvalidConfig("synthetic digits need side >= 4 and at least one sample".into()));
    }
    let side = spec.side;
    let dim = side * side;
    let mut rng = derived(seed, &[0xd161]);
    let noise = Normal::new(0.0, spec.pixel_noise.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut inputs = Vec::with_capacity(spec.samples * dim);
    let mut labels = Vec::with_capacity(spec.samples);
    let cell = side as f64 / 8.0 * 0.8;
    for _ in 0..spec.samples {
        let digit = rng.random_range(0..10);
        let theta = rng.random_range(-spec.max_rotation..=spec.max_rotation);
        let scale = cell * (1.0 + rng.random_range(-spec.scale_jitter..=spec.scale_jitter));
        let shear = rng.random_range(-spec.shear_jitter..=spec.shear_jitter);
        let dx = rng.random_range(-spec.shift..=spec.shift) * side as f64;
        let dy = rng.random_range(-spec.shift..=spec.shift) * side as f64;
        let gain = rng.random_range(0.6..=1.0);
        let (s, c) = theta.sin_cos();
        let center = side as f64 / 2.0;
        for py in 0..side {
            for px in 0..side {
                // Undo shift, rotation, shear and scale to land in glyph coordinates.
                let u = px as f64 + 0.5 - center - dx;
                let v = py as f64 + 0.5 - center - dy;
                let ru = c * u + s * v;
                let rv = -s * u + c * v;
                let gx = (ru - shear * rv) / scale + 4.0;
                let gy = rv / scale + 4.0;
                let ink = glyph_value(digit, gx, gy);
                // Background stays exactly zero; only inked pixels are perturbed.
                let value = if ink > 0.0 { gain * ink * (1.0 + noise.sample(&mut rng)) } else { 0.0 };
                inputs.push(value.clamp(0.0, 1.0));
            }
        }
        labels.push(digit);
    }
    Dataset::new(dim, 10, inputs, labels)
}

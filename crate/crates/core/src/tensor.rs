//! Dense row-major `f64` tensors and the handful of kernels the trainers need.
//!
//! All reductions accumulate left to right in index order, so two calls with
//! the same inputs produce bit-identical results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("holds {} values, shape needs {expected}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        let len = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    /// One-dimensional tensor. Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector tensor");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape {
                shape: vec![rows.len(), cols],
                reason: "ragged rows".into(),
            });
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let c = self.cols();
        self.data[i * c + j] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim("axpy", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Rows `start..start + count` of a matrix as a new matrix.
    pub fn row_band(&self, start: usize, count: usize) -> Result<Tensor> {
        if self.shape.len() != 2 || start + count > self.rows() || count == 0 {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("cannot take rows {start}..{}", start + count),
            });
        }
        let c = self.cols();
        Tensor::matrix(count, c, self.data[start * c..(start + count) * c].to_vec())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "dimensions must be positive".into(),
        });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `h = W a + b` for `W: [d_out x d_in]`.
pub fn affine_forward(w: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape.len() != 2 || w.cols() != a.len() || w.rows() != b.len() {
        return Err(Error::dim("affine_forward", &w.shape, &[a.len(), b.len()]));
    }
    let mut out = Vec::with_capacity(w.rows());
    for i in 0..w.rows() {
        out.push(dot(w.row(i), &a.data) + b.data[i]);
    }
    Ok(Tensor::vector(out))
}

/// `W v`.
pub fn matvec(w: &Tensor, v: &[f64]) -> Result<Vec<f64>> {
    if w.shape.len() != 2 || w.cols() != v.len() {
        return Err(Error::dim("matvec", &w.shape, &[v.len()]));
    }
    Ok((0..w.rows()).map(|i| dot(w.row(i), v)).collect())
}

/// `Wᵀ v`, accumulated row by row.
pub fn matvec_transposed(w: &Tensor, v: &[f64]) -> Result<Vec<f64>> {
    if w.shape.len() != 2 || w.rows() != v.len() {
        return Err(Error::dim("matvec_transposed", &w.shape, &[v.len()]));
    }
    let mut out = vec![0.0; w.cols()];
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(w.row(i)) {
            *o += wij * vi;
        }
    }
    Ok(out)
}

/// `acc += scale * u vᵀ`.
pub fn add_outer(acc: &mut Tensor, scale: f64, u: &[f64], v: &[f64]) -> Result<()> {
    if acc.shape.len() != 2 || acc.rows() != u.len() || acc.cols() != v.len() {
        return Err(Error::dim("add_outer", &acc.shape, &[u.len(), v.len()]));
    }
    for (i, &ui) in u.iter().enumerate() {
        let f = scale * ui;
        if f == 0.0 {
            continue;
        }
        for (a, &vj) in acc.row_mut(i).iter_mut().zip(v) {
            *a += f * vj;
        }
    }
    Ok(())
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

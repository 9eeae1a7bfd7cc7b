use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived, normal_vec};
use crate::tensor::{dot, Tensor};

/// Complex transmission matrix with i.i.d. entries whose real and imaginary
/// parts are `Normal(0, 1/2)`, so each entry has unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmissionMatrix {
    pub rows: usize,
    pub cols: usize,
    pub real: Tensor,
    pub imag: Tensor,
    pub seed: u64,
}

pub fn sample_transmission_matrix(rows: usize, cols: usize, seed: u64) -> Result<TransmissionMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidShape {
            shape: vec![rows, cols],
            reason: "transmission matrix needs positive dimensions".into(),
        });
    }
    let std = std::f64::consts::FRAC_1_SQRT_2;
    let real = normal_vec(&mut derived(seed, &[0x7e]), rows * cols, std);
    let imag = normal_vec(&mut derived(seed, &[0x1a]), rows * cols, std);
    Ok(TransmissionMatrix {
        rows,
        cols,
        real: Tensor::matrix(rows, cols, real)?,
        imag: Tensor::matrix(rows, cols, imag)?,
        seed,
    })
}

impl TransmissionMatrix {
    pub fn from_parts(real: Tensor, imag: Tensor, seed: u64) -> Result<Self> {
        if real.shape().len() != 2 || real.shape() != imag.shape() {
            return Err(Error::dim("transmission matrix parts", real.shape(), imag.shape()));
        }
        Ok(Self {
            rows: real.rows(),
            cols: real.cols(),
            real,
            imag,
            seed,
        })
    }

    /// Output field `T x` as (real, imaginary) parts.
    pub fn field(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.cols {
            return Err(Error::dim("transmission field", &[self.rows, self.cols], &[x.len()]));
        }
        let re = (0..self.rows).map(|i| dot(self.real.row(i), x)).collect();
        let im = (0..self.rows).map(|i| dot(self.imag.row(i), x)).collect();
        Ok((re, im))
    }

    /// Noiseless camera image `|T x|²`.
    pub fn intensity(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (re, im) = self.field(x)?;
        Ok(re.iter().zip(&im).map(|(a, b)| a * a + b * b).collect())
    }

    pub fn intensity_measure(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::vector(self.intensity(x.data())?))
    }
}

use serde::{Deserialize, Serialize};

use super::MlpModel;
use crate::error::{Error, Result};
use crate::opu::{FeedbackProjector, NoiseKind, NoiseSpec, OpuSession, TernaryCode};
use crate::rng::{derived, normal_vec};
use crate::stats::pearson_correlation;
use crate::tensor::{matvec, Tensor};

const TAG_FEEDBACK: u64 = 0xfb;
const TAG_TM_NOISE: u64 = 0x71;
const TAG_DRIFT: u64 = 0xd7;
const TAG_CAMERA: u64 = 0xca;

/// How per-layer feedback matrices are cut from one tall source matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandLayout {
    /// Layer `l` takes the rows after layer `l - 1`'s band.
    #[default]
    Disjoint,
    /// Every layer reads from row 0; bands overlap.
    Shared,
}

impl BandLayout {
    /// `(start, len)` per hidden layer.
    pub fn bands(self, hidden_dims: &[usize]) -> Vec<(usize, usize)> {
        let mut start = 0;
        hidden_dims
            .iter()
            .map(|&d| match self {
                BandLayout::Disjoint => {
                    let band = (start, d);
                    start += d;
                    band
                }
                BandLayout::Shared => (0, d),
            })
            .collect()
    }

    pub fn required_rows(self, hidden_dims: &[usize]) -> usize {
        match self {
            BandLayout::Disjoint => hidden_dims.iter().sum(),
            BandLayout::Shared => hidden_dims.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackProvenance {
    DigitalGaussian { seed: u64 },
    OpuSessionRows { layout: BandLayout },
    Explicit,
}

/// One fixed `d_l × d_L` matrix per hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackMatrixSet {
    pub matrices: Vec<Tensor>,
    pub provenance: FeedbackProvenance,
}

impl FeedbackMatrixSet {
    /// Independent `Normal(0, 1)` entries.
    pub fn digital_gaussian(hidden_dims: &[usize], output_dim: usize, seed: u64) -> Result<Self> {
        let matrices = hidden_dims
            .iter()
            .enumerate()
            .map(|(l, &d)| Tensor::matrix(d, output_dim, normal_vec(&mut derived(seed, &[TAG_FEEDBACK, l as u64]), d * output_dim, 1.0)))
            .collect::<Result<_>>()?;
        Ok(Self {
            matrices,
            provenance: FeedbackProvenance::DigitalGaussian { seed },
        })
    }

    /// Row bands of the session's column-probed effective matrix.
    pub fn from_session(session: &OpuSession, hidden_dims: &[usize], layout: BandLayout) -> Result<Self> {
        let need = layout.required_rows(hidden_dims);
        if session.rows() < need {
            return Err(Error::dim("session rows", &[need], &[session.rows()]));
        }
        let t_eff = session.effective_matrix()?;
        let matrices = layout
            .bands(hidden_dims)
            .into_iter()
            .map(|(start, len)| t_eff.row_band(start, len))
            .collect::<Result<_>>()?;
        Ok(Self {
            matrices,
            provenance: FeedbackProvenance::OpuSessionRows { layout },
        })
    }

    pub fn explicit(matrices: Vec<Tensor>) -> Self {
        Self {
            matrices,
            provenance: FeedbackProvenance::Explicit,
        }
    }

    /// `B^(l) = W^(l+1)ᵀ ⋯ W^(L)ᵀ`: feedback that makes DFA equal BP on a linear net.
    pub fn transpose_chain(model: &MlpModel) -> Result<Self> {
        let depth = model.depth();
        let mut matrices = vec![Tensor::zeros(&[1, 1])?; depth - 1];
        let mut below: Option<Tensor> = None;
        for l in (0..depth - 1).rev() {
            let w = &model.weights()[l + 1];
            let (rows, cols) = (w.cols(), model.output_dim());
            let mut b = Tensor::zeros(&[rows, cols])?;
            for i in 0..rows {
                for j in 0..cols {
                    let v = match &below {
                        None => w.get(j, i),
                        Some(next) => (0..w.rows()).map(|k| w.get(k, i) * next.get(k, j)).sum(),
                    };
                    b.set(i, j, v);
                }
            }
            matrices[l] = b.clone();
            below = Some(b);
        }
        Ok(Self::explicit(matrices))
    }

    pub fn check_against(&self, model: &MlpModel) -> Result<()> {
        let hidden = model.hidden_dims();
        if self.matrices.len() != hidden.len() {
            return Err(Error::dim("feedback set", &[hidden.len()], &[self.matrices.len()]));
        }
        for (b, &d) in self.matrices.iter().zip(hidden) {
            if b.rows() != d || b.cols() != model.output_dim() {
                return Err(Error::dim("feedback matrix", &[d, model.output_dim()], b.shape()));
            }
        }
        Ok(())
    }

    /// `B^(l) e` for every hidden layer.
    pub fn signals(&self, e: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.matrices.iter().map(|b| matvec(b, e)).collect()
    }

    /// All matrices stacked vertically in layer order.
    pub fn stacked(&self) -> Result<Tensor> {
        let cols = self.matrices.first().map_or(0, Tensor::cols);
        let rows = self.matrices.iter().map(Tensor::rows).sum();
        let data = self.matrices.iter().flat_map(|m| m.data().iter().copied()).collect();
        Tensor::matrix(rows, cols, data)
    }

    pub fn output_dim(&self) -> usize {
        self.matrices.first().map_or(0, Tensor::cols)
    }
}

/// Digital feedback matrices with the same three noise models as the
/// optical session, applied to the real matrices directly.
#[derive(Clone, Debug)]
pub struct DigitalFeedback {
    base: FeedbackMatrixSet,
    view: Option<FeedbackMatrixSet>,
    noise: NoiseSpec,
    training_step: u64,
    drift_steps: u64,
    projections: u64,
}

impl DigitalFeedback {
    pub fn new(set: FeedbackMatrixSet, noise: NoiseSpec) -> Result<Self> {
        noise.validate()?;
        let mut f = Self {
            base: set,
            view: None,
            noise,
            training_step: 0,
            drift_steps: 0,
            projections: 0,
        };
        f.rebuild_view()?;
        Ok(f)
    }

    /// The stored matrices: initial ones unless drift has been applied.
    pub fn base(&self) -> &FeedbackMatrixSet {
        &self.base
    }

    /// Matrices in effect for the current training step.
    pub fn current(&self) -> &FeedbackMatrixSet {
        self.view.as_ref().unwrap_or(&self.base)
    }

    pub fn projections(&self) -> u64 {
        self.projections
    }

    pub fn noise(&self) -> NoiseSpec {
        self.noise
    }

    fn perturbation(&self, tag: u64, counter: u64, layer: usize, len: usize) -> Vec<f64> {
        normal_vec(&mut derived(self.noise.seed, &[tag, counter, layer as u64]), len, self.noise.sigma)
    }

    fn rebuild_view(&mut self) -> Result<()> {
        if self.noise.kind != NoiseKind::TmNoise || !self.noise.is_active() {
            self.view = None;
            return Ok(());
        }
        let mut view = self.base.clone();
        for (l, m) in view.matrices.iter_mut().enumerate() {
            let n = self.perturbation(TAG_TM_NOISE, self.training_step, l, m.len());
            m.data_mut().iter_mut().zip(n).for_each(|(v, d)| *v += d);
        }
        self.view = Some(view);
        Ok(())
    }

    fn drift(&mut self) {
        if self.noise.is_active() {
            for l in 0..self.base.matrices.len() {
                let n = self.perturbation(TAG_DRIFT, self.drift_steps, l, self.base.matrices[l].len());
                self.base.matrices[l].data_mut().iter_mut().zip(n).for_each(|(v, d)| *v += d);
            }
        }
        self.drift_steps += 1;
    }

    pub fn advance_training_step(&mut self) -> Result<()> {
        self.training_step += 1;
        match self.noise.kind {
            NoiseKind::TmNoise => self.rebuild_view(),
            NoiseKind::Drift => {
                self.drift();
                Ok(())
            }
            NoiseKind::None | NoiseKind::MeasurementNoise => Ok(()),
        }
    }

    /// One feedback projection of a real vector, with signal noise if configured.
    pub fn project(&mut self, e: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut signals = self.current().signals(e)?;
        if self.noise.kind == NoiseKind::MeasurementNoise && self.noise.is_active() {
            for (l, s) in signals.iter_mut().enumerate() {
                let n = self.perturbation(TAG_CAMERA, self.projections, l, s.len());
                s.iter_mut().zip(n).for_each(|(v, d)| *v += d);
            }
        }
        self.projections += 1;
        Ok(signals)
    }

    pub fn project_code(&mut self, code: &TernaryCode) -> Result<Vec<Vec<f64>>> {
        self.project(&code.scaled_difference())
    }
}

impl FeedbackProjector for FeedbackMatrixSet {
    fn input_dim(&self) -> usize {
        self.output_dim()
    }

    fn project_real(&self, e: &[f64]) -> Result<Vec<f64>> {
        Ok(self.signals(e)?.concat())
    }

    fn project_code(&self, code: &TernaryCode) -> Result<Vec<f64>> {
        self.project_real(&code.scaled_difference())
    }
}

/// End-of-run correlation of `B(t) p` against `B(0) p` after `steps` drift
/// increments drawn from the same stream training would use.
pub fn digital_drift_pcc(initial: &FeedbackMatrixSet, noise_seed: u64, sigma: f64, steps: u64, probe: &[f64]) -> Result<f64> {
    let s0 = initial.project_real(probe)?;
    let mut f = DigitalFeedback::new(initial.clone(), NoiseSpec::new(NoiseKind::Drift, sigma, noise_seed))?;
    for _ in 0..steps {
        f.advance_training_step()?;
    }
    pearson_correlation(&f.current().project_real(probe)?, &s0)
}

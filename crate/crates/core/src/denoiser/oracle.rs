use ndarray::{Array2, ArrayView2};

use super::Denoiser;
use crate::diffusion::ParamMode;
use crate::error::{DdkError, Result};
use crate::schedule::NoiseSchedule;

/// Data distributions whose optimal noise predictor is known in closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleKind {
    /// `x_0 ~ N(0, I)`: `E[eps | x_t] = sqrt(1 - abar_t) x_t`.
    StandardNormalData,
    /// `x_0 = c` in every coordinate: `eps = (x_t - sqrt(abar_t) c) / sqrt(1 - abar_t)`.
    PointMass(f64),
}

/// Exact posterior-mean noise predictor for an [`OracleKind`].
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    kind: OracleKind,
    dim: usize,
    sched: NoiseSchedule,
}

impl OracleDenoiser {
    pub fn new(kind: OracleKind, dim: usize, sched: NoiseSchedule) -> Self {
        Self { kind, dim, sched }
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    /// The oracle noise estimate at a single step.
    pub fn eval(&self, x_t: ArrayView2<f64>, t: usize) -> Result<Array2<f64>> {
        self.sched.check_step(t)?;
        let s = &self.sched;
        match self.kind {
            OracleKind::StandardNormalData => {
                let k = s.sqrt_one_minus_alpha_bar(t);
                Ok(x_t.mapv(|x| k * x))
            }
            OracleKind::PointMass(c) => {
                let denom = s.sqrt_one_minus_alpha_bar(t);
                if denom == 0.0 {
                    return Err(DdkError::InvalidArgument(format!(
                        "point-mass oracle undefined at t={t} where abar_t = 1"
                    )));
                }
                let shift = s.sqrt_alpha_bar(t) * c;
                Ok(x_t.mapv(|x| (x - shift) / denom))
            }
        }
    }
}

impl Denoiser for OracleDenoiser {
    fn param_mode(&self) -> ParamMode {
        ParamMode::PredictEps
    }

    fn data_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x_t: ArrayView2<f64>, t: &[usize]) -> Result<Array2<f64>> {
        if t.len() != x_t.nrows() || x_t.ncols() != self.dim {
            return Err(DdkError::ShapeMismatch(format!(
                "oracle expects {} columns and one step per row",
                self.dim
            )));
        }
        let mut out = Array2::zeros(x_t.raw_dim());
        for (i, &ti) in t.iter().enumerate() {
            let row = x_t.slice(ndarray::s![i..i + 1, ..]);
            out.row_mut(i).assign(&self.eval(row, ti)?.row(0));
        }
        Ok(out)
    }

    fn predict_at(&self, x_t: ArrayView2<f64>, t: usize) -> Result<Array2<f64>> {
        if x_t.ncols() != self.dim {
            return Err(DdkError::ShapeMismatch(format!(
                "oracle expects {} columns",
                self.dim
            )));
        }
        self.eval(x_t, t)
    }
}

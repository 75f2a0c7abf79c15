//! Training objectives.
//!
//! Both objectives share one form: a per-row weighted squared error between
//! a regression target and the model output, averaged over rows and
//! dimensions. The simple objective drops the weights. The weighted one
//! keeps the exact bound weights for the chosen parameterization, which
//! turns each row into an unbiased single-step estimate of `L_{t-1}` (and of
//! the Gaussian `L_0` surrogate when `t = 1`).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;

use super::{posterior_mean, ParamMode, SigmaMode};
use crate::denoiser::{Denoiser, MlpDenoiser};
use crate::error::{DdkError, Result};
use crate::rng::{self, RngStream};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossMode {
    /// Unweighted squared error on the parameterization's natural target.
    Simple,
    /// Squared error with the variational-bound weights.
    WeightedVb,
}

impl LossMode {
    pub const ALL: [LossMode; 2] = [LossMode::Simple, LossMode::WeightedVb];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::Simple => "simple",
            LossMode::WeightedVb => "weighted_vb",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = DdkError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(LossMode::Simple),
            "weighted_vb" => Ok(LossMode::WeightedVb),
            other => Err(DdkError::InvalidArgument(format!(
                "unknown loss mode '{other}' (expected one of: simple, weighted_vb)"
            ))),
        }
    }
}

/// The random inputs of one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossDraw {
    pub t: Vec<usize>,
    pub eps: Array2<f64>,
}

/// Draws one step and one noise vector per row. Row `r` takes its step from
/// `root.fork(TIMESTEP).fork(r)` and its noise from `root.fork(FORWARD).fork(r)`.
pub fn draw_loss_inputs(sched: &NoiseSchedule, n: usize, dim: usize, root: &RngStream) -> LossDraw {
    let steps = sched.steps();
    let ts = root.fork(rng::TIMESTEP);
    let fwd = root.fork(rng::FORWARD);
    let t = (0..n)
        .map(|r| ts.fork(r as u64).rng().random_range(1..=steps))
        .collect();
    let mut eps = Array2::zeros((n, dim));
    for (r, mut row) in eps.rows_mut().into_iter().enumerate() {
        fwd.fork(r as u64)
            .fill_normal(row.as_slice_mut().expect("standard layout"));
    }
    LossDraw { t, eps }
}

/// Noised inputs and weighted regression targets for one draw.
#[derive(Clone, Debug)]
pub struct LossTargets {
    pub x_t: Array2<f64>,
    pub target: Array2<f64>,
    pub weights: Vec<f64>,
}

impl LossTargets {
    pub fn new(
        sched: &NoiseSchedule,
        param_mode: ParamMode,
        loss_mode: LossMode,
        sigma: SigmaMode,
        x0: ArrayView2<f64>,
        draw: &LossDraw,
    ) -> Result<Self> {
        let (n, dim) = x0.dim();
        if draw.eps.dim() != (n, dim) || draw.t.len() != n {
            return Err(DdkError::ShapeMismatch(format!(
                "loss draw for {} rows x {} dims, data is {n} x {dim}",
                draw.t.len(),
                draw.eps.ncols()
            )));
        }
        for &t in &draw.t {
            sched.check_step(t)?;
        }
        let mut x_t = Array2::zeros((n, dim));
        for r in 0..n {
            let t = draw.t[r];
            let (a, b) = (sched.sqrt_alpha_bar(t), sched.sqrt_one_minus_alpha_bar(t));
            Zip::from(x_t.row_mut(r))
                .and(x0.row(r))
                .and(draw.eps.row(r))
                .for_each(|o, &x, &e| *o = a * x + b * e);
        }
        let target = match param_mode {
            ParamMode::PredictEps => draw.eps.clone(),
            ParamMode::PredictX0 => x0.to_owned(),
            ParamMode::PredictMu => {
                let mut mu = Array2::zeros((n, dim));
                for r in 0..n {
                    let t = draw.t[r];
                    let row = posterior_mean(
                        x0.slice(ndarray::s![r..r + 1, ..]),
                        x_t.slice(ndarray::s![r..r + 1, ..]),
                        t,
                        sched,
                    );
                    mu.row_mut(r).assign(&row.row(0));
                }
                mu
            }
        };
        let weights = draw
            .t
            .iter()
            .map(|&t| match loss_mode {
                LossMode::Simple => 1.0,
                LossMode::WeightedVb => bound_weight(sched, param_mode, sigma, t),
            })
            .collect();
        Ok(Self { x_t, target, weights })
    }
}

/// Multiplier that turns the squared error on the parameterization's target
/// into the step-`t` KL term (up to a constant).
pub fn bound_weight(sched: &NoiseSchedule, param_mode: ParamMode, sigma: SigmaMode, t: usize) -> f64 {
    let var = sigma.variance(sched, t);
    match param_mode {
        ParamMode::PredictEps => {
            let b = sched.beta(t);
            b * b / (2.0 * var * sched.alpha(t) * (1.0 - sched.alpha_bar(t)))
        }
        ParamMode::PredictMu => 1.0 / (2.0 * var),
        ParamMode::PredictX0 => {
            let c = sched.posterior_mean_coef1(t);
            c * c / (2.0 * var)
        }
    }
}

fn weighted_mse(out: ArrayView2<f64>, targets: &LossTargets) -> f64 {
    let (n, dim) = out.dim();
    let mut total = 0.0;
    for r in 0..n {
        let sq: f64 = out
            .row(r)
            .iter()
            .zip(targets.target.row(r))
            .map(|(o, y)| (y - o) * (y - o))
            .sum();
        total += targets.weights[r] * sq;
    }
    total / (n * dim) as f64
}

fn check_mode(denoiser_mode: ParamMode, dim: usize, x0: &ArrayView2<f64>) -> Result<()> {
    if dim != x0.ncols() {
        return Err(DdkError::ShapeMismatch(format!(
            "denoiser dim {dim} vs data dim {}",
            x0.ncols()
        )));
    }
    let _ = denoiser_mode;
    Ok(())
}

/// Objective value for any denoiser.
pub fn objective_value(
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    loss_mode: LossMode,
    sigma: SigmaMode,
    x0: ArrayView2<f64>,
    draw: &LossDraw,
) -> Result<f64> {
    check_mode(denoiser.param_mode(), denoiser.data_dim(), &x0)?;
    let targets = LossTargets::new(sched, denoiser.param_mode(), loss_mode, sigma, x0, draw)?;
    let out = denoiser.predict(targets.x_t.view(), &draw.t)?;
    Ok(weighted_mse(out.view(), &targets))
}

/// Objective value and its gradient with respect to the flat parameters.
pub fn objective_value_and_grad(
    model: &MlpDenoiser,
    sched: &NoiseSchedule,
    loss_mode: LossMode,
    sigma: SigmaMode,
    x0: ArrayView2<f64>,
    draw: &LossDraw,
) -> Result<(f64, Vec<f64>)> {
    check_mode(model.param_mode(), model.data_dim(), &x0)?;
    let targets = LossTargets::new(sched, model.param_mode(), loss_mode, sigma, x0, draw)?;
    let LossTargets { x_t, target, weights } = targets;
    model.value_and_grad(x_t.view(), &draw.t, move |tape, out| {
        let y = tape.leaf(target);
        let diff = tape.sub(y, out);
        let sq = tape.square(diff);
        let w = tape.scale_rows(sq, weights);
        tape.mean(w)
    })
}

/// Simple objective and gradient on a fresh draw from `root`.
pub fn loss_simple(
    model: &MlpDenoiser,
    sched: &NoiseSchedule,
    x0: ArrayView2<f64>,
    root: &RngStream,
) -> Result<(f64, Vec<f64>)> {
    let draw = draw_loss_inputs(sched, x0.nrows(), x0.ncols(), root);
    objective_value_and_grad(model, sched, LossMode::Simple, SigmaMode::FixedBeta, x0, &draw)
}

/// Bound-weighted objective and gradient on a fresh draw from `root`.
pub fn loss_weighted(
    model: &MlpDenoiser,
    sched: &NoiseSchedule,
    sigma: SigmaMode,
    x0: ArrayView2<f64>,
    root: &RngStream,
) -> Result<(f64, Vec<f64>)> {
    let draw = draw_loss_inputs(sched, x0.nrows(), x0.ncols(), root);
    objective_value_and_grad(model, sched, LossMode::WeightedVb, sigma, x0, &draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::MlpConfig;
    use crate::schedule::ScheduleSpec;
    use ndarray::array;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::new(ScheduleSpec::scaled_linear(50)).unwrap()
    }

    #[test]
    fn draws_are_in_range_and_reproducible() {
        let s = sched();
        let root = RngStream::new(3);
        let a = draw_loss_inputs(&s, 200, 3, &root);
        let b = draw_loss_inputs(&s, 200, 3, &root);
        assert_eq!(a, b);
        assert!(a.t.iter().all(|&t| (1..=50).contains(&t)));
        assert!(a.t.contains(&1) && a.t.contains(&50));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in LossMode::ALL {
            assert_eq!(m.as_str().parse::<LossMode>().unwrap(), m);
        }
        assert!("vlb".parse::<LossMode>().is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let s = sched();
        let x0 = array![[0.3, -0.5], [0.9, 0.1], [-0.2, -0.8]];
        let root = RngStream::new(11);
        for mode in ParamMode::ALL {
            let mut cfg = MlpConfig::new(2, mode);
            cfg.hidden = vec![6];
            let model = MlpDenoiser::new(cfg.clone(), 5).unwrap();
            let draw = draw_loss_inputs(&s, 3, 2, &root);
            for lm in LossMode::ALL {
                let (v, g) =
                    objective_value_and_grad(&model, &s, lm, SigmaMode::FixedBetaTilde, x0.view(), &draw).unwrap();
                let v2 = objective_value(&model, &s, lm, SigmaMode::FixedBetaTilde, x0.view(), &draw).unwrap();
                assert!((v - v2).abs() <= 1e-12 * v.abs().max(1.0));
                let flat = model.params_flat();
                for k in (0..flat.len()).step_by(7) {
                    let h = 1e-6;
                    let mut p = flat.clone();
                    p[k] += h;
                    let up = MlpDenoiser::from_flat(cfg.clone(), &p).unwrap();
                    p[k] -= 2.0 * h;
                    let dn = MlpDenoiser::from_flat(cfg.clone(), &p).unwrap();
                    let fd = (objective_value(&up, &s, lm, SigmaMode::FixedBetaTilde, x0.view(), &draw).unwrap()
                        - objective_value(&dn, &s, lm, SigmaMode::FixedBetaTilde, x0.view(), &draw).unwrap())
                        / (2.0 * h);
                    assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + fd.abs()), "{mode} {lm} k={k}: {fd} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn weights_are_positive_everywhere() {
        let s = sched();
        for pm in ParamMode::ALL {
            for sm in SigmaMode::ALL {
                for t in 1..=50 {
                    let w = bound_weight(&s, pm, sm, t);
                    assert!(w.is_finite() && w > 0.0, "{pm} {sm} t={t}");
                }
            }
        }
    }
}

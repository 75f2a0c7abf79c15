//! Closed-form Gaussian diffusion mathematics.
//!
//! All operations take and return `(n, D)` matrices. Steps are 1-indexed.
//! Log-likelihoods and KL terms are computed in nats and converted to bits
//! per dimension only when a result is reported.

mod bound;
mod decoder;
mod loss;
pub(crate) mod sample;

pub use bound::{vb_naive_mc, vb_terms, McEstimate, VbBreakdown, VbTrace};
pub use decoder::{bin_probability, decoder_log_likelihood, decoder_nll, normal_cdf};
pub use loss::{
    bound_weight, draw_loss_inputs, loss_simple, loss_weighted, objective_value, objective_value_and_grad,
    LossDraw, LossMode, LossTargets,
};
pub use sample::{
    p_sample_loop, p_sample_step, reverse_chain, SampleOutput, SamplerOptions, StepOutput,
};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{DdkError, Result};
use crate::schedule::NoiseSchedule;

/// What the network output means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamMode {
    /// The noise `eps` that produced `x_t`.
    PredictEps,
    /// The reverse-process mean directly.
    PredictMu,
    /// The clean sample `x_0`.
    PredictX0,
}

/// Fixed reverse-process variance choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SigmaMode {
    FixedBeta,
    FixedBetaTilde,
}

macro_rules! str_enum {
    ($ty:ident, $what:literal, $($variant:ident => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = DdkError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(DdkError::InvalidArgument(format!(
                        concat!("unknown ", $what, " '{}' (expected one of: {})"),
                        other,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

str_enum!(ParamMode, "parameterization",
    PredictEps => "predict_eps",
    PredictMu => "predict_mu",
    PredictX0 => "predict_x0",
);
str_enum!(SigmaMode, "sigma mode",
    FixedBeta => "fixed_beta",
    FixedBetaTilde => "fixed_beta_tilde",
);

impl ParamMode {
    pub const ALL: [ParamMode; 3] = [ParamMode::PredictEps, ParamMode::PredictMu, ParamMode::PredictX0];
}

impl SigmaMode {
    pub const ALL: [SigmaMode; 2] = [SigmaMode::FixedBeta, SigmaMode::FixedBetaTilde];

    /// `sigma_t^2`. The tilde mode uses the clipped posterior variance so
    /// that `t = 1` still gets a positive value.
    pub fn variance(&self, sched: &NoiseSchedule, t: usize) -> f64 {
        match self {
            SigmaMode::FixedBeta => sched.beta(t),
            SigmaMode::FixedBetaTilde => sched.beta_tilde_clipped(t),
        }
    }
}

/// Isotropic Gaussian: per-row means and one shared variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMoments {
    pub mean: Array2<f64>,
    pub var: f64,
}

fn same_shape(a: &ArrayView2<f64>, b: &ArrayView2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(DdkError::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// One forward step: `sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) noise`.
pub fn q_sample_step(
    x_prev: ArrayView2<f64>,
    t: usize,
    noise: ArrayView2<f64>,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    same_shape(&x_prev, &noise, "q_sample_step")?;
    let (a, b) = (sched.alpha(t).sqrt(), sched.beta(t).sqrt());
    Ok(Zip::from(&x_prev)
        .and(&noise)
        .map_collect(|&x, &z| a * x + b * z))
}

/// Closed-form marginal draw: `sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps`.
pub fn q_sample(
    x0: ArrayView2<f64>,
    t: usize,
    eps: ArrayView2<f64>,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    same_shape(&x0, &eps, "q_sample")?;
    let (a, b) = (sched.sqrt_alpha_bar(t), sched.sqrt_one_minus_alpha_bar(t));
    Ok(Zip::from(&x0).and(&eps).map_collect(|&x, &e| a * x + b * e))
}

/// Forward-process posterior `q(x_{t-1} | x_t, x_0)`.
pub fn q_posterior(
    x0: ArrayView2<f64>,
    x_t: ArrayView2<f64>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<GaussianMoments> {
    sched.check_step(t)?;
    same_shape(&x0, &x_t, "q_posterior")?;
    Ok(GaussianMoments {
        mean: posterior_mean(x0, x_t, t, sched),
        var: sched.beta_tilde(t),
    })
}

pub(crate) fn posterior_mean(
    x0: ArrayView2<f64>,
    x_t: ArrayView2<f64>,
    t: usize,
    sched: &NoiseSchedule,
) -> Array2<f64> {
    let (c1, c2) = (sched.posterior_mean_coef1(t), sched.posterior_mean_coef2(t));
    Zip::from(&x0).and(&x_t).map_collect(|&a, &b| c1 * a + c2 * b)
}

/// `(x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)`, optionally clamped to
/// `[-1, 1]`.
pub fn predict_x0_from_eps(
    x_t: ArrayView2<f64>,
    t: usize,
    eps_hat: ArrayView2<f64>,
    sched: &NoiseSchedule,
    clamp: bool,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    same_shape(&x_t, &eps_hat, "predict_x0_from_eps")?;
    let (a, b) = (sched.sqrt_alpha_bar(t), sched.sqrt_one_minus_alpha_bar(t));
    Ok(Zip::from(&x_t).and(&eps_hat).map_collect(|&x, &e| {
        let v = (x - b * e) / a;
        if clamp {
            v.clamp(-1.0, 1.0)
        } else {
            v
        }
    }))
}

/// The noise-prediction mean: `(x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t)`.
pub fn mu_from_eps(
    x_t: ArrayView2<f64>,
    t: usize,
    eps_hat: ArrayView2<f64>,
    sched: &NoiseSchedule,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    same_shape(&x_t, &eps_hat, "mu_from_eps")?;
    let k = sched.beta(t) / sched.sqrt_one_minus_alpha_bar(t);
    let s = sched.alpha(t).sqrt();
    Ok(Zip::from(&x_t).and(&eps_hat).map_collect(|&x, &e| (x - k * e) / s))
}

/// Reverse-process mean and the matching `x_0` estimate implied by a model
/// output under `mode`.
pub(crate) fn reverse_mean(
    sched: &NoiseSchedule,
    mode: ParamMode,
    x_t: ArrayView2<f64>,
    t: usize,
    output: ArrayView2<f64>,
    clamp: bool,
) -> Result<(Array2<f64>, Array2<f64>)> {
    same_shape(&x_t, &output, "model output")?;
    match mode {
        ParamMode::PredictEps => {
            let x0_hat = predict_x0_from_eps(x_t, t, output, sched, clamp)?;
            let mu = if clamp {
                posterior_mean(x0_hat.view(), x_t, t, sched)
            } else {
                mu_from_eps(x_t, t, output, sched)?
            };
            Ok((mu, x0_hat))
        }
        ParamMode::PredictX0 => {
            let x0_hat = if clamp {
                output.mapv(|v| v.clamp(-1.0, 1.0))
            } else {
                output.to_owned()
            };
            let mu = posterior_mean(x0_hat.view(), x_t, t, sched);
            Ok((mu, x0_hat))
        }
        ParamMode::PredictMu => {
            let (c1, c2) = (sched.posterior_mean_coef1(t), sched.posterior_mean_coef2(t));
            let x0_hat = Zip::from(&output).and(&x_t).map_collect(|&m, &x| {
                let v = (m - c2 * x) / c1;
                if clamp {
                    v.clamp(-1.0, 1.0)
                } else {
                    v
                }
            });
            Ok((output.to_owned(), x0_hat))
        }
    }
}

/// `KL(N(mean1, var1) || N(mean2, var2))` for one coordinate, in nats.
/// Both variances must be strictly positive.
pub fn gaussian_kl(mean1: f64, var1: f64, mean2: f64, var2: f64) -> Result<f64> {
    if !(var1 > 0.0) || !(var2 > 0.0) {
        return Err(DdkError::InvalidVariance(format!(
            "gaussian_kl needs positive variances, got {var1} and {var2}"
        )));
    }
    let ratio = var1 / var2;
    let d = mean1 - mean2;
    Ok(0.5 * (ratio - 1.0 - ratio.ln() + d * d / var2))
}

pub(crate) fn nats_to_bits_per_dim(nats: f64, dim: usize) -> f64 {
    nats / (dim as f64 * std::f64::consts::LN_2)
}

/// `log N(x; mean, var)` summed over a row.
pub(crate) fn gaussian_log_density(
    x: impl IntoIterator<Item = f64>,
    mean: impl IntoIterator<Item = f64>,
    var: f64,
) -> f64 {
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
    x.into_iter()
        .zip(mean)
        .map(|(x, m)| log_norm - 0.5 * (x - m) * (x - m) / var)
        .sum()
}

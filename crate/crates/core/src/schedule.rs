//! Variance schedules and the per-step constants derived from them.
//!
//! Steps are 1-indexed everywhere in the public API: `beta(t)` for
//! `t in 1..=T`, `alpha_bar(t)` for `t in 0..=T` with `alpha_bar(0) = 1`.
//! Internally every array is stored with a dummy slot at index 0 so the
//! storage offset equals the step number.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;

use crate::error::{DdkError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    /// `beta_t = beta_end` for every step.
    Constant,
    /// Linear in `sqrt(beta)`, then squared.
    Quadratic,
}

impl ScheduleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Constant => "constant",
            ScheduleKind::Quadratic => "quadratic",
        }
    }

    pub(crate) fn code(&self) -> u32 {
        match self {
            ScheduleKind::Linear => 0,
            ScheduleKind::Constant => 1,
            ScheduleKind::Quadratic => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ScheduleKind::Linear),
            1 => Some(ScheduleKind::Constant),
            2 => Some(ScheduleKind::Quadratic),
            _ => None,
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = DdkError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "constant" => Ok(ScheduleKind::Constant),
            "quadratic" => Ok(ScheduleKind::Quadratic),
            other => Err(DdkError::InvalidSchedule(format!(
                "unknown schedule kind '{other}' (expected linear, constant or quadratic)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleSpec {
    /// 1000 steps, `beta` linear from 1e-4 to 0.02.
    pub fn standard() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }

    /// The standard linear schedule with both endpoints scaled by
    /// `1000 / steps`, which keeps `alpha_bar(T)` near zero for short chains.
    pub fn scaled_linear(steps: usize) -> Self {
        let scale = 1000.0 / steps as f64;
        Self {
            kind: ScheduleKind::Linear,
            steps,
            beta_start: 1e-4 * scale,
            beta_end: 0.02 * scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(DdkError::InvalidSchedule("T must be at least 1".into()));
        }
        let in_range = |b: f64| b.is_finite() && b > 0.0 && b < 1.0;
        if !in_range(self.beta_start) || !in_range(self.beta_end) {
            return Err(DdkError::InvalidSchedule(format!(
                "betas must lie in (0, 1): beta_start = {}, beta_end = {}",
                self.beta_start, self.beta_end
            )));
        }
        if self.beta_start > self.beta_end {
            return Err(DdkError::InvalidSchedule(format!(
                "beta_start = {} exceeds beta_end = {}",
                self.beta_start, self.beta_end
            )));
        }
        Ok(())
    }

    fn betas(&self) -> Vec<f64> {
        let n = self.steps;
        let frac = |t: usize| {
            if n == 1 {
                0.0
            } else {
                (t - 1) as f64 / (n - 1) as f64
            }
        };
        (1..=n)
            .map(|t| match self.kind {
                ScheduleKind::Linear => {
                    if t == n && n > 1 {
                        self.beta_end
                    } else {
                        self.beta_start + frac(t) * (self.beta_end - self.beta_start)
                    }
                }
                ScheduleKind::Constant => self.beta_end,
                ScheduleKind::Quadratic => {
                    let (a, b) = (self.beta_start.sqrt(), self.beta_end.sqrt());
                    let r = a + frac(t) * (b - a);
                    r * r
                }
            })
            .collect()
    }
}

/// All per-step constants of a fixed forward process.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub(crate) spec: ScheduleSpec,
    pub(crate) beta: Vec<f64>,
    pub(crate) alpha: Vec<f64>,
    pub(crate) alpha_bar: Vec<f64>,
    pub(crate) sqrt_alpha_bar: Vec<f64>,
    pub(crate) sqrt_one_minus_alpha_bar: Vec<f64>,
    pub(crate) beta_tilde: Vec<f64>,
    pub(crate) beta_tilde_clipped: Vec<f64>,
    pub(crate) coef1: Vec<f64>,
    pub(crate) coef2: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(spec: ScheduleSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.steps;
        let mut beta = vec![0.0; n + 1];
        beta[1..].copy_from_slice(&spec.betas());

        let mut alpha = vec![1.0; n + 1];
        let mut alpha_bar = vec![1.0; n + 1];
        for t in 1..=n {
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
        }
        let sqrt_alpha_bar: Vec<f64> = alpha_bar.iter().map(|a| a.sqrt()).collect();
        let sqrt_one_minus_alpha_bar: Vec<f64> =
            alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect();

        let mut beta_tilde = vec![0.0; n + 1];
        let mut coef1 = vec![0.0; n + 1];
        let mut coef2 = vec![0.0; n + 1];
        for t in 1..=n {
            let denom = 1.0 - alpha_bar[t];
            beta_tilde[t] = (1.0 - alpha_bar[t - 1]) / denom * beta[t];
            coef1[t] = alpha_bar[t - 1].sqrt() * beta[t] / denom;
            coef2[t] = alpha[t].sqrt() * (1.0 - alpha_bar[t - 1]) / denom;
        }
        // Point-mass posterior at t = 1; pin it rather than trust rounding.
        beta_tilde[1] = 0.0;
        coef1[1] = 1.0;
        coef2[1] = 0.0;

        let mut beta_tilde_clipped = beta_tilde.clone();
        beta_tilde_clipped[1] = if n >= 2 { beta_tilde[2] } else { beta[1] };

        let sched = Self {
            spec,
            beta,
            alpha,
            alpha_bar,
            sqrt_alpha_bar,
            sqrt_one_minus_alpha_bar,
            beta_tilde,
            beta_tilde_clipped,
            coef1,
            coef2,
        };
        if let Some(bad) = sched.first_non_finite() {
            return Err(DdkError::InvalidSchedule(format!(
                "non-finite derived constant at step {bad}"
            )));
        }
        Ok(sched)
    }

    fn first_non_finite(&self) -> Option<usize> {
        (0..=self.steps()).find(|&t| {
            [
                self.beta[t],
                self.alpha_bar[t],
                self.beta_tilde[t],
                self.beta_tilde_clipped[t],
                self.coef1[t],
                self.coef2[t],
            ]
            .iter()
            .any(|v| !v.is_finite())
        })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.spec.steps
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(DdkError::StepOutOfRange {
                t,
                max: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }
    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.sqrt_alpha_bar[t]
    }
    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.sqrt_one_minus_alpha_bar[t]
    }
    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t]
    }
    /// `beta_tilde(t)` for `t >= 2`; `beta_tilde(2)` at `t = 1`.
    pub fn beta_tilde_clipped(&self, t: usize) -> f64 {
        self.beta_tilde_clipped[t]
    }
    pub fn posterior_mean_coef1(&self, t: usize) -> f64 {
        self.coef1[t]
    }
    pub fn posterior_mean_coef2(&self, t: usize) -> f64 {
        self.coef2[t]
    }
}

/// `KL(q(x_T | x_0) || N(0, I))` in bits per dimension, averaged over the
/// rows of `x0`.
pub fn terminal_kl_bits(sched: &NoiseSchedule, x0: ArrayView2<f64>) -> f64 {
    let ab = sched.alpha_bar(sched.steps());
    let (n, d) = x0.dim();
    if n == 0 || d == 0 {
        return 0.0;
    }
    // 0.5 * (ab * x^2 + (1 - ab) - 1 - ln(1 - ab)), with the variance part
    // written as -ab - ln(1 - ab) to avoid cancellation when ab is tiny.
    let var_part = -ab - (-ab).ln_1p();
    let sq: f64 = x0.iter().map(|v| v * v).sum();
    let nats_per_dim = 0.5 * (ab * sq / (n * d) as f64 + var_part);
    nats_per_dim.max(0.0) / std::f64::consts::LN_2
}

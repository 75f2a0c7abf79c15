//! Variational bound accounting.
//!
//! [`vb_terms`] evaluates the bound term by term: the prior term in closed
//! form, each `L_{t-1}` as a closed-form Gaussian KL against one sampled
//! `x_t ~ q(x_t | x_0)`, and `L_0` through the decoder. [`vb_naive_mc`]
//! estimates the same quantity from whole forward trajectories without any
//! of that structure and serves as its independent check.

use std::fmt::Write as _;

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::decoder::decoder_log_likelihood;
use super::sample::CHUNK_ROWS;
use super::{gaussian_kl, gaussian_log_density, nats_to_bits_per_dim, posterior_mean, reverse_mean, SigmaMode};
use crate::data::DataBatch;
use crate::denoiser::Denoiser;
use crate::error::{DdkError, Result};
use crate::rng::{self, RngStream};
use crate::schedule::NoiseSchedule;

/// Per-term bound values in bits per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct VbBreakdown {
    pub steps: usize,
    pub dim: usize,
    /// `KL(q(x_T | x_0) || N(0, I))`.
    pub l_t: f64,
    /// `L_{t-1}` for `t = 2..=T`; entry `i` belongs to step `t = i + 2`.
    pub l_mid: Vec<f64>,
    /// `-log p(x_0 | x_1)`.
    pub l_0: f64,
    pub total: f64,
    /// Standard error of `total` across the per-sample estimates.
    pub total_se: f64,
    /// Number of `(datapoint, sample)` estimates averaged.
    pub n_estimates: usize,
    /// RMSE of `mu_theta(x_1, 1)` against `x_0` on the `[0, 255]` scale.
    pub rmse_of_mu1: Option<f64>,
}

impl VbBreakdown {
    /// The KL term computed at step `t` (the bound's `L_{t-1}`), `2 <= t <= T`.
    pub fn mid_term(&self, t: usize) -> f64 {
        self.l_mid[t - 2]
    }

    /// Bits per dimension received once `x_t` has been transmitted:
    /// `L_T + sum_{s=t}^{T-1} L_s`.
    pub fn cumulative_rate(&self, t: usize) -> f64 {
        let mut rate = self.l_t;
        for s in (t + 1..=self.steps).rev() {
            rate += self.mid_term(s);
        }
        rate
    }

    /// CSV with columns `term,t,bits_per_dim`. The `t` column of an `L_mid`
    /// row is the step whose KL it holds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("term,t,bits_per_dim\n");
        let _ = writeln!(out, "L_T,{},{}", self.steps, self.l_t);
        for t in (2..=self.steps).rev() {
            let _ = writeln!(out, "L_mid,{t},{}", self.mid_term(t));
        }
        let _ = writeln!(out, "L_0,1,{}", self.l_0);
        let _ = writeln!(out, "total,,{}", self.total);
        out
    }
}

/// Monte-Carlo estimate with its standard error, in bits per dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(CHUNK_ROWS)
        .map(|lo| (lo, (lo + CHUNK_ROWS).min(n)))
        .collect()
}

/// Gathers `x_0` rows (and bytes) for global rows `lo..hi`, cycling through
/// the batch.
fn gather(x0: &DataBatch, lo: usize, hi: usize) -> (Array2<f64>, Option<Array2<u8>>) {
    let idx: Vec<usize> = (lo..hi).map(|r| r % x0.len()).collect();
    let sel = x0.select(&idx);
    let bytes = sel.discrete().map(|d| d.to_owned());
    (sel.values().to_owned(), bytes)
}

fn first_step_nll(
    x0: ArrayView2<f64>,
    bytes: Option<&Array2<u8>>,
    mu1: ArrayView2<f64>,
    var1: f64,
) -> Result<Vec<f64>> {
    match bytes {
        Some(b) => Ok(decoder_log_likelihood(b.view(), mu1, var1.sqrt())?
            .into_iter()
            .map(|ll| -ll)
            .collect()),
        None => Ok(x0
            .rows()
            .into_iter()
            .zip(mu1.rows())
            .map(|(x, m)| -gaussian_log_density(x.iter().copied(), m.iter().copied(), var1))
            .collect()),
    }
}

/// Everything [`vb_terms`] computes, kept per `(row, step)` so the
/// rate-distortion analysis can reuse the same sampled `x_t`.
#[derive(Clone, Debug)]
pub struct VbTrace {
    steps: usize,
    dim: usize,
    /// Per row, nats.
    prior_kl: Vec<f64>,
    /// `rows x (T + 1)`; column `t >= 2` holds the KL at step `t`, column 1
    /// holds `-log p(x_0 | x_1)`, column 0 is unused.
    terms: Array2<f64>,
    /// `rows x (T + 1)`; squared error of the `x_0` estimate from `x_t`.
    sq_err: Array2<f64>,
}

impl VbTrace {
    /// Evaluates every term for `samples_per_point` independent draws of
    /// each datapoint. Row `r` of the trace is datapoint `r % n`; its `x_t`
    /// noise comes from `root.fork(FORWARD).fork(r).fork(t)`.
    ///
    /// `L_0` uses the discrete decoder when `x0` carries bytes, otherwise
    /// the continuous Gaussian density.
    pub fn compute(
        x0: &DataBatch,
        denoiser: &dyn Denoiser,
        sched: &NoiseSchedule,
        sigma: SigmaMode,
        root: &RngStream,
        samples_per_point: usize,
    ) -> Result<Self> {
        if samples_per_point == 0 {
            return Err(DdkError::InvalidArgument("samples_per_point must be positive".into()));
        }
        if denoiser.data_dim() != x0.dim() {
            return Err(DdkError::ShapeMismatch(format!(
                "denoiser dim {} vs data dim {}",
                denoiser.data_dim(),
                x0.dim()
            )));
        }
        let steps = sched.steps();
        let dim = x0.dim();
        let rows = x0.len() * samples_per_point;
        let forward = root.fork(rng::FORWARD);

        let parts: Vec<(Array2<f64>, Array2<f64>)> = chunks(rows)
            .par_iter()
            .map(|&(lo, hi)| -> Result<_> {
                let (x0v, bytes) = gather(x0, lo, hi);
                let m = hi - lo;
                let mut terms = Array2::zeros((m, steps + 1));
                let mut sq = Array2::zeros((m, steps + 1));
                let mut eps = Array2::zeros((m, dim));
                for t in 1..=steps {
                    for (i, mut row) in eps.rows_mut().into_iter().enumerate() {
                        forward
                            .fork2((lo + i) as u64, t as u64)
                            .fill_normal(row.as_slice_mut().expect("standard layout"));
                    }
                    let x_t = super::q_sample(x0v.view(), t, eps.view(), sched)?;
                    let out = denoiser.predict_at(x_t.view(), t)?;
                    let (mu, x0_hat) = reverse_mean(sched, denoiser.param_mode(), x_t.view(), t, out.view(), false)?;
                    let var = sigma.variance(sched, t);
                    if t == 1 {
                        let nll = first_step_nll(x0v.view(), bytes.as_ref(), mu.view(), var)?;
                        terms.column_mut(1).assign(&ndarray::Array1::from(nll));
                    } else {
                        let post = posterior_mean(x0v.view(), x_t.view(), t, sched);
                        let post_var = sched.beta_tilde(t);
                        for i in 0..m {
                            let mut kl = 0.0;
                            for (a, b) in post.row(i).iter().zip(mu.row(i)) {
                                kl += gaussian_kl(*a, post_var, *b, var)?;
                            }
                            terms[[i, t]] = kl;
                        }
                    }
                    for i in 0..m {
                        sq[[i, t]] = x0v
                            .row(i)
                            .iter()
                            .zip(x0_hat.row(i))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                    }
                }
                Ok((terms, sq))
            })
            .collect::<Result<_>>()?;

        let terms = ndarray::concatenate(Axis(0), &parts.iter().map(|p| p.0.view()).collect::<Vec<_>>())
            .expect("uniform columns");
        let sq_err = ndarray::concatenate(Axis(0), &parts.iter().map(|p| p.1.view()).collect::<Vec<_>>())
            .expect("uniform columns");

        let prior_kl = (0..rows)
            .map(|r| {
                let row = x0.values().slice(s![r % x0.len()..r % x0.len() + 1, ..]).to_owned();
                crate::schedule::terminal_kl_bits(sched, row.view()) * std::f64::consts::LN_2 * dim as f64
            })
            .collect();

        Ok(Self {
            steps,
            dim,
            prior_kl,
            terms,
            sq_err,
        })
    }

    pub fn rows(&self) -> usize {
        self.prior_kl.len()
    }

    fn column_mean_bits(&self, t: usize) -> f64 {
        let col = self.terms.column(t);
        nats_to_bits_per_dim(col.iter().sum::<f64>() / col.len() as f64, self.dim)
    }

    pub fn breakdown(&self) -> VbBreakdown {
        let l_t = nats_to_bits_per_dim(
            self.prior_kl.iter().sum::<f64>() / self.rows() as f64,
            self.dim,
        );
        let l_mid: Vec<f64> = (2..=self.steps).map(|t| self.column_mean_bits(t)).collect();
        let l_0 = self.column_mean_bits(1);
        let mut total = l_t;
        for v in l_mid.iter().rev() {
            total += v;
        }
        total += l_0;

        let per_row: Vec<f64> = (0..self.rows())
            .map(|r| {
                let nats = self.prior_kl[r] + self.terms.row(r).slice(s![1..]).sum();
                nats_to_bits_per_dim(nats, self.dim)
            })
            .collect();
        let (_, total_se) = mean_and_se(&per_row);

        VbBreakdown {
            steps: self.steps,
            dim: self.dim,
            l_t,
            l_mid,
            l_0,
            total,
            total_se,
            n_estimates: self.rows(),
            rmse_of_mu1: Some(self.distortion(1)),
        }
    }

    /// Mean per-row RMSE of the `x_0` estimate from `x_t`, on the `[0, 255]`
    /// scale.
    pub fn distortion(&self, t: usize) -> f64 {
        let col = self.sq_err.column(t);
        let sum: f64 = col.iter().map(|sq| (sq / self.dim as f64).sqrt() * 127.5).sum();
        sum / col.len() as f64
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Term-by-term variational bound in bits per dimension.
pub fn vb_terms(
    x0: &DataBatch,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    sigma: SigmaMode,
    root: &RngStream,
    samples_per_point: usize,
) -> Result<VbBreakdown> {
    Ok(VbTrace::compute(x0, denoiser, sched, sigma, root, samples_per_point)?.breakdown())
}

/// Direct Monte-Carlo estimate of the bound from `n_chains` forward
/// trajectories: the average of
/// `-log p(x_T) - sum_{t>1} log p(x_{t-1}|x_t)/q(x_t|x_{t-1}) - log p(x_0|x_1)/q(x_1|x_0)`.
/// Chain `c` starts from datapoint `c % n`.
pub fn vb_naive_mc(
    x0: &DataBatch,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    sigma: SigmaMode,
    root: &RngStream,
    n_chains: usize,
) -> Result<McEstimate> {
    if n_chains == 0 {
        return Err(DdkError::InvalidArgument("n_chains must be positive".into()));
    }
    if denoiser.data_dim() != x0.dim() {
        return Err(DdkError::ShapeMismatch(format!(
            "denoiser dim {} vs data dim {}",
            denoiser.data_dim(),
            x0.dim()
        )));
    }
    let steps = sched.steps();
    let dim = x0.dim();
    let forward = root.fork(rng::FORWARD);

    let parts: Vec<Vec<f64>> = chunks(n_chains)
        .par_iter()
        .map(|&(lo, hi)| -> Result<Vec<f64>> {
            let (x0v, bytes) = gather(x0, lo, hi);
            let m = hi - lo;
            let mut acc = vec![0.0; m];
            let mut x_prev = x0v.clone();
            let mut z = Array2::zeros((m, dim));
            for t in 1..=steps {
                for (i, mut row) in z.rows_mut().into_iter().enumerate() {
                    forward
                        .fork2((lo + i) as u64, t as u64)
                        .fill_normal(row.as_slice_mut().expect("standard layout"));
                }
                let x_t = super::q_sample_step(x_prev.view(), t, z.view(), sched)?;
                let (sa, beta) = (sched.alpha(t).sqrt(), sched.beta(t));
                for i in 0..m {
                    let mean = x_prev.row(i).mapv(|v| sa * v);
                    acc[i] += gaussian_log_density(x_t.row(i).iter().copied(), mean.iter().copied(), beta);
                }
                let out = denoiser.predict_at(x_t.view(), t)?;
                let (mu, _) = reverse_mean(sched, denoiser.param_mode(), x_t.view(), t, out.view(), false)?;
                let var = sigma.variance(sched, t);
                if t == 1 {
                    let nll = first_step_nll(x0v.view(), bytes.as_ref(), mu.view(), var)?;
                    for (a, v) in acc.iter_mut().zip(nll) {
                        *a += v;
                    }
                } else {
                    for i in 0..m {
                        acc[i] -= gaussian_log_density(
                            x_prev.row(i).iter().copied(),
                            mu.row(i).iter().copied(),
                            var,
                        );
                    }
                }
                x_prev = x_t;
            }
            for i in 0..m {
                acc[i] -= gaussian_log_density(
                    x_prev.row(i).iter().copied(),
                    std::iter::repeat(0.0),
                    1.0,
                );
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let per_chain: Vec<f64> = parts
        .into_iter()
        .flatten()
        .map(|nats| nats_to_bits_per_dim(nats, dim))
        .collect();
    let (mean, se) = mean_and_se(&per_chain);
    Ok(McEstimate {
        mean,
        se,
        n: n_chains,
    })
}

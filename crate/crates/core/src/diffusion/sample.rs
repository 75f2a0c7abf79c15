//! Ancestral sampling from the reverse process.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::{reverse_mean, SigmaMode};
use crate::denoiser::Denoiser;
use crate::error::{DdkError, Result};
use crate::rng::{self, RngStream};
use crate::schedule::NoiseSchedule;

/// Rows are processed in fixed-size chunks; results never depend on how
/// chunks are scheduled across threads.
pub(crate) const CHUNK_ROWS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerOptions {
    pub sigma: SigmaMode,
    /// Clamp the `x_0` estimate to `[-1, 1]` before forming the mean.
    pub clamp_x0: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            sigma: SigmaMode::FixedBeta,
            clamp_x0: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    /// `x_{t-1}`.
    pub x_prev: Array2<f64>,
    /// Reverse-process mean `mu_theta(x_t, t)`.
    pub mean: Array2<f64>,
    /// The model's estimate of `x_0` from `x_t`.
    pub x0_hat: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub x0: Array2<f64>,
    /// `(t, x0_hat)` in the order the chain visited them (descending `t`).
    pub snapshots: Vec<(usize, Array2<f64>)>,
}

/// One reverse step `x_t -> x_{t-1}` for a batch sharing step `t`.
///
/// Row `i` draws its noise from `streams[i].fork(t)`; no noise is added at
/// `t = 1`.
pub fn p_sample_step(
    x_t: ArrayView2<f64>,
    t: usize,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    opts: SamplerOptions,
    streams: &[RngStream],
) -> Result<StepOutput> {
    sched.check_step(t)?;
    if streams.len() != x_t.nrows() {
        return Err(DdkError::ShapeMismatch(format!(
            "{} rows but {} random streams",
            x_t.nrows(),
            streams.len()
        )));
    }
    let output = denoiser.predict_at(x_t, t)?;
    let (mean, x0_hat) = reverse_mean(sched, denoiser.param_mode(), x_t, t, output.view(), opts.clamp_x0)?;
    let mut x_prev = mean.clone();
    if t > 1 {
        let sigma = opts.sigma.variance(sched, t).sqrt();
        let mut z = vec![0.0; x_t.ncols()];
        for (mut row, stream) in x_prev.rows_mut().into_iter().zip(streams) {
            stream.fork(t as u64).fill_normal(&mut z);
            for (x, zi) in row.iter_mut().zip(&z) {
                *x += sigma * zi;
            }
        }
    }
    Ok(StepOutput {
        x_prev,
        mean,
        x0_hat,
    })
}

fn chain_serial(
    x_start: Array2<f64>,
    t_start: usize,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    opts: SamplerOptions,
    streams: &[RngStream],
    snapshot_times: &[usize],
) -> Result<SampleOutput> {
    let mut x = x_start;
    let mut snapshots = Vec::new();
    for t in (1..=t_start).rev() {
        let step = p_sample_step(x.view(), t, denoiser, sched, opts, streams)?;
        if snapshot_times.contains(&t) {
            // At t = 1 the estimate and the returned sample coincide; store
            // the sample itself so the last frame matches it exactly.
            let frame = if t == 1 { step.x_prev.clone() } else { step.x0_hat };
            snapshots.push((t, frame));
        }
        x = step.x_prev;
    }
    Ok(SampleOutput { x0: x, snapshots })
}

/// Runs the reverse chain from `x_start` at step `t_start` down to `t = 1`,
/// row `i` using `streams[i]`. Work is split into fixed row chunks that may
/// run in parallel.
pub fn reverse_chain(
    x_start: Array2<f64>,
    t_start: usize,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    opts: SamplerOptions,
    streams: &[RngStream],
    snapshot_times: &[usize],
) -> Result<SampleOutput> {
    sched.check_step(t_start)?;
    if let Some(&bad) = snapshot_times.iter().find(|&&t| t == 0 || t > t_start) {
        return Err(DdkError::StepOutOfRange { t: bad, max: t_start });
    }
    if streams.len() != x_start.nrows() {
        return Err(DdkError::ShapeMismatch(format!(
            "{} rows but {} random streams",
            x_start.nrows(),
            streams.len()
        )));
    }
    let n = x_start.nrows();
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(CHUNK_ROWS)
        .map(|lo| (lo, (lo + CHUNK_ROWS).min(n)))
        .collect();
    let parts: Vec<SampleOutput> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            chain_serial(
                x_start.slice(s![lo..hi, ..]).to_owned(),
                t_start,
                denoiser,
                sched,
                opts,
                &streams[lo..hi],
                snapshot_times,
            )
        })
        .collect::<Result<_>>()?;
    Ok(merge(parts, x_start.ncols()))
}

fn merge(parts: Vec<SampleOutput>, dim: usize) -> SampleOutput {
    if parts.is_empty() {
        return SampleOutput {
            x0: Array2::zeros((0, dim)),
            snapshots: Vec::new(),
        };
    }
    let x0 = concatenate(Axis(0), &parts.iter().map(|p| p.x0.view()).collect::<Vec<_>>())
        .expect("chunks share column count");
    let snapshots = (0..parts[0].snapshots.len())
        .map(|k| {
            let views: Vec<_> = parts.iter().map(|p| p.snapshots[k].1.view()).collect();
            (
                parts[0].snapshots[k].0,
                concatenate(Axis(0), &views).expect("chunks share column count"),
            )
        })
        .collect();
    SampleOutput { x0, snapshots }
}

/// Per-row chain streams for `n` fresh chains under `root`.
pub(crate) fn chain_streams(root: &RngStream, n: usize) -> Vec<RngStream> {
    let base = root.fork(rng::REVERSE);
    (0..n).map(|i| base.fork(i as u64)).collect()
}

/// Full ancestral sampling: `x_T ~ N(0, I)` then `T` reverse steps.
/// Optionally records the `x_0` estimate at each step in `snapshot_times`.
pub fn p_sample_loop(
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    n: usize,
    opts: SamplerOptions,
    root: &RngStream,
    snapshot_times: &[usize],
) -> Result<SampleOutput> {
    let d = denoiser.data_dim();
    let prior = root.fork(rng::PRIOR);
    let mut x_t = Array2::zeros((n, d));
    for (i, mut row) in x_t.rows_mut().into_iter().enumerate() {
        prior
            .fork(i as u64)
            .fill_normal(row.as_slice_mut().expect("standard layout"));
    }
    let streams = chain_streams(root, n);
    reverse_chain(x_t, sched.steps(), denoiser, sched, opts, &streams, snapshot_times)
}

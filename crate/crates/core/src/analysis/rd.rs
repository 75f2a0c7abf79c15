use std::fmt::Write as _;

use crate::data::DataBatch;
use crate::denoiser::Denoiser;
use crate::diffusion::{SigmaMode, VbBreakdown, VbTrace};
use crate::error::{DdkError, Result};
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdRow {
    /// `T - t`: how many reverse steps have been received.
    pub reverse_step: usize,
    pub rate_bits_per_dim: f64,
    /// RMSE of the `x_0` estimate on the `[0, 255]` scale.
    pub distortion: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    pub steps: usize,
    pub rows: Vec<RdRow>,
}

impl RdCurve {
    /// CSV with header `reverse_step,rate_bits_per_dim,distortion_rmse_0_255`.
    /// `reverse_step` is `T - t`, so the row for `t = T` reads 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("reverse_step,rate_bits_per_dim,distortion_rmse_0_255\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.reverse_step, r.rate_bits_per_dim, r.distortion);
        }
        out
    }
}

/// Steps `t` at which to report, in reception order (descending). Every step
/// for `T <= 64`; otherwise every `T / 10` reverse steps plus `t = 1`.
pub fn default_rd_grid(steps: usize) -> Vec<usize> {
    let stride = if steps <= 64 { 1 } else { (steps / 10).max(1) };
    let mut grid: Vec<usize> = (0..steps).step_by(stride).map(|r| steps - r).collect();
    if grid.last() != Some(&1) {
        grid.push(1);
    }
    grid
}

/// Progressive-coding rate and distortion from the per-term bound.
///
/// After receiving `x_t` the rate is `L_T + sum_{s=t}^{T-1} L_s` and the
/// distortion is the RMSE of `x_hat_0(x_t)`, both taken from the same
/// sampled `x_t` that the bound uses. Returns the curve and the breakdown
/// it was built from.
pub fn rate_distortion(
    x0: &DataBatch,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    sigma: SigmaMode,
    root: &RngStream,
    samples_per_point: usize,
    grid: &[usize],
) -> Result<(RdCurve, VbBreakdown)> {
    if x0.discrete().is_none() {
        return Err(DdkError::InvalidArgument(
            "rate-distortion needs data with a discrete origin".into(),
        ));
    }
    for &t in grid {
        sched.check_step(t)?;
    }
    let trace = VbTrace::compute(x0, denoiser, sched, sigma, root, samples_per_point)?;
    let vb = trace.breakdown();
    let mut ts = grid.to_vec();
    ts.sort_unstable_by(|a, b| b.cmp(a));
    ts.dedup();
    let rows = ts
        .into_iter()
        .map(|t| RdRow {
            reverse_step: sched.steps() - t,
            rate_bits_per_dim: vb.cumulative_rate(t),
            distortion: trace.distortion(t),
        })
        .collect();
    Ok((
        RdCurve {
            steps: sched.steps(),
            rows,
        },
        vb,
    ))
}

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::denoiser::Denoiser;
use crate::diffusion::{p_sample_loop, reverse_chain, SamplerOptions};
use crate::diffusion::sample::chain_streams;
use crate::error::{DdkError, Result};
use crate::rng::{self, RngStream};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug)]
pub struct Progressive {
    /// `(t, x_hat_0)` per requested step, in sampling order (descending `t`).
    pub frames: Vec<(usize, Array2<f64>)>,
    /// The samples the chains end at.
    pub sample: Array2<f64>,
}

/// Runs `n` chains from the prior, recording the `x_0` estimate at every step
/// of `grid`. When the grid contains `t = 1` the last frame is the sample.
pub fn progressive_snapshots(
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    opts: SamplerOptions,
    root: &RngStream,
    n: usize,
    grid: &[usize],
) -> Result<Progressive> {
    let out = p_sample_loop(denoiser, sched, n, opts, root, grid)?;
    Ok(Progressive {
        frames: out.snapshots,
        sample: out.x0,
    })
}

/// Per frame, per chain: RMSE on the `[0, 255]` scale between the frame and
/// the chain's final sample.
pub fn frame_distortions(p: &Progressive) -> Vec<Vec<f64>> {
    let d = p.sample.ncols() as f64;
    p.frames
        .iter()
        .map(|(_, f)| {
            f.outer_iter()
                .zip(p.sample.outer_iter())
                .map(|(a, b)| {
                    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    (sq / d).sqrt() * 127.5
                })
                .collect()
        })
        .collect()
}

fn encode(x0: ArrayView1<f64>, t: usize, eps: &[f64], sched: &NoiseSchedule) -> Array1<f64> {
    let (a, b) = (sched.sqrt_alpha_bar(t), sched.sqrt_one_minus_alpha_bar(t));
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

fn check_dim(denoiser: &dyn Denoiser, len: usize) -> Result<()> {
    if denoiser.data_dim() != len {
        return Err(DdkError::ShapeMismatch(format!(
            "denoiser dim {} vs input dim {len}",
            denoiser.data_dim()
        )));
    }
    Ok(())
}

/// Diffuses `x0` to `t_freeze` once, then runs `k` independent reverse
/// chains from that shared `x_t`. The noise comes from `root.fork(FORWARD)`
/// and chain `j` from `root.fork(REVERSE).fork(j)`.
pub fn stochastic_reconstruction(
    x0: ArrayView1<f64>,
    t_freeze: usize,
    k: usize,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    opts: SamplerOptions,
    root: &RngStream,
) -> Result<Array2<f64>> {
    sched.check_step(t_freeze)?;
    check_dim(denoiser, x0.len())?;
    let eps = root.fork(rng::FORWARD).normals(x0.len());
    let x_t = encode(x0, t_freeze, &eps, sched);
    let start = x_t
        .insert_axis(Axis(0))
        .broadcast((k, x0.len()))
        .expect("row broadcast")
        .to_owned();
    let streams = chain_streams(root, k);
    Ok(reverse_chain(start, t_freeze, denoiser, sched, opts, &streams, &[])?.x0)
}

/// `x + lambda (y - x)`, evaluated from the nearer end so that `lambda = 0`
/// and `lambda = 1` reproduce the endpoints exactly.
pub fn lerp(x: f64, y: f64, lambda: f64) -> f64 {
    if lambda <= 0.5 {
        x + lambda * (y - x)
    } else {
        y - (1.0 - lambda) * (y - x)
    }
}

#[derive(Clone, Debug)]
pub struct Interpolation {
    pub lambdas: Vec<f64>,
    /// Interpolated latents, one row per lambda.
    pub latents: Array2<f64>,
    /// Reverse-chain decodings of the latents.
    pub decoded: Array2<f64>,
}

/// The stream every interpolation row decodes with.
fn decode_stream(root: &RngStream) -> RngStream {
    root.fork(rng::REVERSE).fork(0)
}

/// Decodes a single latent `x_t` with the stream [`interpolate`] uses.
pub fn decode_latent(
    x_t: ArrayView1<f64>,
    t: usize,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    opts: SamplerOptions,
    root: &RngStream,
) -> Result<Array1<f64>> {
    check_dim(denoiser, x_t.len())?;
    let start = x_t.to_owned().insert_axis(Axis(0));
    let out = reverse_chain(start, t, denoiser, sched, opts, &[decode_stream(root)], &[])?;
    Ok(out.x0.row(0).to_owned())
}

/// Encodes both endpoints to step `t` with one shared noise draw, linearly
/// interpolates the latents, and decodes each with the same reverse-chain
/// noise. Identical endpoints therefore give identical rows for every
/// lambda.
#[allow(clippy::too_many_arguments)]
pub fn interpolate(
    x0_a: ArrayView1<f64>,
    x0_b: ArrayView1<f64>,
    t: usize,
    lambdas: &[f64],
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    opts: SamplerOptions,
    root: &RngStream,
) -> Result<Interpolation> {
    sched.check_step(t)?;
    check_dim(denoiser, x0_a.len())?;
    check_dim(denoiser, x0_b.len())?;
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(DdkError::InvalidArgument(format!("lambda {l} outside [0, 1]")));
    }
    let eps = root.fork(rng::FORWARD).normals(x0_a.len());
    let za = encode(x0_a, t, &eps, sched);
    let zb = encode(x0_b, t, &eps, sched);
    let mut latents = Array2::zeros((lambdas.len(), x0_a.len()));
    for (mut row, &l) in latents.outer_iter_mut().zip(lambdas) {
        for ((o, &a), &b) in row.iter_mut().zip(&za).zip(&zb) {
            *o = lerp(a, b, l);
        }
    }
    let streams = vec![decode_stream(root); lambdas.len()];
    let decoded = reverse_chain(latents.clone(), t, denoiser, sched, opts, &streams, &[])?.x0;
    Ok(Interpolation {
        lambdas: lambdas.to_vec(),
        latents,
        decoded,
    })
}

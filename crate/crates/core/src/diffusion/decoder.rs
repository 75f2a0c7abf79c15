//! Discretized Gaussian decoder for 8-bit data scaled to `[-1, 1]`.
//!
//! Level `b` owns the interval `[x - 1/255, x + 1/255]` around
//! `x = b / 127.5 - 1`, with the outermost levels extended to `-inf` and
//! `+inf`.

use ndarray::ArrayView2;

use super::nats_to_bits_per_dim;
use crate::data::scale_to_signed;
use crate::error::{DdkError, Result};

/// Bin probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

const HALF_BIN: f64 = 1.0 / 255.0;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// `P(lo < Z < hi)` for standard normal `Z`, evaluated on whichever side
/// avoids cancellation.
fn interval_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        upper_tail(lo) - upper_tail(hi)
    } else if hi <= 0.0 {
        normal_cdf(hi) - normal_cdf(lo)
    } else {
        1.0 - upper_tail(hi) - normal_cdf(lo)
    }
}

/// Probability that `N(mu, sigma^2)` lands in the bin of level `byte`.
pub fn bin_probability(byte: u8, mu: f64, sigma: f64) -> f64 {
    let x = scale_to_signed(byte);
    let lo = if byte == 0 {
        f64::NEG_INFINITY
    } else {
        (x - HALF_BIN - mu) / sigma
    };
    let hi = if byte == 255 {
        f64::INFINITY
    } else {
        (x + HALF_BIN - mu) / sigma
    };
    interval_mass(lo, hi).max(0.0)
}

/// Per-row `log p(x_0 | x_1)` in nats, floored at [`PROB_FLOOR`] per
/// coordinate.
pub fn decoder_log_likelihood(
    discrete: ArrayView2<u8>,
    mu1: ArrayView2<f64>,
    sigma1: f64,
) -> Result<Vec<f64>> {
    if !(sigma1 > 0.0) {
        return Err(DdkError::InvalidVariance(format!(
            "decoder scale must be positive, got {sigma1}"
        )));
    }
    if discrete.dim() != mu1.dim() {
        return Err(DdkError::ShapeMismatch(format!(
            "decoder: data {:?} vs mean {:?}",
            discrete.dim(),
            mu1.dim()
        )));
    }
    Ok(discrete
        .rows()
        .into_iter()
        .zip(mu1.rows())
        .map(|(bytes, mus)| {
            bytes
                .iter()
                .zip(mus)
                .map(|(&b, &m)| bin_probability(b, m, sigma1).max(PROB_FLOOR).ln())
                .sum()
        })
        .collect())
}

/// Mean `-log2 p(x_0 | x_1)` per dimension.
pub fn decoder_nll(discrete: ArrayView2<u8>, mu1: ArrayView2<f64>, sigma1: f64) -> Result<f64> {
    let ll = decoder_log_likelihood(discrete, mu1, sigma1)?;
    let n = ll.len() as f64;
    let mean_nats = -ll.iter().sum::<f64>() / n;
    Ok(nats_to_bits_per_dim(mean_nats, discrete.ncols()))
}

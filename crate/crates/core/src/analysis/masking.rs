//! The masking diffusion on `{0,1}^D`: step `t` of the forward process masks
//! coordinate `t`, so `x_T` is all blank and `p(x_T)` can be a point mass.
//! With the optimal reverse conditionals, the bound equals the negative
//! log-likelihood of an autoregressive model that generates coordinate `D`
//! first and coordinate 1 last.
//!
//! A datapoint is a bit pattern; bit `k - 1` holds coordinate `k`. The
//! state `x_t` is fully described by the unmasked coordinates
//! `t + 1..=D`, i.e. by `x0 >> t`.

use std::collections::BTreeMap;

use crate::error::{DdkError, Result};

pub const MAX_MASKING_DIM: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskingDiffusionInstance {
    dim: usize,
    /// `probs[x]` for every bit pattern `x < 2^D`.
    probs: Vec<f64>,
}

impl MaskingDiffusionInstance {
    pub fn new(dim: usize, probs: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_MASKING_DIM {
            return Err(DdkError::InvalidArgument(format!(
                "masking check supports 1 <= D <= {MAX_MASKING_DIM}, got {dim}"
            )));
        }
        if probs.len() != 1 << dim {
            return Err(DdkError::ShapeMismatch(format!(
                "D = {dim} needs {} probabilities, got {}",
                1 << dim,
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(DdkError::InvalidArgument("probabilities must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DdkError::InvalidArgument(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { dim, probs })
    }

    /// Normalizes nonnegative integer weights.
    pub fn from_weights(dim: usize, weights: &[u64]) -> Result<Self> {
        let total: u64 = weights.iter().sum();
        if total == 0 {
            return Err(DdkError::InvalidArgument("weights are all zero".into()));
        }
        Self::new(dim, weights.iter().map(|&w| w as f64 / total as f64).collect())
    }

    pub fn uniform(dim: usize) -> Result<Self> {
        Self::from_weights(dim, &vec![1; 1 << dim.min(MAX_MASKING_DIM + 1)])
    }

    /// Empirical distribution of a list of points given as bit patterns.
    pub fn from_points(dim: usize, points: &[u32]) -> Result<Self> {
        let mut w = vec![0u64; 1 << dim.min(MAX_MASKING_DIM + 1)];
        for &p in points {
            let slot = w.get_mut(p as usize).ok_or_else(|| {
                DdkError::InvalidArgument(format!("point {p} does not fit in {dim} bits"))
            })?;
            *slot += 1;
        }
        Self::from_weights(dim, &w)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArCheck {
    /// The variational bound under the optimal tabular reverse process, bits.
    pub vb_bits: f64,
    /// Autoregressive negative log-likelihood, bits.
    pub ar_bits: f64,
    pub gap: f64,
    /// `KL(q(x_T) || p(x_T))`, bits.
    pub prior_kl_bits: f64,
}

/// Sums `q` over states sharing a key.
fn marginal(probs: &[f64], key: impl Fn(usize) -> usize) -> BTreeMap<usize, f64> {
    let mut m = BTreeMap::new();
    for (x, &p) in probs.iter().enumerate() {
        *m.entry(key(x)).or_insert(0.0) += p;
    }
    m
}

/// Evaluates the bound exactly under the optimal tabular reverse conditionals
/// and compares it with the autoregressive likelihood, which is computed
/// separately from suffix marginals.
pub fn ar_equivalence_check(inst: &MaskingDiffusionInstance) -> Result<ArCheck> {
    let d = inst.dim;
    let probs = &inst.probs;

    // Prior term: q(x_T) lives on the all-blank state, as does p(x_T).
    let q_t = marginal(probs, |x| x >> d);
    let mut prior_kl_bits = 0.0;
    for (&state, &q) in &q_t {
        let p = if state == 0 { 1.0 } else { 0.0 };
        if q > 0.0 {
            prior_kl_bits += q * (q / p).log2();
        }
    }

    // Reverse step t unmasks coordinate t: p(x_{t-1} | x_t) = q(x_{t-1}, x_t) / q(x_t).
    let mut tables = Vec::with_capacity(d);
    for t in 1..=d {
        let q_t = marginal(probs, |x| x >> t);
        let q_joint = marginal(probs, |x| x >> (t - 1));
        let mut table: BTreeMap<usize, [f64; 2]> = BTreeMap::new();
        for (&state, &mass) in &q_t {
            let mut row = [0.5, 0.5];
            if mass > 0.0 {
                for (bit, slot) in row.iter_mut().enumerate() {
                    let prev = (state << 1) | bit;
                    *slot = q_joint.get(&prev).copied().unwrap_or(0.0) / mass;
                }
            }
            if (row[0] + row[1] - 1.0).abs() > 1e-12 {
                return Err(DdkError::InvalidArgument(format!(
                    "reverse conditional at t = {t} sums to {}",
                    row[0] + row[1]
                )));
            }
            table.insert(state, row);
        }
        tables.push(table);
    }

    // Direct evaluation of E_q[-log p(x_T) - sum_t log p(x_{t-1}|x_t) / q(x_t|x_{t-1})];
    // the forward transitions are deterministic, so q(x_t | x_{t-1}) = 1.
    let mut vb_bits = 0.0;
    for (x, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut nll = -(if x >> d == 0 { 1.0f64 } else { 0.0 }).log2();
        for t in 1..=d {
            let row = tables[t - 1][&(x >> t)];
            let bit = (x >> (t - 1)) & 1;
            nll -= row[bit].log2() - 1.0f64.log2();
        }
        vb_bits += p * nll;
    }

    let ar_bits = autoregressive_nll_bits(d, probs);
    Ok(ArCheck {
        vb_bits,
        ar_bits,
        gap: (vb_bits - ar_bits).abs(),
        prior_kl_bits,
    })
}

/// `E[-log2 prod_{k=D}^{1} P(x^k | x^{k+1..D})]` with each conditional a
/// ratio of brute-force suffix sums.
fn autoregressive_nll_bits(d: usize, probs: &[f64]) -> f64 {
    let suffix_mass = |x: usize, k: usize| -> f64 {
        // Mass of all y that agree with x on coordinates k..=D.
        let shift = k - 1;
        probs
            .iter()
            .enumerate()
            .filter(|(y, _)| y >> shift == x >> shift)
            .map(|(_, p)| p)
            .sum()
    };
    let mut total = 0.0;
    for (x, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut log_lik = 0.0;
        for k in (1..=d).rev() {
            let joint = suffix_mass(x, k);
            let context = if k == d { 1.0 } else { suffix_mass(x, k + 1) };
            log_lik += (joint / context).log2();
        }
        total -= p * log_lik;
    }
    total
}

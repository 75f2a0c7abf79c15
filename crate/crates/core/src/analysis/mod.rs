//! Analyses built on a trained (or oracle) denoiser: progressive coding and
//! generation, reconstructions and interpolations from intermediate latents,
//! plus the masking-diffusion equivalence check.

mod generation;
mod masking;
mod rd;

pub use generation::{
    decode_latent, frame_distortions, interpolate, lerp, progressive_snapshots,
    stochastic_reconstruction, Interpolation, Progressive,
};
pub use masking::{ar_equivalence_check, ArCheck, MaskingDiffusionInstance, MAX_MASKING_DIM};
pub use rd::{default_rd_grid, rate_distortion, RdCurve, RdRow};

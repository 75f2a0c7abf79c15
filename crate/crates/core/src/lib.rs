//! Denoising diffusion probabilistic models at desk scale.
//!
//! The crate covers the forward noising process, reverse-process sampling,
//! the variational bound and its per-term accounting, small MLP denoisers
//! trained with reverse-mode autodiff, and the analyses built on top of a
//! trained model.

pub mod analysis;
pub mod autodiff;
pub mod checks;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod rng;
pub mod schedule;
pub mod trainer;

pub use error::{DdkError, Result};

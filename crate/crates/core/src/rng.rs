//! Deterministic, splittable random streams.
//!
//! Every random draw in the crate comes from an [`RngStream`] addressed by a
//! path of 64-bit tags, e.g. `root.fork(purpose).fork(row).fork(t)`. A stream
//! key is a SplitMix64-style hash of its parent key and the tag, and the
//! numbers themselves come from a ChaCha8 block generator keyed by that hash.
//! Because a draw depends only on its path and never on how many draws were
//! made elsewhere, work can be split across threads in any way and still
//! produce bit-identical results.
//!
//! Tag conventions used by the library (the `purpose` level):
//!
//! | tag            | use                                               |
//! |----------------|---------------------------------------------------|
//! | [`PRIOR`]      | `x_T ~ N(0, I)` at the start of a reverse chain   |
//! | [`REVERSE`]    | per-step noise `z` inside a reverse chain          |
//! | [`FORWARD`]    | forward-process noise (`q_sample`, trajectories)  |
//! | [`TIMESTEP`]   | uniform `t` draws in the training losses          |
//! | [`BATCH`]      | minibatch index selection                         |
//! | [`INIT`]       | parameter initialisation                          |
//! | [`DATA`]       | toy dataset generation                            |
//! | [`EVAL`]       | held-out bound evaluation during training         |
//!
//! Below the purpose level the next tag is the row (datapoint or chain)
//! index, then the diffusion step where one applies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const PRIOR: u64 = 0x7072_696f_72;
pub const REVERSE: u64 = 0x7265_7665_7273_65;
pub const FORWARD: u64 = 0x666f_7277_6172_64;
pub const TIMESTEP: u64 = 0x7469_6d65;
pub const BATCH: u64 = 0x6261_7463_68;
pub const INIT: u64 = 0x696e_6974;
pub const DATA: u64 = 0x6461_7461;
pub const EVAL: u64 = 0x6576_616c;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// An addressable random stream. Cheap to copy; draws happen through
/// [`RngStream::rng`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    key: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed.wrapping_add(GOLDEN_GAMMA)),
        }
    }

    /// Child stream addressed by `tag`.
    #[inline]
    pub fn fork(&self, tag: u64) -> Self {
        let salted = mix64(tag.wrapping_mul(GOLDEN_GAMMA).wrapping_add(0x632B_E59B_D9B4_E019));
        Self {
            key: mix64(self.key ^ salted),
        }
    }

    /// Shorthand for `self.fork(a).fork(b)`.
    #[inline]
    pub fn fork2(&self, a: u64, b: u64) -> Self {
        self.fork(a).fork(b)
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }

    /// Fill `out` with independent standard normal draws from this stream.
    pub fn fill_normal(&self, out: &mut [f64]) {
        let mut rng = self.rng();
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }

    pub fn normals(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.fill_normal(&mut v);
        v
    }
}

//! Function approximators for the reverse process.

mod checkpoint;
mod embedding;
mod mlp;
mod oracle;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use embedding::{time_embedding, TimeEmbeddingSpec};
pub use mlp::{MlpConfig, MlpDenoiser};
pub use oracle::{OracleDenoiser, OracleKind};

use ndarray::{Array2, ArrayView2};

use crate::diffusion::ParamMode;
use crate::error::Result;

/// Anything that maps `(x_t, t)` to a model output of the same shape.
///
/// `t` holds one step per row of `x_t`. Implementations must treat rows
/// independently so that a row's output does not depend on the rest of the
/// batch.
pub trait Denoiser: Sync {
    fn param_mode(&self) -> ParamMode;

    fn data_dim(&self) -> usize;

    fn predict(&self, x_t: ArrayView2<f64>, t: &[usize]) -> Result<Array2<f64>>;

    /// Convenience for a batch sharing one step.
    fn predict_at(&self, x_t: ArrayView2<f64>, t: usize) -> Result<Array2<f64>> {
        self.predict(x_t, &vec![t; x_t.nrows()])
    }
}

//! Data batches with their byte encoding, plus toy datasets and file formats.

mod datasets;
pub mod image;
pub mod rawgrid;

pub use datasets::{generate, DatasetKind, DatasetSpec};

use ndarray::{Array2, ArrayView2};

use crate::error::{DdkError, Result};

/// Spatial layout of an image-like row: `h x w x c`, stored row-major with
/// channels last.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl ImageShape {
    pub fn dim(&self) -> usize {
        self.h * self.w * self.c
    }
}

/// A block of `n` samples of dimension `D`, values in `[-1, 1]` for image
/// data. When `discrete` is present, `values == discrete / 127.5 - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataBatch {
    values: Array2<f64>,
    shape: Option<ImageShape>,
    discrete: Option<Array2<u8>>,
}

impl DataBatch {
    pub fn continuous(values: Array2<f64>) -> Result<Self> {
        Self::check_nonempty(values.dim())?;
        Ok(Self {
            values,
            shape: None,
            discrete: None,
        })
    }

    pub fn from_bytes(bytes: Array2<u8>, shape: Option<ImageShape>) -> Result<Self> {
        Self::check_nonempty(bytes.dim())?;
        if let Some(s) = shape {
            if s.dim() != bytes.ncols() {
                return Err(DdkError::ShapeMismatch(format!(
                    "image shape {}x{}x{} does not match row length {}",
                    s.h,
                    s.w,
                    s.c,
                    bytes.ncols()
                )));
            }
        }
        Ok(Self {
            values: bytes.mapv(scale_to_signed),
            shape,
            discrete: Some(bytes),
        })
    }

    fn check_nonempty((n, d): (usize, usize)) -> Result<()> {
        if n == 0 || d == 0 {
            return Err(DdkError::ShapeMismatch(format!(
                "data batch must be non-empty, got {n}x{d}"
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn discrete(&self) -> Option<ArrayView2<'_, u8>> {
        self.discrete.as_ref().map(|d| d.view())
    }

    pub fn shape(&self) -> Option<ImageShape> {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Rows selected by `idx`, keeping discrete provenance.
    pub fn select(&self, idx: &[usize]) -> DataBatch {
        let pick = |a: &Array2<f64>| a.select(ndarray::Axis(0), idx);
        DataBatch {
            values: pick(&self.values),
            shape: self.shape,
            discrete: self
                .discrete
                .as_ref()
                .map(|d| d.select(ndarray::Axis(0), idx)),
        }
    }
}

/// `byte / 127.5 - 1`.
#[inline]
pub fn scale_to_signed(byte: u8) -> f64 {
    byte as f64 / 127.5 - 1.0
}

/// Inverse of [`scale_to_signed`]: nearest grid level, halves rounded away
/// from zero, clamped to `0..=255`. Non-finite input maps to the nearest end
/// (NaN to 0).
#[inline]
pub fn unscale(value: f64) -> u8 {
    let level = ((value + 1.0) * 127.5).round();
    if level.is_nan() {
        0
    } else {
        level.clamp(0.0, 255.0) as u8
    }
}

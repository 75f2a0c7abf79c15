use std::f64::consts::PI;
use std::path::PathBuf;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{rawgrid, scale_to_signed, unscale, DataBatch, ImageShape};
use crate::error::{DdkError, Result};
use crate::rng::{self, RngStream};

/// Largest sprite side length.
pub const MAX_SPRITE_SIDE: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetKind {
    /// Every row equal to `value` in all `dim` coordinates.
    PointMass { dim: usize, value: f64 },
    StandardNormal { dim: usize },
    /// 2-D ring of `components` isotropic Gaussians.
    GaussianMixture {
        components: usize,
        radius: f64,
        std: f64,
    },
    SwissRoll,
    Checkerboard,
    Sprites { h: usize, w: usize, c: usize },
    RawGrid { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(DdkError::InvalidArgument("dataset size n must be positive".into()));
        }
        match &self.kind {
            DatasetKind::PointMass { dim, value } => {
                if *dim == 0 || !value.is_finite() {
                    return Err(DdkError::InvalidArgument(
                        "point mass needs dim > 0 and a finite value".into(),
                    ));
                }
            }
            DatasetKind::StandardNormal { dim } if *dim == 0 => {
                return Err(DdkError::InvalidArgument("dim must be positive".into()));
            }
            DatasetKind::GaussianMixture {
                components,
                radius,
                std,
            } => {
                if *components == 0 || !radius.is_finite() || !(*std > 0.0) {
                    return Err(DdkError::InvalidArgument(
                        "mixture needs components > 0, finite radius and std > 0".into(),
                    ));
                }
            }
            DatasetKind::Sprites { h, w, c } => {
                if *h == 0 || *w == 0 || *h > MAX_SPRITE_SIDE || *w > MAX_SPRITE_SIDE {
                    return Err(DdkError::InvalidArgument(format!(
                        "sprite sides must be in 1..={MAX_SPRITE_SIDE}, got {h}x{w}"
                    )));
                }
                if *c != 1 && *c != 3 {
                    return Err(DdkError::InvalidArgument(format!(
                        "sprites have 1 or 3 channels, got {c}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Materialise a dataset. Deterministic in `spec.seed`; row `i` depends only
/// on the seed and `i`.
pub fn generate(spec: &DatasetSpec) -> Result<DataBatch> {
    spec.validate()?;
    let root = RngStream::new(spec.seed).fork(rng::DATA);
    let n = spec.n;
    match &spec.kind {
        DatasetKind::PointMass { dim, value } => {
            let level = unscale(*value);
            if scale_to_signed(level) == *value {
                DataBatch::from_bytes(Array2::from_elem((n, *dim), level), None)
            } else {
                DataBatch::continuous(Array2::from_elem((n, *dim), *value))
            }
        }
        DatasetKind::StandardNormal { dim } => {
            let mut out = Array2::zeros((n, *dim));
            for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                root.fork(i as u64)
                    .fill_normal(row.as_slice_mut().expect("standard layout"));
            }
            DataBatch::continuous(out)
        }
        DatasetKind::GaussianMixture {
            components,
            radius,
            std,
        } => rows_2d(n, &root, |r| {
            let k = r.random_range(0..*components);
            let angle = 2.0 * PI * k as f64 / *components as f64;
            let zx: f64 = r.sample(StandardNormal);
            let zy: f64 = r.sample(StandardNormal);
            [radius * angle.cos() + std * zx, radius * angle.sin() + std * zy]
        }),
        DatasetKind::SwissRoll => rows_2d(n, &root, |r| {
            let theta = 1.5 * PI * (1.0 + 2.0 * r.random::<f64>());
            let zx: f64 = r.sample(StandardNormal);
            let zy: f64 = r.sample(StandardNormal);
            // max radius is 4.5 pi ~ 14.14; fit into [-1, 1]^2
            [
                theta * theta.cos() / 15.0 + 0.01 * zx,
                theta * theta.sin() / 15.0 + 0.01 * zy,
            ]
        }),
        DatasetKind::Checkerboard => rows_2d(n, &root, |r| {
            let x1 = r.random::<f64>() * 4.0 - 2.0;
            let shift = if r.random::<bool>() { 2.0 } else { 0.0 };
            let x2 = r.random::<f64>() - shift + (x1.floor().rem_euclid(2.0));
            [x1 / 2.0, x2 / 2.0]
        }),
        DatasetKind::Sprites { h, w, c } => {
            let shape = ImageShape { h: *h, w: *w, c: *c };
            let mut bytes = Array2::<u8>::zeros((n, shape.dim()));
            for (i, mut row) in bytes.rows_mut().into_iter().enumerate() {
                let mut r = root.fork(i as u64).rng();
                draw_sprite(&mut r, shape, row.as_slice_mut().expect("standard layout"));
            }
            DataBatch::from_bytes(bytes, Some(shape))
        }
        DatasetKind::RawGrid { path } => {
            let grid = rawgrid::read(path)?;
            let batch = grid.into_batch()?;
            if batch.len() >= n {
                let idx: Vec<usize> = (0..n).collect();
                Ok(batch.select(&idx))
            } else {
                Ok(batch)
            }
        }
    }
}

fn rows_2d<F>(n: usize, root: &RngStream, mut draw: F) -> Result<DataBatch>
where
    F: FnMut(&mut rand_chacha::ChaCha8Rng) -> [f64; 2],
{
    let mut out = Array2::zeros((n, 2));
    for i in 0..n {
        let mut r = root.fork(i as u64).rng();
        let [x, y] = draw(&mut r);
        out[[i, 0]] = x;
        out[[i, 1]] = y;
    }
    DataBatch::continuous(out)
}

/// A filled rectangle or disc on a flat background.
fn draw_sprite<R: Rng>(r: &mut R, shape: ImageShape, out: &mut [u8]) {
    let ImageShape { h, w, c } = shape;
    let mut color = |lo: u8, hi: u8| -> [u8; 3] {
        [
            r.random_range(lo..=hi),
            r.random_range(lo..=hi),
            r.random_range(lo..=hi),
        ]
    };
    let bg = color(0, 80);
    let fg = color(150, 255);
    let disc = r.random::<bool>();
    let (cy, cx) = (r.random_range(0..h) as f64, r.random_range(0..w) as f64);
    let extent = (h.min(w) as f64 / 4.0).max(1.0);
    let ry = r.random_range(0.5..=1.0) * extent;
    let rx = r.random_range(0.5..=1.0) * extent;
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
            let inside = if disc {
                dy * dy + dx * dx <= 1.0
            } else {
                dy.abs() <= 1.0 && dx.abs() <= 1.0
            };
            let px = if inside { fg } else { bg };
            let base = (y * w + x) * c;
            if c == 1 {
                out[base] = ((px[0] as u16 + px[1] as u16 + px[2] as u16) / 3) as u8;
            } else {
                out[base..base + 3].copy_from_slice(&px);
            }
        }
    }
}

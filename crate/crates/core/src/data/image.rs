//! Binary PGM (P5) / PPM (P6) writers for tiled image grids.

use std::path::Path;

use ndarray::ArrayView2;

use super::{unscale, ImageShape};
use crate::error::{DdkError, Result};
use crate::io::write_atomic;

/// Tiles `rows` (each one image of `shape`, values in `[-1, 1]`) into a grid
/// `cols` images wide and encodes it as P5 (1 channel) or P6 (3 channels).
pub fn encode_grid(rows: ArrayView2<f64>, shape: ImageShape, cols: usize) -> Result<Vec<u8>> {
    let ImageShape { h, w, c } = shape;
    if c != 1 && c != 3 {
        return Err(DdkError::InvalidArgument(format!(
            "only 1- or 3-channel images can be written, got {c}"
        )));
    }
    if rows.ncols() != shape.dim() {
        return Err(DdkError::ShapeMismatch(format!(
            "row length {} does not match image {h}x{w}x{c}",
            rows.ncols()
        )));
    }
    let n = rows.nrows();
    let cols = cols.max(1).min(n.max(1));
    let grid_rows = n.div_ceil(cols).max(1);
    let (width, height) = (cols * w, grid_rows * h);

    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    let header_len = out.len();
    out.resize(header_len + width * height * c, 0);
    let pixels = &mut out[header_len..];
    for (k, img) in rows.rows().into_iter().enumerate() {
        let (gy, gx) = (k / cols, k % cols);
        for y in 0..h {
            for x in 0..w {
                let src = (y * w + x) * c;
                let dst = ((gy * h + y) * width + gx * w + x) * c;
                for ch in 0..c {
                    pixels[dst + ch] = unscale(img[src + ch]);
                }
            }
        }
    }
    Ok(out)
}

/// Square-ish grid: `ceil(sqrt(n))` columns.
pub fn default_cols(n: usize) -> usize {
    (n as f64).sqrt().ceil().max(1.0) as usize
}

pub fn write_grid(path: &Path, rows: ArrayView2<f64>, shape: ImageShape, cols: usize) -> Result<()> {
    write_atomic(path, &encode_grid(rows, shape, cols)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn ppm_grid_dimensions() {
        let shape = ImageShape { h: 3, w: 2, c: 3 };
        let rows = Array2::<f64>::ones((16, shape.dim()));
        let enc = encode_grid(rows.view(), shape, default_cols(16)).unwrap();
        let header = b"P6\n8 12\n255\n";
        assert_eq!(&enc[..header.len()], header);
        assert_eq!(enc.len(), header.len() + 8 * 12 * 3);
        assert!(enc[header.len()..].iter().all(|&b| b == 255));
    }

    #[test]
    fn pgm_places_tiles() {
        let shape = ImageShape { h: 1, w: 1, c: 1 };
        let rows = Array2::from_shape_vec((3, 1), vec![-1.0, 1.0, 0.0]).unwrap();
        let enc = encode_grid(rows.view(), shape, 2).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&enc[..header.len()], header);
        assert_eq!(&enc[header.len()..], &[0, 255, 128, 0]);
    }
}

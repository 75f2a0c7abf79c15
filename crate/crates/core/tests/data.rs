//! Dataset generation and raw grid files.

use ddk_core::data::{generate, rawgrid, scale_to_signed, unscale, DataBatch, DatasetKind, DatasetSpec, ImageShape};
use ndarray::Array2;

fn spec(kind: DatasetKind, n: usize, seed: u64) -> DatasetSpec {
    DatasetSpec { kind, n, seed }
}

#[test]
fn standard_normal_moments() {
    let n = 100_000;
    let b = generate(&spec(DatasetKind::StandardNormal { dim: 2 }, n, 4)).unwrap();
    assert!(b.discrete().is_none());
    for col in b.values().columns() {
        let m = col.mean().unwrap();
        let v = col.var(1.0);
        assert!(m.abs() < 4.0 / (n as f64).sqrt(), "mean {m}");
        assert!((v - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "var {v}");
    }
}

#[test]
fn point_mass_rows_are_identical() {
    let on_grid = scale_to_signed(200);
    let b = generate(&spec(DatasetKind::PointMass { dim: 3, value: on_grid }, 10, 0)).unwrap();
    assert!(b.values().iter().all(|&v| v == on_grid));
    assert!(b.discrete().unwrap().iter().all(|&v| v == 200));
    let off = generate(&spec(DatasetKind::PointMass { dim: 2, value: 0.0 }, 5, 0)).unwrap();
    assert!(off.values().iter().all(|&v| v == 0.0));
    assert!(off.discrete().is_none());
}

#[test]
fn byte_scaling_round_trips() {
    for b in 0..=255u8 {
        let v = scale_to_signed(b);
        assert!((-1.0..=1.0).contains(&v));
        assert_eq!(unscale(v), b);
    }
    // 0.0 sits halfway between levels 127 and 128 and rounds up.
    assert_eq!(unscale(0.0), 128);
    assert_eq!(unscale(-1.0 + 0.51 / 127.5), 1);
    assert_eq!(unscale(-7.0), 0);
    assert_eq!(unscale(7.0), 255);
    assert_eq!(unscale(f64::NAN), 0);
    assert_eq!(unscale(f64::INFINITY), 255);
    assert_eq!(unscale(f64::NEG_INFINITY), 0);
}

#[test]
fn generation_is_deterministic_and_prefix_stable() {
    for kind in [
        DatasetKind::SwissRoll,
        DatasetKind::Checkerboard,
        DatasetKind::GaussianMixture {
            components: 8,
            radius: 0.8,
            std: 0.05,
        },
        DatasetKind::Sprites { h: 6, w: 5, c: 3 },
        DatasetKind::StandardNormal { dim: 4 },
    ] {
        let a = generate(&spec(kind.clone(), 40, 11)).unwrap();
        let b = generate(&spec(kind.clone(), 40, 11)).unwrap();
        assert_eq!(a, b);
        let short = generate(&spec(kind.clone(), 15, 11)).unwrap();
        let idx: Vec<usize> = (0..15).collect();
        assert_eq!(a.select(&idx), short);
        let other = generate(&spec(kind, 40, 12)).unwrap();
        assert_ne!(a.values(), other.values());
    }
}

#[test]
fn sprites_are_discrete_images() {
    let b = generate(&spec(DatasetKind::Sprites { h: 8, w: 8, c: 1 }, 20, 3)).unwrap();
    assert_eq!(b.shape(), Some(ImageShape { h: 8, w: 8, c: 1 }));
    let bytes = b.discrete().unwrap();
    for (v, byte) in b.values().iter().zip(bytes.iter()) {
        assert_eq!(*v, scale_to_signed(*byte));
    }
    assert!(generate(&spec(DatasetKind::Sprites { h: 40, w: 8, c: 1 }, 2, 0)).is_err());
    assert!(generate(&spec(DatasetKind::Sprites { h: 4, w: 4, c: 2 }, 2, 0)).is_err());
    assert!(generate(&spec(DatasetKind::SwissRoll, 0, 0)).is_err());
}

#[test]
fn raw_grid_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.bin");
    let shape = ImageShape { h: 2, w: 3, c: 1 };
    let bytes = Array2::from_shape_fn((4, 6), |(i, j)| (i * 60 + j * 7) as u8);
    let batch = DataBatch::from_bytes(bytes.clone(), Some(shape)).unwrap();
    let grid = rawgrid::RawGrid::from_batch(&batch).unwrap();
    rawgrid::write(&path, &grid).unwrap();
    let raw = std::fs::read(&path).unwrap();
    assert_eq!(&raw[..4], b"DDK1");
    assert_eq!(raw.len(), 20 + 24);
    assert_eq!(u32::from_le_bytes(raw[4..8].try_into().unwrap()), 4);

    let loaded = generate(&spec(DatasetKind::RawGrid { path: path.clone() }, 4, 0)).unwrap();
    assert_eq!(loaded, batch);
    let first = generate(&spec(DatasetKind::RawGrid { path: path.clone() }, 2, 0)).unwrap();
    assert_eq!(first.discrete().unwrap(), bytes.slice(ndarray::s![0..2, ..]));

    std::fs::write(&path, &raw[..raw.len() - 1]).unwrap();
    assert!(rawgrid::read(&path).is_err());
    let mut bad = raw.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(rawgrid::read(&path).is_err());
}

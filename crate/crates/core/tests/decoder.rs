//! Discrete decoder against numerical quadrature.

use ddk_core::data::scale_to_signed;
use ddk_core::diffusion::{bin_probability, decoder_nll, normal_cdf};
use ndarray::arr2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

/// Adaptive Simpson quadrature with Richardson correction.
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, whole: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = simpson(f, a, m);
    let right = simpson(f, m, b);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    adaptive(f, a, m, tol / 2.0, left, depth - 1) + adaptive(f, m, b, tol / 2.0, right, depth - 1)
}

fn integrate(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let f = |x: f64| pdf(x, mu, sigma);
    // Split at the mode so the adaptive scheme never straddles it blindly.
    let mut cuts = vec![a];
    if mu > a && mu < b {
        cuts.push(mu);
    }
    cuts.push(b);
    cuts.windows(2)
        .map(|w| adaptive(&f, w[0], w[1], 1e-14, simpson(&f, w[0], w[1]), 40))
        .sum()
}

/// Bin mass by quadrature; the outermost levels extend 40 sigma past the
/// mean, beyond which the Gaussian tail is below double precision.
fn bin_by_quadrature(byte: u8, mu: f64, sigma: f64) -> f64 {
    let x = scale_to_signed(byte);
    let far = 40.0 * sigma;
    let lo = if byte == 0 { (mu - far).min(x - 1.0 / 255.0) } else { x - 1.0 / 255.0 };
    let hi = if byte == 255 { (mu + far).max(x + 1.0 / 255.0) } else { x + 1.0 / 255.0 };
    integrate(mu, sigma, lo, hi)
}

#[test]
fn cdf_symmetry_and_limits() {
    for z in [0.1, 0.7, 1.9, 4.2, 9.0] {
        assert!((normal_cdf(z) + normal_cdf(-z) - 1.0).abs() < 1e-15);
        let interval = normal_cdf(z) - normal_cdf(-z);
        let quad = integrate(0.0, 1.0, -z, z);
        assert!((interval - quad).abs() < 1e-12);
    }
    assert_eq!(normal_cdf(f64::NEG_INFINITY), 0.0);
    assert_eq!(normal_cdf(f64::INFINITY), 1.0);
}

#[test]
fn bins_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let mu: f64 = rng.random_range(-1.5..1.5);
        let sigma: f64 = 10f64.powf(rng.random_range(-3.0..0.5));
        let total: f64 = (0..=255u8).map(|b| bin_probability(b, mu, sigma)).sum();
        assert!((total - 1.0).abs() <= 1e-9, "mu {mu} sigma {sigma}: {total}");
    }
}

#[test]
fn nll_matches_quadrature_on_random_bins() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let mu: f64 = rng.random_range(-1.0..1.0);
        let sigma: f64 = rng.random_range(0.005..0.5);
        // A level within three standard deviations of the mean, so the bin
        // carries real mass; edge levels are included when nearby.
        let centre = ((mu + 1.0) * 127.5).round();
        let spread = (3.0 * sigma * 127.5).ceil().max(1.0);
        let byte = (centre + rng.random_range(-spread..=spread)).clamp(0.0, 255.0) as u8;
        let got = decoder_nll(arr2(&[[byte]]).view(), arr2(&[[mu]]).view(), sigma).unwrap();
        let want = -bin_by_quadrature(byte, mu, sigma).log2();
        assert!((got - want).abs() <= 1e-8, "byte {byte} mu {mu} sigma {sigma}: {got} vs {want}");
    }
}

#[test]
fn centre_level_case() {
    let (mu, sigma) = (0.01, 0.1);
    let p = bin_probability(128, mu, sigma);
    let q = bin_by_quadrature(128, mu, sigma);
    assert!((p - q).abs() <= 1e-12);
    let nll = decoder_nll(arr2(&[[128u8]]).view(), arr2(&[[mu]]).view(), sigma).unwrap();
    assert!((nll + q.log2()).abs() <= 1e-8);
}

#[test]
fn wide_decoder_tends_to_flat() {
    // Symmetric bins around the mean get equal mass, and with a huge sigma
    // every interior bin gets close to width * density.
    let sigma = 50.0;
    let p = bin_probability(100, 0.0, sigma);
    let width_times_density = (2.0 / 255.0) * pdf(scale_to_signed(100), 0.0, sigma);
    assert!((p / width_times_density - 1.0).abs() < 1e-6);
    let mirror = bin_probability(155, 0.0, sigma);
    assert!((p - mirror).abs() < 1e-15);
}

#[test]
fn nll_is_nonnegative_and_rejects_bad_sigma() {
    let bytes = arr2(&[[0u8, 17, 128, 255]]);
    let mu = arr2(&[[-1.0, 0.3, 0.0, 5.0]]);
    for sigma in [1e-4, 0.02, 1.0, 30.0] {
        assert!(decoder_nll(bytes.view(), mu.view(), sigma).unwrap() >= 0.0);
    }
    assert!(decoder_nll(bytes.view(), mu.view(), 0.0).is_err());
    assert!(decoder_nll(bytes.view(), mu.view(), -1.0).is_err());
}

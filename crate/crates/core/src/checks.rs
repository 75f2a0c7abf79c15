//! Fast invariant suite behind `ddk check`.
//!
//! Each check is small enough that the whole suite runs in well under a
//! minute. A fault can be injected to confirm that a broken component is
//! caught and named.

use std::fmt;
use std::str::FromStr;

use ndarray::{array, Array2};

use crate::analysis::{ar_equivalence_check, interpolate, MaskingDiffusionInstance};
use crate::data::{rawgrid::RawGrid, scale_to_signed, unscale, DataBatch, ImageShape};
use crate::denoiser::{MlpConfig, MlpDenoiser, OracleDenoiser, OracleKind, TimeEmbeddingSpec};
use crate::diffusion::{
    bin_probability, draw_loss_inputs, mu_from_eps, objective_value, objective_value_and_grad, q_posterior,
    q_sample, vb_terms, LossMode, ParamMode, SamplerOptions, SigmaMode,
};
use crate::error::{DdkError, Result};
use crate::rng::RngStream;
use crate::schedule::{terminal_kl_bits, NoiseSchedule, ScheduleSpec};

/// Deliberate corruption for exercising the suite itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs one cumulative product of the schedules under test.
    Schedule,
}

impl FromStr for Fault {
    type Err = DdkError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "schedule" => Ok(Fault::Schedule),
            other => Err(DdkError::InvalidArgument(format!(
                "unknown fault '{other}' (expected: schedule)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {} {}", self.name, self.detail)
    }
}

type CheckFn = fn(&Ctx) -> std::result::Result<String, String>;

struct Ctx {
    fault: Option<Fault>,
}

impl Ctx {
    fn schedule(&self, spec: ScheduleSpec) -> NoiseSchedule {
        let mut s = NoiseSchedule::new(spec).expect("built-in schedule is valid");
        if self.fault == Some(Fault::Schedule) {
            let mid = s.steps().div_ceil(2);
            s.alpha_bar[mid] *= 1.001;
        }
        s
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: DdkError) -> String {
    e.to_string()
}

fn schedule_endpoints(ctx: &Ctx) -> std::result::Result<String, String> {
    let s = ctx.schedule(ScheduleSpec::standard());
    ensure(s.beta(1) == 1e-4 && s.beta(1000) == 0.02, || {
        format!("beta_1 = {}, beta_T = {}", s.beta(1), s.beta(1000))
    })?;
    Ok("beta_1 = 1e-4, beta_T = 0.02".into())
}

fn schedule_cumulative_product(ctx: &Ctx) -> std::result::Result<String, String> {
    for spec in [ScheduleSpec::standard(), ScheduleSpec::scaled_linear(50)] {
        let s = ctx.schedule(spec);
        let mut prod = 1.0;
        for t in 1..=s.steps() {
            prod *= 1.0 - s.beta(t);
            let rel = (s.alpha_bar(t) - prod).abs() / prod;
            ensure(rel <= 1e-12, || format!("T = {}: alpha_bar[{t}] off by {rel:.3e}", s.steps()))?;
            let sq = s.sqrt_alpha_bar(t).powi(2) + s.sqrt_one_minus_alpha_bar(t).powi(2);
            ensure((sq - 1.0).abs() <= 1e-12, || format!("T = {}: t = {t} sqrt terms", s.steps()))?;
        }
    }
    Ok("running product matches to 1e-12".into())
}

fn schedule_terminal_kl(ctx: &Ctx) -> std::result::Result<String, String> {
    let s = ctx.schedule(ScheduleSpec::standard());
    let x = Array2::from_elem((1, 4), 1.0);
    let kl = terminal_kl_bits(&s, x.view());
    ensure(kl <= 1e-4, || format!("{kl:.3e} bits/dim"))?;
    Ok(format!("{kl:.3e} bits/dim"))
}

fn parameterization_identity(ctx: &Ctx) -> std::result::Result<String, String> {
    let s = ctx.schedule(ScheduleSpec::standard());
    let x0 = array![[0.3, -0.9, 0.0], [1.0, 0.25, -0.5]];
    let eps = array![[1.2, -0.4, 0.05], [-2.0, 0.7, 0.3]];
    let mut worst = 0.0f64;
    for t in [2, 10, 500, 1000] {
        let xt = q_sample(x0.view(), t, eps.view(), &s).map_err(err)?;
        let mu = mu_from_eps(xt.view(), t, eps.view(), &s).map_err(err)?;
        let post = q_posterior(x0.view(), xt.view(), t, &s).map_err(err)?;
        worst = worst.max((&mu - &post.mean).mapv(f64::abs).fold(0.0, |a, &b| a.max(b)));
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn decoder_normalization(_: &Ctx) -> std::result::Result<String, String> {
    let mut worst = 0.0f64;
    for (mu, sigma) in [(0.0, 0.01), (0.93, 0.004), (-1.2, 0.3), (0.5, 2.0)] {
        let total: f64 = (0..=255u8).map(|b| bin_probability(b, mu, sigma)).sum();
        worst = worst.max((total - 1.0).abs());
    }
    ensure(worst <= 1e-9, || format!("bins sum off by {worst:.3e}"))?;
    Ok(format!("max error {worst:.1e}"))
}

fn point_mass_middle_terms(ctx: &Ctx) -> std::result::Result<String, String> {
    let s = ctx.schedule(ScheduleSpec::scaled_linear(50));
    let x0 = DataBatch::continuous(Array2::zeros((8, 2))).map_err(err)?;
    let oracle = OracleDenoiser::new(OracleKind::PointMass(0.0), 2, s.clone());
    let vb = vb_terms(&x0, &oracle, &s, SigmaMode::FixedBetaTilde, &RngStream::new(1), 1).map_err(err)?;
    let worst = vb.l_mid.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    ensure(worst <= 1e-12, || format!("largest middle term {worst:.3e} bits/dim"))?;
    Ok(format!("largest middle term {worst:.1e}"))
}

fn gradient_check(ctx: &Ctx) -> std::result::Result<String, String> {
    let s = ctx.schedule(ScheduleSpec::scaled_linear(50));
    let x0 = array![[0.2, -0.6], [0.9, 0.4]];
    let draw = draw_loss_inputs(&s, 2, 2, &RngStream::new(4));
    let mut worst = 0.0f64;
    for mode in ParamMode::ALL {
        let cfg = MlpConfig {
            data_dim: 2,
            hidden: vec![5],
            time: TimeEmbeddingSpec { dim: 4, max_period: 10000.0 },
            param_mode: mode,
        };
        let model = MlpDenoiser::new(cfg.clone(), 9).map_err(err)?;
        for lm in LossMode::ALL {
            let (_, g) =
                objective_value_and_grad(&model, &s, lm, SigmaMode::FixedBeta, x0.view(), &draw).map_err(err)?;
            let flat = model.params_flat();
            for k in 0..flat.len() {
                let h = 1e-5;
                let f = |delta: f64| {
                    let mut p = flat.clone();
                    p[k] += delta;
                    let m = MlpDenoiser::from_flat(cfg.clone(), &p)?;
                    objective_value(&m, &s, lm, SigmaMode::FixedBeta, x0.view(), &draw)
                };
                let fd = (f(h).map_err(err)? - f(-h).map_err(err)?) / (2.0 * h);
                let rel = (fd - g[k]).abs() / (fd.abs().max(g[k].abs()).max(1e-3));
                worst = worst.max(rel);
            }
        }
    }
    ensure(worst <= 1e-5, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("max relative error {worst:.1e}"))
}

fn scale_round_trip(_: &Ctx) -> std::result::Result<String, String> {
    for b in 0..=255u8 {
        ensure(unscale(scale_to_signed(b)) == b, || format!("byte {b}"))?;
    }
    Ok("all 256 levels".into())
}

fn rawgrid_round_trip(_: &Ctx) -> std::result::Result<String, String> {
    let bytes = Array2::from_shape_fn((3, 12), |(i, j)| (i * 31 + j * 7) as u8);
    let shape = ImageShape { h: 2, w: 2, c: 3 };
    let batch = DataBatch::from_bytes(bytes.clone(), Some(shape)).map_err(err)?;
    let enc = RawGrid::from_batch(&batch).map_err(err)?.encode();
    let back = RawGrid::decode(&enc).map_err(err)?.into_batch().map_err(err)?;
    ensure(back.discrete() == Some(bytes.view()), || "payload changed".into())?;
    ensure(RawGrid::decode(&enc[..enc.len() - 1]).is_err(), || "short payload accepted".into())?;
    Ok(format!("{} bytes", enc.len()))
}

fn ar_uniform(_: &Ctx) -> std::result::Result<String, String> {
    let r = ar_equivalence_check(&MaskingDiffusionInstance::uniform(2).map_err(err)?).map_err(err)?;
    ensure(r.vb_bits == 2.0 && r.ar_bits == 2.0, || format!("vb = {}, ar = {}", r.vb_bits, r.ar_bits))?;
    Ok("vb = ar = 2 bits".into())
}

fn interpolation_boundaries(ctx: &Ctx) -> std::result::Result<String, String> {
    let s = ctx.schedule(ScheduleSpec::scaled_linear(50));
    let model = MlpDenoiser::new(
        MlpConfig {
            hidden: vec![8],
            ..MlpConfig::new(3, ParamMode::PredictEps)
        },
        2,
    )
    .map_err(err)?;
    let a = ndarray::arr1(&[0.5, -0.2, 0.9]);
    let b = ndarray::arr1(&[-0.7, 0.1, 0.3]);
    let root = RngStream::new(8);
    let opts = SamplerOptions::default();
    let same = interpolate(a.view(), a.view(), 20, &[0.0, 0.3, 1.0], &model, &s, opts, &root).map_err(err)?;
    ensure(
        same.decoded.outer_iter().all(|r| r == same.decoded.row(0)),
        || "identical endpoints decoded differently".into(),
    )?;
    let ab = interpolate(a.view(), b.view(), 20, &[0.0, 1.0], &model, &s, opts, &root).map_err(err)?;
    let ba = interpolate(b.view(), a.view(), 20, &[1.0, 0.0], &model, &s, opts, &root).map_err(err)?;
    // Swapping the endpoints while flipping lambda must land on the same latents.
    ensure(ab.decoded == ba.decoded, || "endpoints not reproduced".into())?;
    Ok("bit-exact".into())
}

fn stream_determinism(_: &Ctx) -> std::result::Result<String, String> {
    let a = RngStream::new(42).fork(3).fork(9).normals(16);
    let b = RngStream::new(42).fork(3).fork(9).normals(16);
    let c = RngStream::new(42).fork(9).fork(3).normals(16);
    ensure(a == b, || "same path, different draws".into())?;
    ensure(a != c, || "different paths, same draws".into())?;
    Ok("paths are reproducible and distinct".into())
}

const CHECKS: &[(&str, CheckFn)] = &[
    ("schedule.endpoints", schedule_endpoints),
    ("schedule.cumulative_product", schedule_cumulative_product),
    ("schedule.terminal_kl", schedule_terminal_kl),
    ("diffusion.parameterization_identity", parameterization_identity),
    ("diffusion.decoder_normalization", decoder_normalization),
    ("diffusion.point_mass_middle_terms", point_mass_middle_terms),
    ("denoiser.gradient_check", gradient_check),
    ("data.scale_round_trip", scale_round_trip),
    ("data.rawgrid_round_trip", rawgrid_round_trip),
    ("analysis.ar_uniform", ar_uniform),
    ("analysis.interpolation_boundaries", interpolation_boundaries),
    ("rng.stream_determinism", stream_determinism),
];

/// Runs every check and reports each one, optionally with a fault injected.
pub fn run_checks(fault: Option<Fault>) -> Vec<CheckOutcome> {
    let ctx = Ctx { fault };
    CHECKS
        .iter()
        .map(|&(name, f)| match f(&ctx) {
            Ok(detail) => CheckOutcome {
                name,
                passed: true,
                detail,
            },
            Err(detail) => CheckOutcome {
                name,
                passed: false,
                detail,
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        for o in run_checks(None) {
            assert!(o.passed, "{o}");
        }
    }

    #[test]
    fn schedule_fault_is_named() {
        let out = run_checks(Some(Fault::Schedule));
        let failed: Vec<_> = out.iter().filter(|o| !o.passed).map(|o| o.name).collect();
        assert!(failed.contains(&"schedule.cumulative_product"), "{failed:?}");
    }
}

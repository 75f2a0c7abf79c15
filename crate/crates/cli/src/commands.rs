//! Subcommand implementations. Every artifact is written through a
//! temporary file and renamed into place.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{ArrayView2, Axis};

use ddk_core::analysis::{
    ar_equivalence_check, default_rd_grid, frame_distortions, interpolate, progressive_snapshots,
    rate_distortion, MaskingDiffusionInstance,
};
use ddk_core::checks::{run_checks, Fault};
use ddk_core::data::image::{default_cols, write_grid};
use ddk_core::data::rawgrid;
use ddk_core::data::{generate, DataBatch, DatasetKind, ImageShape};
use ddk_core::denoiser::{
    read_checkpoint, write_checkpoint, Checkpoint, Denoiser, MlpDenoiser, OracleDenoiser, OracleKind,
};
use ddk_core::diffusion::{p_sample_loop, vb_naive_mc, vb_terms, SamplerOptions};
use ddk_core::io::write_atomic;
use ddk_core::rng::RngStream;
use ddk_core::schedule::{NoiseSchedule, ScheduleSpec};
use ddk_core::trainer::run_training;

use crate::config::RunConfig;
use crate::{CliError, Command, RunArgs};

type CmdResult = Result<(), CliError>;

/// Held-out rows come from the training description with this seed offset.
const HELD_OUT_SEED_OFFSET: u64 = 1;

pub fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Train(a) => cmd_train(&prepare(&a, true)?),
        Command::Sample(a) => cmd_sample(&prepare(&a, true)?),
        Command::Evaluate { mut run, oracle } => {
            if let Some(o) = oracle {
                run.set.push(format!("analysis.oracle={o}"));
            }
            cmd_evaluate(&prepare(&run, true)?)
        }
        Command::RdCurve(a) => cmd_rd(&prepare(&a, true)?),
        Command::Progressive(a) => cmd_progressive(&prepare(&a, true)?),
        Command::Interpolate(a) => cmd_interpolate(&prepare(&a, true)?),
        Command::ArCheck(a) => cmd_ar_check(&prepare(&a, false)?),
        Command::Check { inject_fault } => cmd_check(inject_fault.as_deref()),
    }
}

/// Resolves the config, creates the output directory, records the resolved
/// config there and announces the seed.
fn prepare(args: &RunArgs, config_required: bool) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None if config_required => {
            return Err(CliError::Usage("missing required --config <FILE>".into()));
        }
        None => RunConfig::default(),
    };
    for pair in &args.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(dir) = &args.out_dir {
        cfg.set("io.out_dir", &dir.to_string_lossy())?;
    }
    if let Some(ckpt) = &args.checkpoint {
        cfg.set("io.checkpoint", &ckpt.to_string_lossy())?;
    }
    let seed = cfg.seed()?;
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    write_atomic(&out.join("resolved_config.txt"), cfg.resolved_text().as_bytes())?;
    println!("seed = {seed}");
    Ok(cfg)
}

fn schedule(cfg: &RunConfig) -> Result<(ScheduleSpec, NoiseSchedule), CliError> {
    let spec = cfg.schedule()?;
    Ok((spec, NoiseSchedule::new(spec)?))
}

fn sampler(cfg: &RunConfig) -> Result<SamplerOptions, CliError> {
    Ok(SamplerOptions {
        sigma: cfg.sigma_mode()?,
        clamp_x0: cfg.bool("analysis.clamp")?,
    })
}

fn training_data(cfg: &RunConfig) -> Result<DataBatch, CliError> {
    Ok(generate(&cfg.dataset(None, 0)?)?)
}

fn held_out(cfg: &RunConfig, n: usize) -> Result<DataBatch, CliError> {
    Ok(generate(&cfg.dataset(Some(n), HELD_OUT_SEED_OFFSET)?)?)
}

fn image_shape(cfg: &RunConfig) -> Result<Option<ImageShape>, CliError> {
    match cfg.dataset(Some(1), 0)?.kind {
        DatasetKind::Sprites { h, w, c } => Ok(Some(ImageShape { h, w, c })),
        DatasetKind::RawGrid { path } => Ok(Some(rawgrid::read(&path)?.shape)),
        _ => Ok(None),
    }
}

fn load_model(cfg: &RunConfig, spec: &ScheduleSpec) -> Result<MlpDenoiser, CliError> {
    let path = cfg.checkpoint_path();
    let ckpt = read_checkpoint(&path)
        .map_err(|e| CliError::Runtime(format!("cannot load checkpoint {}: {e}", path.display())))?;
    if ckpt.schedule != *spec {
        return Err(CliError::Runtime(format!(
            "checkpoint {} was trained with schedule {:?}, config asks for {:?}",
            path.display(),
            ckpt.schedule,
            spec
        )));
    }
    Ok(ckpt.into_model()?)
}

fn denoiser(cfg: &RunConfig, spec: &ScheduleSpec, sched: &NoiseSchedule, dim: usize) -> Result<Box<dyn Denoiser>, CliError> {
    let d: Box<dyn Denoiser> = match cfg.raw("analysis.oracle") {
        "none" => Box::new(load_model(cfg, spec)?),
        "point_mass" => Box::new(OracleDenoiser::new(
            OracleKind::PointMass(cfg.get("data.value")?),
            dim,
            sched.clone(),
        )),
        "standard_normal" => Box::new(OracleDenoiser::new(OracleKind::StandardNormalData, dim, sched.clone())),
        other => {
            return Err(CliError::Usage(format!(
                "unknown analysis.oracle '{other}' (expected none, point_mass, standard_normal)"
            )))
        }
    };
    if d.data_dim() != dim {
        return Err(CliError::Runtime(format!(
            "model expects {} dimensions, data has {dim}",
            d.data_dim()
        )));
    }
    Ok(d)
}

fn rows_csv(header_prefix: &[&str], rows: ArrayView2<f64>, prefix: impl Fn(usize) -> Vec<String>) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = header_prefix.iter().map(|s| s.to_string()).collect();
    header.extend((0..rows.ncols()).map(|j| format!("x{j}")));
    let _ = writeln!(out, "{}", header.join(","));
    for (i, row) in rows.outer_iter().enumerate() {
        let mut fields = prefix(i);
        fields.extend(row.iter().map(|v| v.to_string()));
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    write_atomic(path, text.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn image_ext(shape: ImageShape) -> &'static str {
    if shape.c == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

fn cmd_train(cfg: &RunConfig) -> CmdResult {
    let (spec, sched) = schedule(cfg)?;
    let tc = cfg.train()?;
    let data = training_data(cfg)?;
    let held = held_out(cfg, tc.eval_rows)?;
    let report = run_training(&tc, &sched, &data, Some(&held))?;
    let out = cfg.out_dir();
    write_checkpoint(&out.join("model.ckpt"), &Checkpoint::from_model(&report.model()?, spec))?;
    write_checkpoint(&out.join("model_ema.ckpt"), &Checkpoint::from_model(&report.ema_model()?, spec))?;
    write_text(&out.join("train_history.csv"), &report.history_csv())?;
    if let Some(last) = report.history.last() {
        println!(
            "step {}: train loss {:.6}, held-out bound {:.6} bits/dim ({:.1} s)",
            last.step, last.train_loss, last.vb_total, last.wall_seconds
        );
    }
    Ok(())
}

fn cmd_sample(cfg: &RunConfig) -> CmdResult {
    let (spec, sched) = schedule(cfg)?;
    let model = load_model(cfg, &spec)?;
    let n: usize = cfg.get("analysis.n")?;
    let out = p_sample_loop(&model, &sched, n, sampler(cfg)?, &RngStream::new(cfg.seed()?), &[])?;
    let dir = cfg.out_dir();
    write_text(&dir.join("samples.csv"), &rows_csv(&[], out.x0.view(), |_| Vec::new()))?;
    if let Some(shape) = image_shape(cfg)? {
        let path = dir.join(format!("samples.{}", image_ext(shape)));
        write_grid(&path, out.x0.view(), shape, default_cols(n))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig) -> CmdResult {
    let (spec, sched) = schedule(cfg)?;
    let data = held_out(cfg, cfg.get("analysis.eval_n")?)?;
    let model = denoiser(cfg, &spec, &sched, data.dim())?;
    let sigma = cfg.sigma_mode()?;
    let root = RngStream::new(cfg.seed()?);
    let vb = vb_terms(&data, model.as_ref(), &sched, sigma, &root, cfg.get("analysis.samples_per_point")?)?;
    let dir = cfg.out_dir();
    write_text(&dir.join("vb.csv"), &vb.to_csv())?;
    println!(
        "bound: {:.6} +- {:.6} bits/dim (L_T {:.3e}, L_0 {:.6}, {} estimates)",
        vb.total, vb.total_se, vb.l_t, vb.l_0, vb.n_estimates
    );
    let chains: usize = cfg.get("analysis.mc_chains")?;
    if chains > 0 {
        let mc = vb_naive_mc(&data, model.as_ref(), &sched, sigma, &root, chains)?;
        write_text(
            &dir.join("vb_mc.csv"),
            &format!("estimate_bits_per_dim,standard_error,chains\n{},{},{}\n", mc.mean, mc.se, mc.n),
        )?;
        println!("trajectory estimate: {:.6} +- {:.6} bits/dim", mc.mean, mc.se);
    }
    if !vb.total.is_finite() {
        return Err(CliError::Runtime("bound is not finite".into()));
    }
    // With a discrete decoder every term is a codelength and cannot be
    // negative; continuous data reports a differential quantity instead.
    if data.discrete().is_some() && vb.total < 0.0 {
        return Err(CliError::Runtime(format!("negative codelength {}", vb.total)));
    }
    Ok(())
}

fn cmd_rd(cfg: &RunConfig) -> CmdResult {
    let (spec, sched) = schedule(cfg)?;
    let data = held_out(cfg, cfg.get("analysis.eval_n")?)?;
    let model = denoiser(cfg, &spec, &sched, data.dim())?;
    let grid = match cfg.raw("analysis.grid") {
        "default" => default_rd_grid(sched.steps()),
        _ => cfg.get_list("analysis.grid")?,
    };
    let (curve, vb) = rate_distortion(
        &data,
        model.as_ref(),
        &sched,
        cfg.sigma_mode()?,
        &RngStream::new(cfg.seed()?),
        cfg.get("analysis.samples_per_point")?,
        &grid,
    )?;
    let dir = cfg.out_dir();
    write_text(&dir.join("rd_curve.csv"), &curve.to_csv())?;
    write_text(&dir.join("vb.csv"), &vb.to_csv())?;
    Ok(())
}

fn cmd_progressive(cfg: &RunConfig) -> CmdResult {
    let (spec, sched) = schedule(cfg)?;
    let model = load_model(cfg, &spec)?;
    let n: usize = cfg.get("analysis.n")?;
    let grid = match cfg.raw("analysis.grid") {
        "default" => default_rd_grid(sched.steps()),
        _ => cfg.get_list("analysis.grid")?,
    };
    let p = progressive_snapshots(&model, &sched, sampler(cfg)?, &RngStream::new(cfg.seed()?), n, &grid)?;
    let dir = cfg.out_dir();
    let dist = frame_distortions(&p);
    let mut csv = String::from("t,mean_rmse_to_sample_0_255\n");
    for ((t, _), d) in p.frames.iter().zip(&dist) {
        let _ = writeln!(csv, "{t},{}", d.iter().sum::<f64>() / d.len().max(1) as f64);
    }
    write_text(&dir.join("progressive_distortion.csv"), &csv)?;
    match image_shape(cfg)? {
        Some(shape) => {
            for (t, frame) in &p.frames {
                let path = dir.join(format!("progressive_t{t:04}.{}", image_ext(shape)));
                write_grid(&path, frame.view(), shape, default_cols(n))?;
            }
            println!("wrote {} frames", p.frames.len());
        }
        None => {
            let mut all = String::new();
            for (k, (t, frame)) in p.frames.iter().enumerate() {
                let part = rows_csv(&["t", "chain"], frame.view(), |i| vec![t.to_string(), i.to_string()]);
                let body = if k == 0 { part.as_str() } else { part.split_once('\n').map_or("", |x| x.1) };
                all.push_str(body);
            }
            write_text(&dir.join("progressive.csv"), &all)?;
        }
    }
    Ok(())
}

fn cmd_interpolate(cfg: &RunConfig) -> CmdResult {
    let (spec, sched) = schedule(cfg)?;
    let model = load_model(cfg, &spec)?;
    let data = training_data(cfg)?;
    let (a, b): (usize, usize) = (cfg.get("analysis.index_a")?, cfg.get("analysis.index_b")?);
    if a >= data.len() || b >= data.len() {
        return Err(CliError::Usage(format!(
            "interpolation indices {a}, {b} out of range for {} rows",
            data.len()
        )));
    }
    let t = match cfg.raw("analysis.t") {
        "auto" => (sched.steps() / 2).max(1),
        _ => cfg.get("analysis.t")?,
    };
    let lambdas: Vec<f64> = cfg.get_list("analysis.lambdas")?;
    let x = data.values();
    let res = interpolate(
        x.index_axis(Axis(0), a),
        x.index_axis(Axis(0), b),
        t,
        &lambdas,
        &model,
        &sched,
        sampler(cfg)?,
        &RngStream::new(cfg.seed()?),
    )?;
    let dir = cfg.out_dir();
    let csv = rows_csv(&["lambda"], res.decoded.view(), |i| vec![lambdas[i].to_string()]);
    write_text(&dir.join("interpolation.csv"), &csv)?;
    if let Some(shape) = image_shape(cfg)? {
        let path = dir.join(format!("interpolation.{}", image_ext(shape)));
        write_grid(&path, res.decoded.view(), shape, lambdas.len().max(1))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_ar_check(cfg: &RunConfig) -> CmdResult {
    let dim: usize = cfg.get("analysis.ar_dim")?;
    let inst = match cfg.raw("analysis.ar_weights") {
        "uniform" => MaskingDiffusionInstance::uniform(dim),
        _ => MaskingDiffusionInstance::from_weights(dim, &cfg.get_list::<u64>("analysis.ar_weights")?),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let r = ar_equivalence_check(&inst)?;
    if r.gap <= 1e-9 && r.prior_kl_bits == 0.0 {
        println!("vb={:.6} ar={:.6} gap<=1e-9", r.vb_bits, r.ar_bits);
        Ok(())
    } else {
        println!("vb={:.6} ar={:.6} gap={:.3e}", r.vb_bits, r.ar_bits, r.gap);
        Err(CliError::Runtime(format!(
            "bound and autoregressive likelihood differ by {:.3e} bits (prior KL {:.3e})",
            r.gap, r.prior_kl_bits
        )))
    }
}

fn cmd_check(fault: Option<&str>) -> CmdResult {
    let fault = fault
        .map(|f| f.parse::<Fault>())
        .transpose()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let outcomes = run_checks(fault);
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    for o in &outcomes {
        println!("{o}");
    }
    println!("{}/{} checks passed", outcomes.len() - failed.len(), outcomes.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("failed checks: {}", failed.join(", "))))
    }
}

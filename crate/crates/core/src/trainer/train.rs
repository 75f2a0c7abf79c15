use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::optim::{ema_update, Adam};
use crate::data::DataBatch;
use crate::denoiser::{Denoiser, MlpConfig, MlpDenoiser, TimeEmbeddingSpec};
use crate::diffusion::{
    draw_loss_inputs, objective_value_and_grad, vb_terms, LossMode, ParamMode, SigmaMode,
};
use crate::error::{DdkError, Result};
use crate::rng::{self, RngStream};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub param_mode: ParamMode,
    pub loss_mode: LossMode,
    pub sigma_mode: SigmaMode,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ema_decay: f64,
    pub seed: u64,
    /// Evaluate every this many steps; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Held-out rows used for each evaluation of the bound.
    pub eval_rows: usize,
    pub hidden: Vec<usize>,
    pub time: TimeEmbeddingSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            param_mode: ParamMode::PredictEps,
            loss_mode: LossMode::Simple,
            sigma_mode: SigmaMode::FixedBeta,
            steps: 2000,
            batch_size: 128,
            learning_rate: 1e-3,
            ema_decay: 0.999,
            seed: 0,
            eval_every: 500,
            eval_rows: 512,
            hidden: vec![128, 128],
            time: TimeEmbeddingSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DdkError::InvalidArgument(m));
        if self.steps == 0 {
            return bad("train.steps must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("train.lr must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("train.ema_decay must lie in [0, 1), got {}", self.ema_decay));
        }
        if self.eval_rows == 0 {
            return bad("train.eval_rows must be positive".into());
        }
        Ok(())
    }

    pub fn model_config(&self, data_dim: usize) -> MlpConfig {
        MlpConfig {
            data_dim,
            hidden: self.hidden.clone(),
            time: self.time,
            param_mode: self.param_mode,
        }
    }
}

/// Everything that changes from step to step.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: MlpDenoiser,
    pub ema: Vec<f64>,
    pub optimizer: Adam,
    pub step: usize,
}

impl TrainState {
    pub fn new(model: MlpDenoiser, learning_rate: f64) -> Self {
        let ema = model.params_flat();
        let optimizer = Adam::new(model.num_params(), learning_rate);
        Self {
            model,
            ema,
            optimizer,
            step: 0,
        }
    }

    pub fn ema_model(&self) -> Result<MlpDenoiser> {
        MlpDenoiser::from_flat(self.model.config().clone(), &self.ema)
    }
}

/// One optimizer step on `x0`, with the loss draws taken from `stream`.
/// Returns the minibatch loss before the update.
pub fn train_step(
    state: &mut TrainState,
    x0: ArrayView2<f64>,
    config: &TrainConfig,
    sched: &NoiseSchedule,
    stream: &RngStream,
) -> Result<f64> {
    let draw = draw_loss_inputs(sched, x0.nrows(), x0.ncols(), stream);
    let (loss, grad) = objective_value_and_grad(
        &state.model,
        sched,
        config.loss_mode,
        config.sigma_mode,
        x0,
        &draw,
    )?;
    state.step += 1;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(DdkError::Instability {
            step: state.step,
            loss,
        });
    }
    let mut flat = state.model.params_flat();
    state.optimizer.update(&mut flat, &grad)?;
    if flat.iter().any(|p| !p.is_finite()) {
        return Err(DdkError::Instability {
            step: state.step,
            loss,
        });
    }
    state.model.set_params_flat(&flat)?;
    ema_update(&mut state.ema, &flat, config.ema_decay)?;
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    /// Mean minibatch loss since the previous record.
    pub train_loss: f64,
    /// Bound total on the held-out rows (EMA parameters), bits/dim.
    pub vb_total: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub model_config: MlpConfig,
    pub history: Vec<EvalRecord>,
    /// Minibatch loss at every step.
    pub losses: Vec<f64>,
    pub params: Vec<f64>,
    pub ema_params: Vec<f64>,
}

impl TrainReport {
    pub fn model(&self) -> Result<MlpDenoiser> {
        MlpDenoiser::from_flat(self.model_config.clone(), &self.params)
    }

    pub fn ema_model(&self) -> Result<MlpDenoiser> {
        MlpDenoiser::from_flat(self.model_config.clone(), &self.ema_params)
    }

    /// History as CSV. Wall time is left out so that reruns produce
    /// identical bytes.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("step,train_loss,vb_total_bits_per_dim\n");
        for r in &self.history {
            let _ = writeln!(out, "{},{},{}", r.step, r.train_loss, r.vb_total);
        }
        out
    }
}

fn batch_indices(stream: &RngStream, n_data: usize, batch: usize) -> Vec<usize> {
    let mut r = stream.rng();
    (0..batch).map(|_| r.random_range(0..n_data)).collect()
}

/// Runs `config.steps` optimizer steps on minibatches drawn with replacement
/// from `train`. Step `s` takes its minibatch indices from
/// `root.fork(BATCH).fork(s).fork(BATCH)` and its `(t, eps)` draws from
/// `root.fork(BATCH).fork(s)`. The bound is evaluated on `held_out` (or the
/// first rows of `train`) with the EMA parameters and one fixed stream, so
/// successive records are directly comparable.
pub fn run_training(
    config: &TrainConfig,
    sched: &NoiseSchedule,
    train: &DataBatch,
    held_out: Option<&DataBatch>,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(DdkError::InvalidArgument("training set is empty".into()));
    }
    let root = RngStream::new(config.seed);
    let model_config = config.model_config(train.dim());
    let model = MlpDenoiser::new(model_config.clone(), root.fork(rng::INIT).key())?;
    let mut state = TrainState::new(model, config.learning_rate);

    let eval_set = match held_out {
        Some(h) => {
            let idx: Vec<usize> = (0..h.len().min(config.eval_rows)).collect();
            h.select(&idx)
        }
        None => {
            let idx: Vec<usize> = (0..train.len().min(config.eval_rows)).collect();
            train.select(&idx)
        }
    };
    let eval_stream = root.fork(rng::EVAL);
    let batches = root.fork(rng::BATCH);
    let start = Instant::now();

    let mut history = Vec::new();
    let mut losses = Vec::with_capacity(config.steps);
    let mut window = 0.0;
    let mut window_len = 0usize;
    for s in 0..config.steps {
        let stream = batches.fork(s as u64);
        let idx = batch_indices(&stream.fork(rng::BATCH), train.len(), config.batch_size);
        let x0: Array2<f64> = train.values().select(Axis(0), &idx);
        let loss = train_step(&mut state, x0.view(), config, sched, &stream)?;
        losses.push(loss);
        window += loss;
        window_len += 1;
        let done = s + 1 == config.steps;
        if done || (config.eval_every > 0 && (s + 1) % config.eval_every == 0) {
            let ema = state.ema_model()?;
            let vb = vb_terms(&eval_set, &ema, sched, config.sigma_mode, &eval_stream, 1)?;
            history.push(EvalRecord {
                step: s + 1,
                train_loss: window / window_len as f64,
                vb_total: vb.total,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
            window = 0.0;
            window_len = 0;
        }
    }

    Ok(TrainReport {
        config: config.clone(),
        model_config,
        history,
        losses,
        params: state.model.params_flat(),
        ema_params: state.ema,
    })
}

/// Mean squared difference between two noise predictors on `x_t ~ q(x_t | x_0)`,
/// averaged over every entry and every step `1..=T` with equal weight.
/// Row `r` at step `t` uses noise from `root.fork(FORWARD).fork(r).fork(t)`.
pub fn epsilon_mse(
    model: &dyn Denoiser,
    reference: &dyn Denoiser,
    sched: &NoiseSchedule,
    x0: ArrayView2<f64>,
    root: &RngStream,
) -> Result<f64> {
    if model.param_mode() != ParamMode::PredictEps || reference.param_mode() != ParamMode::PredictEps {
        return Err(DdkError::InvalidArgument(
            "epsilon_mse compares two noise predictors".into(),
        ));
    }
    let (n, d) = x0.dim();
    let fwd = root.fork(rng::FORWARD);
    let mut total = 0.0;
    for t in 1..=sched.steps() {
        let mut eps = Array2::zeros((n, d));
        for (r, mut row) in eps.rows_mut().into_iter().enumerate() {
            fwd.fork2(r as u64, t as u64)
                .fill_normal(row.as_slice_mut().expect("standard layout"));
        }
        let x_t = crate::diffusion::q_sample(x0, t, eps.view(), sched)?;
        let a = model.predict_at(x_t.view(), t)?;
        let b = reference.predict_at(x_t.view(), t)?;
        total += (&a - &b).mapv(|v| v * v).mean().unwrap_or(0.0);
    }
    Ok(total / sched.steps() as f64)
}

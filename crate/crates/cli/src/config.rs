//! Flat `key = value` run configuration.
//!
//! Precedence, lowest to highest: built-in defaults, the config file,
//! `--set key=value` overrides, then dedicated flags such as `--seed`.
//! Unknown keys are rejected at every level.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ddk_core::data::{DatasetKind, DatasetSpec};
use ddk_core::denoiser::TimeEmbeddingSpec;
use ddk_core::diffusion::{LossMode, ParamMode, SigmaMode};
use ddk_core::schedule::{ScheduleKind, ScheduleSpec};
use ddk_core::trainer::TrainConfig;

use crate::CliError;

/// Every accepted key with its default.
const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("schedule.kind", "linear"),
    ("schedule.T", "50"),
    // `auto` scales the standard 1e-4 .. 0.02 range by 1000 / T.
    ("schedule.beta_start", "auto"),
    ("schedule.beta_end", "auto"),
    ("model.param_mode", "predict_eps"),
    ("model.sigma_mode", "fixed_beta"),
    ("model.hidden", "128,128"),
    ("model.time_dim", "32"),
    ("model.max_period", "10000"),
    ("train.loss_mode", "simple"),
    ("train.steps", "2000"),
    ("train.batch_size", "128"),
    ("train.lr", "0.001"),
    ("train.ema_decay", "0.999"),
    ("train.eval_every", "500"),
    ("train.eval_rows", "512"),
    ("data.kind", "swiss_roll"),
    ("data.n", "4096"),
    ("data.seed", "1"),
    ("data.dim", "2"),
    ("data.value", "0"),
    ("data.components", "8"),
    ("data.radius", "0.7"),
    ("data.std", "0.05"),
    ("data.h", "8"),
    ("data.w", "8"),
    ("data.c", "3"),
    ("data.path", ""),
    ("analysis.n", "16"),
    ("analysis.clamp", "true"),
    ("analysis.eval_n", "256"),
    ("analysis.samples_per_point", "1"),
    ("analysis.mc_chains", "0"),
    ("analysis.oracle", "none"),
    ("analysis.grid", "default"),
    ("analysis.t", "auto"),
    ("analysis.lambdas", "0,0.25,0.5,0.75,1"),
    ("analysis.index_a", "0"),
    ("analysis.index_b", "1"),
    ("analysis.ar_dim", "2"),
    ("analysis.ar_weights", "uniform"),
    ("io.out_dir", "ddk_out"),
    ("io.checkpoint", "auto"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _)| *k)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key '{key}'"))),
        }
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got '{pair}'")))?;
        self.set(k.trim(), v)
    }

    /// Applies every `key = value` line of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.set_pair(line)
                .map_err(|e| CliError::Usage(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// All keys with their effective values, one `key = value` per line.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in KEYS {
            let _ = writeln!(out, "{k} = {}", self.values[*k]);
        }
        out
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("config key '{key}' is not declared"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse::<T>()
            .map_err(|e| CliError::Usage(format!("{key} = '{raw}': {e}")))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<T>()
                    .map_err(|e| CliError::Usage(format!("{key} = '{raw}': {e}")))
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("io.out_dir"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        match self.raw("io.checkpoint") {
            "auto" => self.out_dir().join("model.ckpt"),
            p => PathBuf::from(p),
        }
    }

    pub fn schedule(&self) -> Result<ScheduleSpec, CliError> {
        let steps: usize = self.get("schedule.T")?;
        let kind: ScheduleKind = self.get("schedule.kind")?;
        let scale = 1000.0 / steps.max(1) as f64;
        let beta = |key: &str, standard: f64| -> Result<f64, CliError> {
            match self.raw(key) {
                "auto" => Ok(standard * scale),
                _ => self.get(key),
            }
        };
        let spec = ScheduleSpec {
            kind,
            steps,
            beta_start: beta("schedule.beta_start", 1e-4)?,
            beta_end: beta("schedule.beta_end", 0.02)?,
        };
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }

    pub fn sigma_mode(&self) -> Result<SigmaMode, CliError> {
        self.get("model.sigma_mode")
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            param_mode: self.get::<ParamMode>("model.param_mode")?,
            loss_mode: self.get::<LossMode>("train.loss_mode")?,
            sigma_mode: self.sigma_mode()?,
            steps: self.get("train.steps")?,
            batch_size: self.get("train.batch_size")?,
            learning_rate: self.get("train.lr")?,
            ema_decay: self.get("train.ema_decay")?,
            seed: self.seed()?,
            eval_every: self.get("train.eval_every")?,
            eval_rows: self.get("train.eval_rows")?,
            hidden: self.get_list("model.hidden")?,
            time: TimeEmbeddingSpec {
                dim: self.get("model.time_dim")?,
                max_period: self.get("model.max_period")?,
            },
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// The training dataset; `n_override` and `seed_offset` derive the
    /// held-out set from the same description.
    pub fn dataset(&self, n_override: Option<usize>, seed_offset: u64) -> Result<DatasetSpec, CliError> {
        let kind = match self.raw("data.kind") {
            "point_mass" => DatasetKind::PointMass {
                dim: self.get("data.dim")?,
                value: self.get("data.value")?,
            },
            "standard_normal" => DatasetKind::StandardNormal {
                dim: self.get("data.dim")?,
            },
            "gaussian_mixture" => DatasetKind::GaussianMixture {
                components: self.get("data.components")?,
                radius: self.get("data.radius")?,
                std: self.get("data.std")?,
            },
            "swiss_roll" => DatasetKind::SwissRoll,
            "checkerboard" => DatasetKind::Checkerboard,
            "sprites" => DatasetKind::Sprites {
                h: self.get("data.h")?,
                w: self.get("data.w")?,
                c: self.get("data.c")?,
            },
            "raw_grid" => DatasetKind::RawGrid {
                path: PathBuf::from(self.raw("data.path")),
            },
            other => {
                return Err(CliError::Usage(format!(
                    "unknown data.kind '{other}' (expected one of: point_mass, standard_normal, \
                     gaussian_mixture, swiss_roll, checkerboard, sprites, raw_grid)"
                )))
            }
        };
        let seed: u64 = self.get("data.seed")?;
        let spec = DatasetSpec {
            kind,
            n: match n_override {
                Some(n) => n,
                None => self.get("data.n")?,
            },
            seed: seed.wrapping_add(seed_offset),
        };
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::Usage(format!("{key} = '{other}': expected true or false"))),
        }
    }
}

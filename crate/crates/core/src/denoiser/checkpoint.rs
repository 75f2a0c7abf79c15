//! Parameter checkpoint files.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! magic      4 bytes   b"DDKW"
//! version    u32       1
//! data_dim   u32
//! time_dim   u32
//! max_period f64
//! param_mode u32       0 = predict_eps, 1 = predict_mu, 2 = predict_x0
//! n_hidden   u32
//! widths     u32 x n_hidden
//! sched_kind u32       0 = linear, 1 = constant, 2 = quadratic
//! sched_T    u32
//! beta_start f64
//! beta_end   f64
//! n_params   u64
//! params     f64 x n_params, in declared parameter order
//! ```
//!
//! A plain-text manifest listing each tensor's shape is written next to the
//! binary as `<file>.manifest.txt`.

use std::path::{Path, PathBuf};

use super::embedding::TimeEmbeddingSpec;
use super::mlp::{MlpConfig, MlpDenoiser};
use crate::diffusion::ParamMode;
use crate::error::{format_err, Result};
use crate::io::write_atomic;
use crate::schedule::{ScheduleKind, ScheduleSpec};

pub const MAGIC: &[u8; 4] = b"DDKW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: MlpConfig,
    pub schedule: ScheduleSpec,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &MlpDenoiser, schedule: ScheduleSpec) -> Self {
        Self {
            config: model.config().clone(),
            schedule,
            params: model.params_flat(),
        }
    }

    pub fn into_model(self) -> Result<MlpDenoiser> {
        MlpDenoiser::from_flat(self.config, &self.params)
    }

    pub fn encode(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        let u32s = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        u32s(&mut out, VERSION as usize);
        u32s(&mut out, c.data_dim);
        u32s(&mut out, c.time.dim);
        out.extend_from_slice(&c.time.max_period.to_le_bytes());
        u32s(&mut out, mode_code(c.param_mode) as usize);
        u32s(&mut out, c.hidden.len());
        for &w in &c.hidden {
            u32s(&mut out, w);
        }
        u32s(&mut out, self.schedule.kind.code() as usize);
        u32s(&mut out, self.schedule.steps);
        out.extend_from_slice(&self.schedule.beta_start.to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_end.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(format_err("checkpoint", "bad magic (expected DDKW)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format_err("checkpoint", format!("unsupported version {version}")));
        }
        let data_dim = r.u32()? as usize;
        let time_dim = r.u32()? as usize;
        let max_period = r.f64()?;
        let param_mode = mode_from_code(r.u32()?)?;
        let n_hidden = r.u32()? as usize;
        if n_hidden > 64 {
            return Err(format_err("checkpoint", format!("implausible layer count {n_hidden}")));
        }
        let hidden = (0..n_hidden)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let kind_code = r.u32()?;
        let kind = ScheduleKind::from_code(kind_code)
            .ok_or_else(|| format_err("checkpoint", format!("unknown schedule kind {kind_code}")))?;
        let steps = r.u32()? as usize;
        let beta_start = r.f64()?;
        let beta_end = r.f64()?;
        let n_params = r.u64()? as usize;

        let config = MlpConfig {
            data_dim,
            hidden,
            time: TimeEmbeddingSpec {
                dim: time_dim,
                max_period,
            },
            param_mode,
        };
        config
            .validate()
            .map_err(|e| format_err("checkpoint", e.to_string()))?;
        if n_params != config.num_params() {
            return Err(format_err(
                "checkpoint",
                format!(
                    "header declares {n_params} parameters but the architecture has {}",
                    config.num_params()
                ),
            ));
        }
        let remaining = bytes.len() - r.pos;
        if remaining != 8 * n_params {
            return Err(format_err(
                "checkpoint",
                format!("payload has {remaining} bytes, expected {}", 8 * n_params),
            ));
        }
        let params = (0..n_params).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            schedule: ScheduleSpec {
                kind,
                steps,
                beta_start,
                beta_end,
            },
            params,
        })
    }

    pub fn manifest(&self) -> String {
        let c = &self.config;
        let mut s = format!(
            "format DDKW v{VERSION}\nparam_mode {}\ndata_dim {}\ntime_dim {}\nmax_period {}\nschedule {} T={} beta_start={} beta_end={}\nn_params {}\n",
            c.param_mode,
            c.data_dim,
            c.time.dim,
            c.time.max_period,
            self.schedule.kind,
            self.schedule.steps,
            self.schedule.beta_start,
            self.schedule.beta_end,
            self.params.len()
        );
        for (i, (r, k)) in c.param_shapes().into_iter().enumerate() {
            let name = if i % 2 == 0 { "weight" } else { "bias" };
            s.push_str(&format!("layer{}.{name} {r}x{k}\n", i / 2));
        }
        s
    }
}

fn mode_code(m: ParamMode) -> u32 {
    match m {
        ParamMode::PredictEps => 0,
        ParamMode::PredictMu => 1,
        ParamMode::PredictX0 => 2,
    }
}

fn mode_from_code(c: u32) -> Result<ParamMode> {
    match c {
        0 => Ok(ParamMode::PredictEps),
        1 => Ok(ParamMode::PredictMu),
        2 => Ok(ParamMode::PredictX0),
        other => Err(format_err("checkpoint", format!("unknown param mode {other}"))),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err("checkpoint", format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.txt");
    PathBuf::from(name)
}

/// Writes the binary checkpoint and its manifest.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &ckpt.encode())?;
    write_atomic(&manifest_path(path), ckpt.manifest().as_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&std::fs::read(path)?)
}

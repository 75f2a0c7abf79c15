use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::embedding::{write_time_embedding, TimeEmbeddingSpec};
use super::Denoiser;
use crate::autodiff::{self, matmul, silu, Tape, Var};
use crate::diffusion::ParamMode;
use crate::error::{DdkError, Result};
use crate::rng::{self, RngStream};

/// Architecture of an [`MlpDenoiser`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    pub data_dim: usize,
    /// Hidden layer widths; empty means a single affine map.
    pub hidden: Vec<usize>,
    pub time: TimeEmbeddingSpec,
    pub param_mode: ParamMode,
}

impl MlpConfig {
    pub fn new(data_dim: usize, param_mode: ParamMode) -> Self {
        Self {
            data_dim,
            hidden: vec![128, 128],
            time: TimeEmbeddingSpec::default(),
            param_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(DdkError::InvalidArgument("data_dim must be positive".into()));
        }
        if self.time.dim == 0 || self.time.dim % 2 != 0 {
            return Err(DdkError::InvalidArgument(format!(
                "time embedding dim must be even and positive, got {}",
                self.time.dim
            )));
        }
        if !(self.time.max_period > 0.0) {
            return Err(DdkError::InvalidArgument("max_period must be positive".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(DdkError::InvalidArgument("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim + self.time.dim
    }

    /// `(fan_in, fan_out)` of each affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim()];
        widths.extend(&self.hidden);
        widths.push(self.data_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Shapes of the parameter tensors in their declared order:
    /// `W0, b0, W1, b1, ...` with `W` stored `fan_in x fan_out` and `b` as
    /// a `1 x fan_out` row.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_dims()
            .into_iter()
            .flat_map(|(i, o)| [(i, o), (1, o)])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes().iter().map(|(r, c)| r * c).sum()
    }
}

/// Fully connected network on `[x_t, emb(t)]` with SiLU hidden activations.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDenoiser {
    config: MlpConfig,
    params: Vec<Array2<f64>>,
}

impl MlpDenoiser {
    /// Uniform `+-1/sqrt(fan_in)` weights (output layer scaled by 0.1), zero
    /// biases.
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let root = RngStream::new(seed).fork(rng::INIT);
        let dims = config.layer_dims();
        let last = dims.len() - 1;
        let mut params = Vec::with_capacity(2 * dims.len());
        for (layer, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let mut r = root.fork(layer as u64).rng();
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if layer == last {
                bound *= 0.1;
            }
            params.push(Array2::from_shape_simple_fn((fan_in, fan_out), || {
                r.random_range(-bound..bound)
            }));
            params.push(Array2::zeros((1, fan_out)));
        }
        Ok(Self { config, params })
    }

    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let params = config
            .param_shapes()
            .into_iter()
            .map(Array2::zeros)
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_flat(config: MlpConfig, flat: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        m.set_params_flat(flat)?;
        Ok(m)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in &self.params {
            out.extend(p.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(DdkError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.len();
            p.as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn input(&self, x_t: ArrayView2<f64>, t: &[usize]) -> Result<Array2<f64>> {
        let (n, d) = x_t.dim();
        if d != self.config.data_dim || t.len() != n {
            return Err(DdkError::ShapeMismatch(format!(
                "MLP expects {} columns and one step per row; got {n}x{d} with {} steps",
                self.config.data_dim,
                t.len()
            )));
        }
        let e = self.config.time.dim;
        let mut input = Array2::zeros((n, d + e));
        for (i, mut row) in input.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            for (dst, src) in row[..d].iter_mut().zip(x_t.row(i)) {
                *dst = *src;
            }
            write_time_embedding(t[i], &self.config.time, &mut row[d..]);
        }
        Ok(input)
    }

    /// Plain forward pass.
    pub fn forward(&self, x_t: ArrayView2<f64>, t: &[usize]) -> Result<Array2<f64>> {
        let mut h = self.input(x_t, t)?;
        let layers = self.params.len() / 2;
        for layer in 0..layers {
            let mut z = matmul(h.view(), self.params[2 * layer].view());
            z += &self.params[2 * layer + 1];
            if layer + 1 < layers {
                z.mapv_inplace(silu);
            }
            h = z;
        }
        Ok(h)
    }

    fn forward_graph(&self, tape: &mut Tape, leaves: &[Var], input: Var) -> Var {
        let layers = leaves.len() / 2;
        let mut h = input;
        for layer in 0..layers {
            let z = tape.matmul(h, leaves[2 * layer]);
            let z = tape.add_row(z, leaves[2 * layer + 1]);
            h = if layer + 1 < layers { tape.silu(z) } else { z };
        }
        h
    }

    /// Evaluates `loss(output)` and its gradient with respect to every
    /// parameter, flattened in declared order. `loss` receives the tape and
    /// the network output node and must return a scalar node.
    pub fn value_and_grad<F>(&self, x_t: ArrayView2<f64>, t: &[usize], loss: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(&mut Tape, Var) -> Var,
    {
        let input = self.input(x_t, t)?;
        let (value, grads) = autodiff::value_and_grad(&self.params, |tape, leaves| {
            let x = tape.leaf(input);
            let out = self.forward_graph(tape, leaves, x);
            loss(tape, out)
        });
        let mut flat = Vec::with_capacity(self.num_params());
        for g in &grads {
            flat.extend(g.iter());
        }
        Ok((value, flat))
    }
}

impl Denoiser for MlpDenoiser {
    fn param_mode(&self) -> ParamMode {
        self.config.param_mode
    }

    fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    fn predict(&self, x_t: ArrayView2<f64>, t: &[usize]) -> Result<Array2<f64>> {
        self.forward(x_t, t)
    }
}

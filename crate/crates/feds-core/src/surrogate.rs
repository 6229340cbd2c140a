//! Learned edit-distance surrogate.
//!
//! A Char-CNN `h` embeds a character grid; the surrogate distance between a
//! predicted grid `z` and a one-hot target `y` is `||h(z) - h(y)||_2`. The
//! network is five same-padded 1-D convolutions over the position axis
//! (LeakyReLU after each), a mean over positions, and two fully connected
//! layers with a LeakyReLU between them.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var, NORM_EPS};
use crate::params::{uniform_init, ParamStore};
use crate::rng::{self, purpose};
use crate::tensor::Tensor;
use crate::text::CharGrid;

pub const CONV_LAYERS: usize = 5;

/// Embedding width used at full scale.
pub const FULL_EMBEDDING_DIM: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig {
    pub alphabet_size: usize,
    /// Length capacity `L` of the grids.
    pub length: usize,
    pub channels: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub embedding_dim: usize,
    pub slope: f64,
}

impl SurrogateConfig {
    /// Desk-scale defaults: 64 channels, kernel 3, 128 hidden, 128-d output.
    pub fn desk(alphabet_size: usize, length: usize) -> Self {
        Self {
            alphabet_size,
            length,
            channels: 64,
            kernel: 3,
            hidden: 128,
            embedding_dim: 128,
            slope: 0.01,
        }
    }

    /// Desk defaults with the full-scale embedding width.
    pub fn full(alphabet_size: usize, length: usize) -> Self {
        Self {
            embedding_dim: FULL_EMBEDDING_DIM,
            ..Self::desk(alphabet_size, length)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size < 2
            || self.length == 0
            || self.channels == 0
            || self.hidden == 0
            || self.embedding_dim == 0
        {
            return Err(Error::config("surrogate dimensions must be positive"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("surrogate kernel must be odd for same padding"));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> Vec<(&'static str, usize, usize)> {
        const CONV_W: [&str; CONV_LAYERS] =
            ["conv0.weight", "conv1.weight", "conv2.weight", "conv3.weight", "conv4.weight"];
        const CONV_B: [&str; CONV_LAYERS] =
            ["conv0.bias", "conv1.bias", "conv2.bias", "conv3.bias", "conv4.bias"];
        let mut shapes = Vec::new();
        let mut c_in = self.alphabet_size;
        for l in 0..CONV_LAYERS {
            shapes.push((CONV_W[l], self.kernel * c_in, self.channels));
            shapes.push((CONV_B[l], 1, self.channels));
            c_in = self.channels;
        }
        shapes.push(("fc1.weight", self.channels, self.hidden));
        shapes.push(("fc1.bias", 1, self.hidden));
        shapes.push(("fc2.weight", self.hidden, self.embedding_dim));
        shapes.push(("fc2.bias", 1, self.embedding_dim));
        shapes
    }
}

/// Weights and biases of the weighted surrogate loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateLossWeights {
    /// Weight of the squared approximation error.
    pub w1: f64,
    /// Weight of the unit-gradient-norm penalty.
    pub w2: f64,
}

impl Default for SurrogateLossWeights {
    fn default() -> Self {
        Self { w1: 1.0, w2: 0.1 }
    }
}

impl SurrogateLossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w1 > 0.0 && self.w2 >= 0.0) {
            return Err(Error::config(format!(
                "loss weights need w1 > 0 and w2 >= 0, got {} and {}",
                self.w1, self.w2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateNet {
    config: SurrogateConfig,
    params: ParamStore,
}

impl SurrogateNet {
    /// Randomly initialised network (uniform in `±sqrt(1/fan_in)`).
    pub fn new(config: SurrogateConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, purpose::SURROGATE_INIT, 0);
        let mut params = ParamStore::new();
        for (name, rows, cols) in config.layer_shapes() {
            // biases share the fan-in of their weight
            let fan_in = if rows == 1 {
                params.tensors().last().map_or(1, Tensor::rows)
            } else {
                rows
            };
            params.insert(name, uniform_init(&mut rng, rows, cols, fan_in))?;
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: SurrogateConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        check_params(&params, &config.layer_shapes())?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Inserts the parameters into `graph`.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Result<BoundSurrogate> {
        Ok(BoundSurrogate {
            config: self.config,
            params: self.params.bind(graph, trainable)?,
        })
    }

    /// Embedding of a single grid.
    pub fn embed(&self, grid: &CharGrid) -> Result<Tensor> {
        let mut g = Graph::new();
        let net = self.bind(&mut g, false)?;
        let x = g.constant(grid.to_tensor())?;
        let e = net.embed(&mut g, x)?;
        Ok(g.value(e).clone())
    }

    /// `||h(z) - h(y)||_2` for a single pair.
    pub fn distance(&self, z_hat: &CharGrid, y_hat: &CharGrid) -> Result<f64> {
        let mut g = Graph::new();
        let net = self.bind(&mut g, false)?;
        let z = g.constant(z_hat.to_tensor())?;
        let y = g.constant(y_hat.to_tensor())?;
        let d = net.distance(&mut g, z, y)?;
        Ok(g.value(d).item())
    }
}

pub(crate) fn check_params(params: &ParamStore, shapes: &[(&str, usize, usize)]) -> Result<()> {
    if params.len() != shapes.len() {
        return Err(Error::config(format!(
            "expected {} parameters, found {}",
            shapes.len(),
            params.len()
        )));
    }
    for (&(name, rows, cols), (found, t)) in shapes.iter().zip(params.iter()) {
        if name != found || t.shape() != [rows, cols] {
            return Err(Error::config(format!(
                "parameter {found} {:?} does not match {name} [{rows}, {cols}]",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Surrogate parameters inserted into a particular [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundSurrogate {
    config: SurrogateConfig,
    params: Vec<Var>,
}

/// Outputs of [`BoundSurrogate::loss`] for a batch of `n` pairs.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateLoss {
    /// Batch mean of the per-sample loss, `1 x 1`.
    pub loss: Var,
    /// `n x 1` surrogate distances.
    pub e_hat: Var,
    /// `n x 1` norms of the surrogate gradient with respect to `z`.
    pub grad_norm: Var,
    /// `n x 1` per-sample loss.
    pub per_sample: Var,
}

impl BoundSurrogate {
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    fn check_grids(&self, g: &Graph, grids: Var) -> Result<()> {
        let [rows, cols] = g.shape(grids);
        if cols != self.config.alphabet_size || rows == 0 || rows % self.config.length != 0 {
            return Err(Error::config(format!(
                "grid batch {rows}x{cols} does not fit alphabet {} and length {}",
                self.config.alphabet_size, self.config.length
            )));
        }
        Ok(())
    }

    /// Embeds a batch of `n` grids stacked as `(n * L) x |A|`, giving `n x d`.
    pub fn embed(&self, g: &mut Graph, grids: Var) -> Result<Var> {
        self.check_grids(g, grids)?;
        let cfg = &self.config;
        let pad = cfg.kernel / 2;
        let mut h = grids;
        for l in 0..CONV_LAYERS {
            let (w, b) = (self.params[2 * l], self.params[2 * l + 1]);
            h = g.conv1d(h, w, b, cfg.length, pad)?;
            h = g.leaky_relu(h, cfg.slope)?;
        }
        let pooled = g.segment_mean(h, cfg.length)?;
        let p = &self.params[2 * CONV_LAYERS..];
        let hidden = g.linear(pooled, p[0], p[1])?;
        let hidden = g.leaky_relu(hidden, cfg.slope)?;
        g.linear(hidden, p[2], p[3])
    }

    /// Per-pair surrogate distances `n x 1` for stacked grids `z` and `y`.
    pub fn distance(&self, g: &mut Graph, z: Var, y: Var) -> Result<Var> {
        if g.shape(z) != g.shape(y) {
            return Err(Error::config(format!(
                "grid batches differ: {:?} vs {:?}",
                g.shape(z),
                g.shape(y)
            )));
        }
        let hz = self.embed(g, z)?;
        let hy = self.embed(g, y)?;
        let diff = g.sub(hz, hy)?;
        g.row_l2_norm_eps(diff, NORM_EPS)
    }

    /// Surrogate training loss for a batch:
    /// `w1 (e_hat - e)^2 + w2 (||d e_hat / d z||_2 - 1)^2`, averaged over
    /// pairs. `z` must be a gradient-tracking leaf; the inner gradient is
    /// built with `create_graph` so the penalty is differentiable in the
    /// surrogate parameters.
    pub fn loss(
        &self,
        g: &mut Graph,
        z: Var,
        y: Var,
        targets: &[f64],
        weights: SurrogateLossWeights,
    ) -> Result<SurrogateLoss> {
        weights.validate()?;
        let n = g.shape(z)[0] / self.config.length.max(1);
        if targets.len() != n {
            return Err(Error::Input(format!("{} targets for {n} pairs", targets.len())));
        }
        let e_hat = self.distance(g, z, y)?;
        let total = g.sum_all(e_hat)?;
        // pairs are independent, so each block of the batch gradient is that
        // pair's own gradient
        let dz = g.backward(total, &[z], true)?[0];
        let sq = g.square(dz)?;
        let per_row = g.sum_cols(sq)?;
        let per_pair = g.segment_sum(per_row, self.config.length)?;
        let per_pair = g.offset(per_pair, NORM_EPS)?;
        let grad_norm = g.sqrt(per_pair)?;

        let e = g.constant(Tensor::column(targets.to_vec()))?;
        let err = g.sub(e_hat, e)?;
        let err = g.square(err)?;
        let fit = g.scale(err, weights.w1)?;
        let unit = g.offset(grad_norm, -1.0)?;
        let unit = g.square(unit)?;
        let penalty = g.scale(unit, weights.w2)?;
        let per_sample = g.add(fit, penalty)?;
        let loss = g.mean(per_sample)?;
        Ok(SurrogateLoss {
            loss,
            e_hat,
            grad_norm,
            per_sample,
        })
    }
}

/// Surrogate loss for one pair together with its gradient in the
/// surrogate parameters (store order).
pub fn surrogate_loss(
    z_hat: &CharGrid,
    y_hat: &CharGrid,
    e: usize,
    net: &SurrogateNet,
    weights: SurrogateLossWeights,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g, true)?;
    let z = g.param(z_hat.to_tensor())?;
    let y = g.constant(y_hat.to_tensor())?;
    let out = bound.loss(&mut g, z, y, &[e as f64], weights)?;
    let grads = g.backward(out.loss, bound.params(), false)?;
    Ok((
        g.value(out.loss).item(),
        grads.into_iter().map(|v| g.value(v).clone()).collect(),
    ))
}

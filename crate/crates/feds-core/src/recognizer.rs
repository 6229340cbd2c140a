//! Small differentiable word recognizer.
//!
//! An `H x W` image is read as a sequence of `W` pixel columns with `H`
//! channels. A stack of same-padded 1-D convolutions runs along the width,
//! each group of `W / L` columns is averaged into one character position,
//! and a linear head followed by a per-position softmax gives the `|A| x L`
//! prediction grid.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{uniform_init, ParamStore};
use crate::rng::{self, purpose};
use crate::surrogate::check_params;
use crate::tensor::Tensor;
use crate::text::{decode_rows, Alphabet, CharGrid};

/// Log clamp used by [`ce_loss`].
pub const LOG_CLAMP: f64 = 1e-12;

/// Word image with its transcription.
#[derive(Debug, Clone, PartialEq)]
pub struct WordImage {
    /// `H x W`, values in `[0, 1]`.
    pub pixels: Tensor,
    pub label: String,
}

impl WordImage {
    pub fn height(&self) -> usize {
        self.pixels.rows()
    }

    pub fn width(&self) -> usize {
        self.pixels.cols()
    }

    /// The image as a `W x H` sequence of columns.
    pub fn columns(&self) -> Tensor {
        self.pixels.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecognizerConfig {
    pub alphabet_size: usize,
    pub length: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub layers: usize,
    pub kernel: usize,
    pub slope: f64,
}

const CONV_W: [&str; 8] = [
    "conv0.weight",
    "conv1.weight",
    "conv2.weight",
    "conv3.weight",
    "conv4.weight",
    "conv5.weight",
    "conv6.weight",
    "conv7.weight",
];
const CONV_B: [&str; 8] = [
    "conv0.bias",
    "conv1.bias",
    "conv2.bias",
    "conv3.bias",
    "conv4.bias",
    "conv5.bias",
    "conv6.bias",
    "conv7.bias",
];

impl RecognizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphabet_size < 2 || self.length == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::config("recognizer dimensions must be positive"));
        }
        if !self.width.is_multiple_of(self.length) {
            return Err(Error::config(format!(
                "image width {} is not a multiple of length {}",
                self.width, self.length
            )));
        }
        if self.layers == 0 || self.layers > CONV_W.len() {
            return Err(Error::config(format!("recognizer needs 1..=8 layers, got {}", self.layers)));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("recognizer kernel must be odd"));
        }
        Ok(())
    }

    /// Image columns pooled into each character position.
    pub fn stride(&self) -> usize {
        self.width / self.length
    }

    fn layer_shapes(&self) -> Vec<(&'static str, usize, usize)> {
        let mut shapes = Vec::new();
        let mut c_in = self.height;
        for l in 0..self.layers {
            shapes.push((CONV_W[l], self.kernel * c_in, self.channels));
            shapes.push((CONV_B[l], 1, self.channels));
            c_in = self.channels;
        }
        shapes.push(("head.weight", self.channels, self.alphabet_size));
        shapes.push(("head.bias", 1, self.alphabet_size));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecognizerNet {
    config: RecognizerConfig,
    params: ParamStore,
}

impl RecognizerNet {
    pub fn new(config: RecognizerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, purpose::RECOGNIZER_INIT, 0);
        let mut params = ParamStore::new();
        for (name, rows, cols) in config.layer_shapes() {
            let fan_in = if rows == 1 {
                params.tensors().last().map_or(1, Tensor::rows)
            } else {
                rows
            };
            params.insert(name, uniform_init(&mut rng, rows, cols, fan_in))?;
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: RecognizerConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        check_params(&params, &config.layer_shapes())?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Result<BoundRecognizer> {
        Ok(BoundRecognizer {
            config: self.config,
            params: self.params.bind(graph, trainable)?,
        })
    }

    /// Stacks images into the `(n * W) x H` batch layout.
    pub fn batch_tensor(&self, images: &[&WordImage]) -> Result<Tensor> {
        let mut cols = Vec::with_capacity(images.len());
        for img in images {
            if img.height() != self.config.height || img.width() != self.config.width {
                return Err(Error::config(format!(
                    "image {}x{} does not match recognizer {}x{}",
                    img.height(),
                    img.width(),
                    self.config.height,
                    self.config.width
                )));
            }
            cols.push(img.columns());
        }
        let refs: Vec<&Tensor> = cols.iter().collect();
        Tensor::vstack(&refs)
    }

    /// Soft-max prediction grid for one image.
    pub fn recognize(&self, image: &WordImage) -> Result<CharGrid> {
        let out = self.recognize_batch(&[image])?;
        CharGrid::from_tensor(&out)
    }

    /// Stacked `(n * L) x |A|` predictions without gradient tracking.
    pub fn recognize_batch(&self, images: &[&WordImage]) -> Result<Tensor> {
        self.recognize_batch_columns(self.batch_tensor(images)?)
    }

    /// Like [`Self::recognize_batch`] for an already stacked `(n * W) x H`
    /// batch.
    pub fn recognize_batch_columns(&self, columns: Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let net = self.bind(&mut g, false)?;
        let x = g.constant(columns)?;
        let z = net.forward(&mut g, x)?;
        Ok(g.value(z).clone())
    }

    /// Greedy transcriptions, evaluated in chunks of `chunk` images.
    pub fn transcribe(&self, images: &[WordImage], alphabet: &Alphabet, chunk: usize) -> Result<Vec<String>> {
        let a = self.config.alphabet_size;
        let l = self.config.length;
        let mut out = Vec::with_capacity(images.len());
        for part in images.chunks(chunk.max(1)) {
            let refs: Vec<&WordImage> = part.iter().collect();
            let z = self.recognize_batch(&refs)?;
            for s in 0..part.len() {
                out.push(decode_rows(&z.data()[s * l * a..(s + 1) * l * a], a, alphabet));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct BoundRecognizer {
    config: RecognizerConfig,
    params: Vec<Var>,
}

impl BoundRecognizer {
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// `(n * W) x H` image columns to `(n * L) x |A|` soft-max grids.
    pub fn forward(&self, g: &mut Graph, images: Var) -> Result<Var> {
        let cfg = &self.config;
        let [rows, cols] = g.shape(images);
        if cols != cfg.height || rows % cfg.width != 0 {
            return Err(Error::config(format!(
                "image batch {rows}x{cols} does not fit height {} and width {}",
                cfg.height, cfg.width
            )));
        }
        let pad = cfg.kernel / 2;
        let mut h = images;
        for l in 0..cfg.layers {
            h = g.conv1d(h, self.params[2 * l], self.params[2 * l + 1], cfg.width, pad)?;
            h = g.leaky_relu(h, cfg.slope)?;
        }
        let pooled = g.segment_mean(h, cfg.stride())?;
        let p = &self.params[2 * cfg.layers..];
        let logits = g.linear(pooled, p[0], p[1])?;
        g.softmax_rows(logits)
    }
}

/// Cross-entropy `-(1 / (L |A|)) sum y log z` averaged over the samples
/// of a stacked batch, with `log` clamped at [`LOG_CLAMP`].
pub fn ce_loss(g: &mut Graph, z_hat: Var, y_hat: Var, length: usize) -> Result<Var> {
    if g.shape(z_hat) != g.shape(y_hat) {
        return Err(Error::Input(format!(
            "prediction {:?} and target {:?} differ",
            g.shape(z_hat),
            g.shape(y_hat)
        )));
    }
    let [rows, cols] = g.shape(z_hat);
    if length == 0 || rows % length != 0 {
        return Err(Error::Input(format!("{rows} rows is not a whole number of grids of length {length}")));
    }
    let n = rows / length;
    let clamped = g.clamp_min(z_hat, LOG_CLAMP)?;
    let logz = g.log(clamped)?;
    let picked = g.mul(logz, y_hat)?;
    let total = g.sum_all(picked)?;
    g.scale(total, -1.0 / (n * length * cols) as f64)
}

/// [`ce_loss`] on a single pair of grids.
pub fn ce_loss_value(z_hat: &CharGrid, y_hat: &CharGrid) -> Result<f64> {
    let mut g = Graph::new();
    let z = g.constant(z_hat.to_tensor())?;
    let y = g.constant(y_hat.to_tensor())?;
    let l = ce_loss(&mut g, z, y, z_hat.length())?;
    Ok(g.value(l).item())
}

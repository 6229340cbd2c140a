//! Filtered post-tuning.
//!
//! Training alternates two phases per epoch. The surrogate phase fits the
//! edit-distance surrogate to predictions of the frozen recognizer. The
//! recognizer phase then tunes the recognizer against the frozen
//! surrogate, keeping only samples whose surrogate error `|e_hat - e|` is
//! strictly below `lambda`; every other sample contributes exactly zero
//! gradient.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::optim::{Optimizer, OptimizerKind};
use crate::recognizer::{ce_loss, RecognizerNet, WordImage};
use crate::rng::{self, purpose};
use crate::surrogate::{SurrogateLossWeights, SurrogateNet};
use crate::synth::{random_pair_generator, DatasetConfig};
use crate::tensor::Tensor;
use crate::text::{decode_rows, edit_distance, encode_one_hot, evaluate_set, Alphabet, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Filtered surrogate, trained only on recognizer predictions.
    Feds,
    /// Unfiltered surrogate, trained on recognizer predictions and random
    /// word pairs.
    Lsed,
    /// Continued cross-entropy training; no surrogate.
    Baseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Feds => "feds",
            Mode::Lsed => "lsed",
            Mode::Baseline => "baseline",
        }
    }
}

impl core::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feds" => Ok(Mode::Feds),
            "lsed" => Ok(Mode::Lsed),
            "baseline" => Ok(Mode::Baseline),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

/// How a gate-open sample is turned into a recognizer loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateMode {
    /// `e_hat * [|e_hat - e| < lambda]` with the indicator held constant.
    #[default]
    Gated,
    /// `min(|e_hat - e|, lambda)` differentiated as written.
    Literal,
}

impl GateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GateMode::Gated => "gated",
            GateMode::Literal => "literal",
        }
    }
}

impl core::str::FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gated" => Ok(GateMode::Gated),
            "literal" => Ok(GateMode::Literal),
            other => Err(Error::config(format!("unknown gate mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Surrogate updates per epoch.
    pub surrogate_iters: usize,
    /// Recognizer updates per epoch.
    pub recognizer_iters: usize,
    pub epochs: usize,
    pub surrogate_lr: f64,
    pub recognizer_lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub mode: Mode,
    pub gate_mode: GateMode,
    pub weights: SurrogateLossWeights,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            surrogate_iters: 500,
            recognizer_iters: 500,
            epochs: 10,
            surrogate_lr: 1.0,
            recognizer_lr: 1.0,
            lambda: 0.25,
            batch_size: 32,
            mode: Mode::Feds,
            gate_mode: GateMode::Gated,
            weights: SurrogateLossWeights::default(),
            optimizer: OptimizerKind::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.surrogate_iters == 0 || self.recognizer_iters == 0 || self.epochs == 0 {
            return Err(Error::config("iteration and epoch counts must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        self.weights.validate()
    }

    /// Gate threshold actually applied; the unfiltered mode never closes it.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            Mode::Feds => self.lambda,
            Mode::Lsed | Mode::Baseline => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Surrogate,
    Recognizer,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Surrogate => "surrogate",
            Phase::Recognizer => "recognizer",
        }
    }
}

impl core::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surrogate" => Ok(Phase::Surrogate),
            "recognizer" => Ok(Phase::Recognizer),
            other => Err(Error::Input(format!("unknown phase {other:?}"))),
        }
    }
}

/// One training sample seen during a phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLogRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// 1-based update index within the phase.
    pub iteration: usize,
    /// Index of the sample in the training set.
    pub sample_index: usize,
    pub e: usize,
    /// Surrogate estimate; absent when no surrogate is used.
    pub e_hat: Option<f64>,
    pub loss: f64,
    pub gate_open: bool,
}

/// `min(|e_hat - e|, lambda)`.
pub fn filter_value(e: usize, e_hat: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::config(format!("lambda must be positive, got {lambda}")));
    }
    Ok((e_hat - e as f64).abs().min(lambda))
}

/// The gate is open only for a strictly smaller error than `lambda`.
pub fn gate_open(e: usize, e_hat: f64, lambda: f64) -> bool {
    (e_hat - e as f64).abs() < lambda
}

#[derive(Debug, Clone)]
pub struct FilteredLoss {
    /// Batch mean, `1 x 1`.
    pub loss: Var,
    /// `n x 1` per-sample values.
    pub per_sample: Var,
    pub gate_open: Vec<bool>,
}

/// Filtered recognizer loss for `n x 1` surrogate values `e_hat` and true
/// distances `e`. Closed-gate samples have zero gradient in both modes.
pub fn filtered_str_loss(
    g: &mut Graph,
    e_hat: Var,
    e: &[usize],
    lambda: f64,
    gate_mode: GateMode,
) -> Result<FilteredLoss> {
    if !(lambda > 0.0) {
        return Err(Error::config(format!("lambda must be positive, got {lambda}")));
    }
    if g.shape(e_hat) != [e.len(), 1] {
        return Err(Error::Input(format!(
            "{:?} surrogate values for {} distances",
            g.shape(e_hat),
            e.len()
        )));
    }
    let open: Vec<bool> = g
        .value(e_hat)
        .data()
        .iter()
        .zip(e)
        .map(|(&eh, &ev)| gate_open(ev, eh, lambda))
        .collect();
    let mask = Tensor::column(open.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect());
    let mask_v = g.constant(mask)?;
    let per_sample = match gate_mode {
        GateMode::Gated => g.mul(e_hat, mask_v)?,
        GateMode::Literal => {
            let ev = g.constant(Tensor::column(e.iter().map(|&v| v as f64).collect()))?;
            let diff = g.sub(e_hat, ev)?;
            let abs = g.abs(diff)?;
            let kept = g.mul(abs, mask_v)?;
            let clipped = Tensor::column(open.iter().map(|&o| if o { 0.0 } else { lambda }).collect());
            // an infinite lambda never reaches a closed sample
            let clipped = clipped.map(|v| if v.is_finite() { v } else { 0.0 });
            let c = g.constant(clipped)?;
            g.add(kept, c)?
        }
    };
    let loss = g.mean(per_sample)?;
    Ok(FilteredLoss {
        loss,
        per_sample,
        gate_open: open,
    })
}

/// Cross-entropy pre-training schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            iterations: 2000,
            batch_size: 32,
            lr: 10.0,
            optimizer: OptimizerKind::default(),
            seed,
        }
    }
}

/// Per-sample training tensors shared by the trainers.
struct Prepared {
    columns: Vec<Tensor>,
    targets: Vec<Tensor>,
}

impl Prepared {
    fn new(samples: &[WordImage], alphabet: &Alphabet, length: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        let columns = samples.iter().map(WordImage::columns).collect();
        let targets = samples
            .iter()
            .map(|s| encode_one_hot(&s.label, alphabet, length).map(|g| g.to_tensor()))
            .collect::<Result<_>>()?;
        Ok(Self { columns, targets })
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let x: Vec<&Tensor> = idx.iter().map(|&i| &self.columns[i]).collect();
        let y: Vec<&Tensor> = idx.iter().map(|&i| &self.targets[i]).collect();
        Ok((Tensor::vstack(&x)?, Tensor::vstack(&y)?))
    }
}

fn draw_batch(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..n)).collect()
}

fn grads_of(g: &mut Graph, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
    let grads = g.backward(loss, wrt, false)?;
    Ok(grads.into_iter().map(|v| g.value(v).clone()).collect())
}

/// Trains `net` with cross-entropy, returning the loss of every update.
pub fn train_baseline(
    cfg: &BaselineConfig,
    samples: &[WordImage],
    alphabet: &Alphabet,
    net: &mut RecognizerNet,
) -> Result<Vec<f64>> {
    let length = net.config().length;
    let data = Prepared::new(samples, alphabet, length)?;
    let mut rng = rng::stream(cfg.seed, purpose::BATCHES, 1);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let idx = draw_batch(&mut rng, samples.len(), cfg.batch_size);
        let (x, y) = data.batch(&idx)?;
        let mut g = Graph::new();
        let theta = net.bind(&mut g, true)?;
        let x = g.constant(x)?;
        let y = g.constant(y)?;
        let z = theta.forward(&mut g, x)?;
        let loss = ce_loss(&mut g, z, y, length)?;
        let grads = grads_of(&mut g, loss, theta.params())?;
        losses.push(g.value(loss).item());
        opt.step(net.params_mut(), &grads)?;
    }
    Ok(losses)
}

/// Greedy-decoded metrics of `net` on `samples`.
pub fn evaluate_recognizer(
    net: &RecognizerNet,
    samples: &[WordImage],
    alphabet: &Alphabet,
) -> Result<MetricsReport> {
    let preds = net.transcribe(samples, alphabet, 128)?;
    let gts: Vec<&str> = samples.iter().map(|s| s.label.as_str()).collect();
    evaluate_set(&preds, &gts)
}

/// How well the surrogate tracks the true edit distance of the
/// recognizer's predictions on a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateFit {
    /// Mean `|e_hat - e|`.
    pub mean_abs_error: f64,
    /// Fraction of samples with `|e_hat - e| < lambda`.
    pub open_fraction: f64,
}

pub fn surrogate_fit(
    recognizer: &RecognizerNet,
    surrogate: &SurrogateNet,
    samples: &[WordImage],
    alphabet: &Alphabet,
    lambda: f64,
) -> Result<SurrogateFit> {
    if samples.is_empty() {
        return Err(Error::Input("no samples to evaluate".into()));
    }
    let length = recognizer.config().length;
    let data = Prepared::new(samples, alphabet, length)?;
    let a = alphabet.len();
    let (mut err, mut open) = (0.0, 0usize);
    let all: Vec<usize> = (0..samples.len()).collect();
    for idx in all.chunks(128) {
        let (x, y) = data.batch(idx)?;
        let z = recognizer.recognize_batch_columns(x)?;
        let mut g = Graph::new();
        let phi = surrogate.bind(&mut g, false)?;
        let zv = g.constant(z)?;
        let yv = g.constant(y)?;
        let d = phi.distance(&mut g, zv, yv)?;
        let z = g.value(zv);
        for (s, &i) in idx.iter().enumerate() {
            let pred = decode_rows(&z.data()[s * length * a..(s + 1) * length * a], a, alphabet);
            let e = edit_distance(&pred, &samples[i].label);
            let e_hat = g.value(d).data()[s];
            err += libm::fabs(e_hat - e as f64);
            open += usize::from(gate_open(e, e_hat, lambda));
        }
    }
    let n = samples.len() as f64;
    Ok(SurrogateFit {
        mean_abs_error: err / n,
        open_fraction: open as f64 / n,
    })
}

/// Owns both networks, their optimizer state and the sampling streams for
/// one post-tuning run.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    dataset: &'a DatasetConfig,
    samples: &'a [WordImage],
    data: Prepared,
    recognizer: RecognizerNet,
    surrogate: SurrogateNet,
    recognizer_opt: Optimizer,
    surrogate_opt: Optimizer,
    batches: ChaCha8Rng,
    pairs: ChaCha8Rng,
    logs: Vec<PhaseLogRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: TrainConfig,
        dataset: &'a DatasetConfig,
        samples: &'a [WordImage],
        recognizer: RecognizerNet,
        surrogate: SurrogateNet,
    ) -> Result<Self> {
        cfg.validate()?;
        let (rc, sc) = (recognizer.config(), surrogate.config());
        let a = dataset.alphabet.len();
        if rc.alphabet_size != a || sc.alphabet_size != a {
            return Err(Error::config("network alphabet size differs from the dataset"));
        }
        if rc.length != dataset.length || sc.length != dataset.length {
            return Err(Error::config("network length capacity differs from the dataset"));
        }
        let data = Prepared::new(samples, &dataset.alphabet, dataset.length)?;
        Ok(Self {
            batches: rng::stream(cfg.seed, purpose::BATCHES, 0),
            pairs: rng::stream(cfg.seed, purpose::PAIRS, 0),
            recognizer_opt: Optimizer::new(cfg.optimizer, cfg.recognizer_lr),
            surrogate_opt: Optimizer::new(cfg.optimizer, cfg.surrogate_lr),
            cfg,
            dataset,
            samples,
            data,
            recognizer,
            surrogate,
            logs: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn recognizer(&self) -> &RecognizerNet {
        &self.recognizer
    }

    pub fn surrogate(&self) -> &SurrogateNet {
        &self.surrogate
    }

    pub fn logs(&self) -> &[PhaseLogRecord] {
        &self.logs
    }

    pub fn into_parts(self) -> (RecognizerNet, SurrogateNet, Vec<PhaseLogRecord>) {
        (self.recognizer, self.surrogate, self.logs)
    }

    fn distances(&self, z: &Tensor, idx: &[usize]) -> Vec<usize> {
        let a = self.dataset.alphabet.len();
        let l = self.dataset.length;
        idx.iter()
            .enumerate()
            .map(|(s, &i)| {
                let pred: String = decode_rows(&z.data()[s * l * a..(s + 1) * l * a], a, &self.dataset.alphabet);
                edit_distance(&pred, &self.samples[i].label)
            })
            .collect()
    }

    /// `surrogate_iters` updates of the surrogate on predictions of the
    /// frozen recognizer (plus random word pairs in the unfiltered mode).
    pub fn train_surrogate_phase(&mut self, epoch: usize) -> Result<()> {
        let lambda = self.cfg.effective_lambda();
        let b = self.cfg.batch_size;
        for it in 1..=self.cfg.surrogate_iters {
            let idx = draw_batch(&mut self.batches, self.samples.len(), b);
            let (x, mut y) = self.data.batch(&idx)?;
            let mut z = self.recognizer.recognize_batch_columns(x)?;
            let e = self.distances(&z, &idx);
            let mut targets: Vec<f64> = e.iter().map(|&v| v as f64).collect();
            if self.cfg.mode == Mode::Lsed {
                let mut za = Vec::with_capacity(b);
                let mut yb = Vec::with_capacity(b);
                for _ in 0..b {
                    let p = random_pair_generator(self.dataset, &mut self.pairs)?;
                    za.push(p.grid_a.to_tensor());
                    yb.push(p.grid_b.to_tensor());
                    targets.push(p.ed as f64);
                }
                let za: Vec<&Tensor> = core::iter::once(&z).chain(za.iter()).collect();
                let yb: Vec<&Tensor> = core::iter::once(&y).chain(yb.iter()).collect();
                z = Tensor::vstack(&za)?;
                y = Tensor::vstack(&yb)?;
            }

            let mut g = Graph::new();
            let phi = self.surrogate.bind(&mut g, true)?;
            let zv = g.param(z)?;
            let yv = g.constant(y)?;
            let out = phi.loss(&mut g, zv, yv, &targets, self.cfg.weights)?;
            let grads = grads_of(&mut g, out.loss, phi.params())?;
            let e_hat = g.value(out.e_hat).data();
            let per = g.value(out.per_sample).data();
            for (s, &i) in idx.iter().enumerate() {
                self.logs.push(PhaseLogRecord {
                    epoch,
                    phase: Phase::Surrogate,
                    iteration: it,
                    sample_index: i,
                    e: e[s],
                    e_hat: Some(e_hat[s]),
                    loss: per[s],
                    gate_open: gate_open(e[s], e_hat[s], lambda),
                });
            }
            self.surrogate_opt.step(self.surrogate.params_mut(), &grads)?;
        }
        Ok(())
    }

    /// `recognizer_iters` updates of the recognizer against the frozen
    /// surrogate.
    pub fn tune_recognizer_phase(&mut self, epoch: usize) -> Result<()> {
        let lambda = self.cfg.effective_lambda();
        let length = self.dataset.length;
        for it in 1..=self.cfg.recognizer_iters {
            let idx = draw_batch(&mut self.batches, self.samples.len(), self.cfg.batch_size);
            let (x, y) = self.data.batch(&idx)?;
            let mut g = Graph::new();
            let theta = self.recognizer.bind(&mut g, true)?;
            let xv = g.constant(x)?;
            let yv = g.constant(y)?;
            let z = theta.forward(&mut g, xv)?;
            let e = self.distances(g.value(z), &idx);

            let (loss, per_sample, e_hat, open) = match self.cfg.mode {
                Mode::Baseline => {
                    let loss = ce_loss(&mut g, z, yv, length)?;
                    let v = g.value(loss).item();
                    (loss, alloc::vec![v; idx.len()], None, alloc::vec![true; idx.len()])
                }
                Mode::Feds | Mode::Lsed => {
                    let phi = self.surrogate.bind(&mut g, false)?;
                    let e_hat = phi.distance(&mut g, z, yv)?;
                    let f = filtered_str_loss(&mut g, e_hat, &e, lambda, self.cfg.gate_mode)?;
                    let per = g.value(f.per_sample).data().to_vec();
                    let eh = g.value(e_hat).data().to_vec();
                    (f.loss, per, Some(eh), f.gate_open)
                }
            };
            let grads = grads_of(&mut g, loss, theta.params())?;
            for (s, &i) in idx.iter().enumerate() {
                self.logs.push(PhaseLogRecord {
                    epoch,
                    phase: Phase::Recognizer,
                    iteration: it,
                    sample_index: i,
                    e: e[s],
                    e_hat: e_hat.as_ref().map(|v| v[s]),
                    loss: per_sample[s],
                    gate_open: open[s],
                });
            }
            self.recognizer_opt.step(self.recognizer.params_mut(), &grads)?;
        }
        Ok(())
    }
}

/// Result of [`run_post_tuning`].
#[derive(Debug, Clone)]
pub struct PostTuning {
    pub recognizer: RecognizerNet,
    pub surrogate: SurrogateNet,
    pub logs: Vec<PhaseLogRecord>,
}

/// `epochs` alternations of the surrogate and recognizer phases, starting
/// from a pre-trained recognizer and a randomly initialised surrogate.
/// `on_epoch` sees both networks after every epoch (e.g. to checkpoint).
pub fn run_post_tuning<F>(
    cfg: &TrainConfig,
    dataset: &DatasetConfig,
    train: &[WordImage],
    recognizer: RecognizerNet,
    surrogate: SurrogateNet,
    mut on_epoch: F,
) -> Result<PostTuning>
where
    F: FnMut(usize, &RecognizerNet, &SurrogateNet) -> Result<()>,
{
    let mut t = Trainer::new(*cfg, dataset, train, recognizer, surrogate)?;
    for epoch in 1..=cfg.epochs {
        if cfg.mode != Mode::Baseline {
            t.train_surrogate_phase(epoch)?;
        }
        t.tune_recognizer_phase(epoch)?;
        on_epoch(epoch, &t.recognizer, &t.surrogate)?;
    }
    let (recognizer, surrogate, logs) = t.into_parts();
    Ok(PostTuning {
        recognizer,
        surrogate,
        logs,
    })
}

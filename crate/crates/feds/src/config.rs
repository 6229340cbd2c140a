//! TOML experiment configuration.
//!
//! Every key is optional; missing keys take the desk defaults. Example:
//!
//! ```toml
//! seed = 3
//!
//! [data]
//! corpus_size = 2000
//!
//! [tune]
//! mode = "lsed"
//! epochs = 4
//! ```

use std::path::Path;

use feds_core::optim::OptimizerKind;
use feds_core::recognizer::RecognizerConfig;
use feds_core::surrogate::{SurrogateConfig, SurrogateLossWeights};
use feds_core::synth::DatasetConfig;
use feds_core::text::DEFAULT_CHARSET;
use feds_core::trainer::{BaselineConfig, GateMode, Mode, TrainConfig};
use feds_core::Alphabet;
use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Config {
    pub seed: u64,
    pub data: DataSection,
    pub recognizer: RecognizerSection,
    pub surrogate: SurrogateSection,
    pub baseline: BaselineSection,
    pub tune: TuneSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub charset: String,
    pub length: usize,
    pub height: usize,
    pub width: usize,
    pub glyph_width: usize,
    pub corpus_size: usize,
    pub noise_std: f64,
    pub shift_range: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerSection {
    pub channels: usize,
    pub layers: usize,
    pub kernel: usize,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSection {
    pub channels: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub embedding_dim: usize,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Adadelta,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerName,
    pub rho: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub mode: String,
    pub gate_mode: String,
    pub epochs: usize,
    pub surrogate_iters: usize,
    pub recognizer_iters: usize,
    pub surrogate_lr: f64,
    pub recognizer_lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub w1: f64,
    pub w2: f64,
    pub optimizer: OptimizerSection,
}


impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetConfig::desk(0);
        Self {
            charset: DEFAULT_CHARSET.to_owned(),
            length: d.length,
            height: d.height,
            width: d.width,
            glyph_width: d.glyph_width,
            corpus_size: d.corpus_size,
            noise_std: d.noise_std,
            shift_range: d.shift_range,
        }
    }
}

impl Default for RecognizerSection {
    fn default() -> Self {
        Self {
            channels: 16,
            layers: 2,
            kernel: 3,
            slope: 0.01,
        }
    }
}

impl Default for SurrogateSection {
    fn default() -> Self {
        let s = SurrogateConfig::desk(2, 1);
        Self {
            channels: s.channels,
            kernel: s.kernel,
            hidden: s.hidden,
            embedding_dim: s.embedding_dim,
            slope: s.slope,
        }
    }
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let OptimizerKind::Adadelta { rho, eps } = OptimizerKind::default() else {
            unreachable!("the default optimizer is ADADELTA")
        };
        Self {
            kind: OptimizerName::Adadelta,
            rho,
            eps,
        }
    }
}

impl From<&OptimizerSection> for OptimizerKind {
    fn from(o: &OptimizerSection) -> Self {
        match o.kind {
            OptimizerName::Adadelta => OptimizerKind::Adadelta { rho: o.rho, eps: o.eps },
            OptimizerName::Sgd => OptimizerKind::Sgd,
        }
    }
}

impl Default for BaselineSection {
    fn default() -> Self {
        let b = BaselineConfig::desk(0);
        Self {
            iterations: b.iterations,
            batch_size: b.batch_size,
            lr: b.lr,
            optimizer: OptimizerSection::default(),
        }
    }
}

impl Default for TuneSection {
    fn default() -> Self {
        let t = TrainConfig::desk(0);
        Self {
            mode: t.mode.as_str().to_owned(),
            gate_mode: t.gate_mode.as_str().to_owned(),
            epochs: t.epochs,
            surrogate_iters: t.surrogate_iters,
            recognizer_iters: t.recognizer_iters,
            surrogate_lr: t.surrogate_lr,
            recognizer_lr: t.recognizer_lr,
            lambda: t.lambda,
            batch_size: t.batch_size,
            w1: t.weights.w1,
            w2: t.weights.w2,
            optimizer: OptimizerSection::default(),
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| feds_core::Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every derived configuration.
    pub fn validate(&self) -> Result<()> {
        self.dataset()?.validate()?;
        self.recognizer()?.validate()?;
        self.surrogate()?.validate()?;
        self.train()?.validate()?;
        Ok(())
    }

    pub fn alphabet(&self) -> Result<Alphabet> {
        if self.data.charset.contains(['\t', '\n', '\r']) {
            return Err(feds_core::Error::Alphabet("charset may not contain tabs or newlines".into()).into());
        }
        Ok(Alphabet::new(&self.data.charset)?)
    }

    pub fn dataset(&self) -> Result<DatasetConfig> {
        let d = &self.data;
        Ok(DatasetConfig {
            alphabet: self.alphabet()?,
            length: d.length,
            height: d.height,
            width: d.width,
            glyph_width: d.glyph_width,
            corpus_size: d.corpus_size,
            noise_std: d.noise_std,
            shift_range: d.shift_range,
            seed: self.seed,
        })
    }

    pub fn recognizer(&self) -> Result<RecognizerConfig> {
        let r = &self.recognizer;
        Ok(RecognizerConfig {
            alphabet_size: self.alphabet()?.len(),
            length: self.data.length,
            height: self.data.height,
            width: self.data.width,
            channels: r.channels,
            layers: r.layers,
            kernel: r.kernel,
            slope: r.slope,
        })
    }

    pub fn surrogate(&self) -> Result<SurrogateConfig> {
        let s = &self.surrogate;
        Ok(SurrogateConfig {
            alphabet_size: self.alphabet()?.len(),
            length: self.data.length,
            channels: s.channels,
            kernel: s.kernel,
            hidden: s.hidden,
            embedding_dim: s.embedding_dim,
            slope: s.slope,
        })
    }

    pub fn baseline(&self) -> BaselineConfig {
        let b = &self.baseline;
        BaselineConfig {
            iterations: b.iterations,
            batch_size: b.batch_size,
            lr: b.lr,
            optimizer: (&b.optimizer).into(),
            seed: self.seed,
        }
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let t = &self.tune;
        let cfg = TrainConfig {
            surrogate_iters: t.surrogate_iters,
            recognizer_iters: t.recognizer_iters,
            epochs: t.epochs,
            surrogate_lr: t.surrogate_lr,
            recognizer_lr: t.recognizer_lr,
            lambda: t.lambda,
            batch_size: t.batch_size,
            mode: t.mode.parse::<Mode>()?,
            gate_mode: t.gate_mode.parse::<GateMode>()?,
            weights: SurrogateLossWeights { w1: t.w1, w2: t.w2 },
            optimizer: (&t.optimizer).into(),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

//! The subcommands of the `feds` binary as library functions.
//!
//! Outputs are plain functions of the configuration and seed; nothing
//! time- or host-dependent is written, so reruns give identical files.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use feds_core::recognizer::{RecognizerNet, WordImage};
use feds_core::surrogate::SurrogateNet;
use feds_core::synth::sample_corpus;
use feds_core::trainer::{evaluate_recognizer, run_post_tuning, train_baseline, Mode};
use feds_core::MetricsReport;

use crate::checkpoint::{load_recognizer, Checkpoint};
use crate::config::Config;
use crate::dataset::{read_dataset, write_dataset};
use crate::logs::{export_scatter, read_log, write_log, write_scatter, Scatter};
use crate::report::{summary, write_metrics};
use crate::{FormatError, Result};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const CONFIG_FILE: &str = "config.toml";
pub const RECOGNIZER_FILE: &str = "recognizer.ckpt";
pub const SURROGATE_FILE: &str = "surrogate.ckpt";
pub const LOG_FILE: &str = "log.csv";
pub const BASELINE_LOSS_FILE: &str = "baseline_loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const SCATTER_FILE: &str = "scatter.csv";

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
}

/// Loads `path` (or the defaults) and applies `overrides`.
pub fn resolve_config(path: Option<&Path>, overrides: &Overrides) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = overrides.mode {
        cfg.tune.mode = mode.as_str().to_owned();
    }
    if let Some(lambda) = overrides.lambda {
        cfg.tune.lambda = lambda;
    }
    if let Some(epochs) = overrides.epochs {
        cfg.tune.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(out: &Path, cfg: &Config) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}

pub fn split_dir(data: &Path, split: &str) -> PathBuf {
    data.join(split)
}

/// Reads one split and checks its labels and image size against `cfg`.
pub fn load_split(cfg: &Config, data: &Path, split: &str) -> Result<Vec<WordImage>> {
    if !SPLITS.contains(&split) {
        return Err(feds_core::Error::Usage(format!("unknown split {split:?}; expected one of {SPLITS:?}")).into());
    }
    let samples = read_dataset(split_dir(data, split))?;
    let alphabet = cfg.alphabet()?;
    let d = &cfg.data;
    for s in &samples {
        alphabet.validate(&s.label)?;
        if s.label.chars().count() > d.length {
            return Err(feds_core::Error::Capacity {
                len: s.label.chars().count(),
                capacity: d.length,
            }
            .into());
        }
        if (s.height(), s.width()) != (d.height, d.width) {
            return Err(feds_core::Error::Config(format!(
                "dataset image is {}x{}, configuration expects {}x{}",
                s.height(),
                s.width(),
                d.height,
                d.width
            ))
            .into());
        }
    }
    Ok(samples)
}

/// Renders the corpus and writes `train`, `val` and `test` splits.
pub fn gen_data(cfg: &Config, out: &Path) -> Result<()> {
    let ds = cfg.dataset()?;
    let corpus = sample_corpus(&ds)?;
    prepare_out(out, cfg)?;
    let splits = ds.splits();
    for (name, range) in SPLITS.iter().zip([splits.train, splits.val, splits.test]) {
        write_dataset(split_dir(out, name), &corpus[range])?;
    }
    Ok(())
}

/// Cross-entropy training from a fresh recognizer; writes the checkpoint
/// and the per-iteration losses.
pub fn train_baseline_cmd(cfg: &Config, data: &Path, out: &Path) -> Result<RecognizerNet> {
    let train = load_split(cfg, data, "train")?;
    let mut net = RecognizerNet::new(cfg.recognizer()?, cfg.seed)?;
    let losses = train_baseline(&cfg.baseline(), &train, &cfg.alphabet()?, &mut net)?;
    prepare_out(out, cfg)?;
    Checkpoint::from(&net).save(out.join(RECOGNIZER_FILE))?;
    let mut w = csv::Writer::from_path(out.join(BASELINE_LOSS_FILE))?;
    w.write_record(["iteration", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(net)
}

/// Checkpoint directory of one tuning epoch, `epochs/NNN`.
pub fn epoch_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join("epochs").join(format!("{epoch:03}"))
}

/// Post-tunes a pre-trained recognizer; writes both networks after every
/// epoch and at the end, plus the per-sample log.
pub fn tune_cmd(cfg: &Config, data: &Path, recognizer: &Path, out: &Path) -> Result<()> {
    let train = load_split(cfg, data, "train")?;
    let net = load_recognizer(recognizer, cfg.recognizer()?)?;
    let surrogate = SurrogateNet::new(cfg.surrogate()?, cfg.seed)?;
    let ds = cfg.dataset()?;
    prepare_out(out, cfg)?;
    let mut io_error = None;
    let result = run_post_tuning(&cfg.train()?, &ds, &train, net, surrogate, |epoch, rec, sur| {
        let dir = epoch_dir(out, epoch);
        let saved = fs::create_dir_all(&dir)
            .map_err(FormatError::from)
            .and_then(|()| Checkpoint::from(rec).save(dir.join(RECOGNIZER_FILE)))
            .and_then(|()| Checkpoint::from(sur).save(dir.join(SURROGATE_FILE)));
        saved.map_err(|e| {
            let msg = e.to_string();
            io_error = Some(e);
            feds_core::Error::State(msg)
        })
    });
    let result = match (result, io_error) {
        (Err(_), Some(e)) => return Err(e),
        (r, _) => r?,
    };
    Checkpoint::from(&result.recognizer).save(out.join(RECOGNIZER_FILE))?;
    Checkpoint::from(&result.surrogate).save(out.join(SURROGATE_FILE))?;
    write_log(BufWriter::new(File::create(out.join(LOG_FILE))?), &result.logs)?;
    Ok(())
}

/// Metrics of a checkpoint on one split.
pub fn evaluate_model(cfg: &Config, checkpoint: &Path, data: &Path, split: &str) -> Result<MetricsReport> {
    let net = load_recognizer(checkpoint, cfg.recognizer()?)?;
    let samples = load_split(cfg, data, split)?;
    let mut report = evaluate_recognizer(&net, &samples, &cfg.alphabet()?)?;
    report.dataset = split.to_owned();
    Ok(report)
}

/// Writes the metrics CSV and summary of `checkpoint`, returning the
/// summary text.
pub fn evaluate_cmd(
    cfg: &Config,
    checkpoint: &Path,
    baseline: Option<&Path>,
    data: &Path,
    split: &str,
    out: &Path,
) -> Result<String> {
    let report = evaluate_model(cfg, checkpoint, data, split)?;
    let base = baseline
        .map(|b| evaluate_model(cfg, b, data, split))
        .transpose()?;
    let text = summary(&report, base.as_ref());
    fs::create_dir_all(out)?;
    write_metrics(File::create(out.join(METRICS_FILE))?, &report)?;
    fs::write(out.join(SUMMARY_FILE), &text)?;
    Ok(text)
}

/// Writes the scatter CSV for epochs `from..=to` of a tuning log; a
/// missing bound defaults to the first or last logged epoch.
pub fn scatter_cmd(
    log: &Path,
    from: Option<usize>,
    to: Option<usize>,
    lambda: f64,
    out: &Path,
) -> Result<Scatter> {
    let records = read_log(File::open(log)?)?;
    let lo = from.unwrap_or_else(|| records.iter().map(|r| r.epoch).min().unwrap_or(1));
    let hi = to.unwrap_or_else(|| records.iter().map(|r| r.epoch).max().unwrap_or(0));
    let scatter = export_scatter(&records, lo..=hi, lambda)?;
    fs::create_dir_all(out)?;
    write_scatter(BufWriter::new(File::create(out.join(SCATTER_FILE))?), &scatter)?;
    Ok(scatter)
}

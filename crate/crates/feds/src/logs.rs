//! Training-log and scatter CSVs.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back gives bit-identical values.

use std::io::{Read, Write};
use std::ops::RangeInclusive;

use feds_core::trainer::{Phase, PhaseLogRecord};

use crate::{FormatError, Result};

pub const LOG_HEADER: [&str; 8] = [
    "epoch",
    "phase",
    "iteration",
    "sample_index",
    "e",
    "e_hat",
    "loss",
    "gate_open",
];

pub const SCATTER_HEADER: [&str; 6] = ["epoch", "iteration", "sample_index", "e", "e_hat", "in_band"];

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &'static str) -> Result<T> {
    let raw = rec.get(i).unwrap_or_default();
    raw.parse()
        .map_err(|_| FormatError::malformed(what, format!("bad value {raw:?} in column {i}")))
}

fn check_header(rec: &csv::StringRecord, expected: &[&str], what: &'static str) -> Result<()> {
    if rec.iter().ne(expected.iter().copied()) {
        return Err(FormatError::malformed(what, format!("unexpected header {rec:?}")));
    }
    Ok(())
}

pub fn write_log<W: Write>(out: W, records: &[PhaseLogRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.phase.as_str().to_owned(),
            r.iteration.to_string(),
            r.sample_index.to_string(),
            r.e.to_string(),
            r.e_hat.map(|v| v.to_string()).unwrap_or_default(),
            r.loss.to_string(),
            r.gate_open.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log<R: Read>(input: R) -> Result<Vec<PhaseLogRecord>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = rd.records();
    let header = rows
        .next()
        .ok_or_else(|| FormatError::malformed("log", "empty file"))??;
    check_header(&header, &LOG_HEADER, "log")?;
    rows.map(|rec| {
        let rec = rec?;
        let e_hat = match rec.get(5).unwrap_or_default() {
            "" => None,
            _ => Some(field(&rec, 5, "log")?),
        };
        let phase: Phase = rec
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| FormatError::malformed("log", format!("bad phase {:?}", rec.get(1))))?;
        Ok(PhaseLogRecord {
            epoch: field(&rec, 0, "log")?,
            phase,
            iteration: field(&rec, 2, "log")?,
            sample_index: field(&rec, 3, "log")?,
            e: field(&rec, 4, "log")?,
            e_hat,
            loss: field(&rec, 6, "log")?,
            gate_open: field(&rec, 7, "log")?,
        })
    })
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterRow {
    pub epoch: usize,
    pub iteration: usize,
    pub sample_index: usize,
    pub e: usize,
    pub e_hat: f64,
    /// `|e_hat - e| < lambda`.
    pub in_band: bool,
}

/// True versus surrogate edit distance for the recognizer phase of a range
/// of epochs, with the gate band `e +- lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    pub lambda: f64,
    pub epochs: RangeInclusive<usize>,
    pub rows: Vec<ScatterRow>,
}

impl Scatter {
    /// Fraction of rows inside the band, `None` when there are no rows.
    pub fn in_band_fraction(&self) -> Option<f64> {
        (!self.rows.is_empty())
            .then(|| self.rows.iter().filter(|r| r.in_band).count() as f64 / self.rows.len() as f64)
    }
}

/// Collects the recognizer-phase records of `epochs`. Records without a
/// surrogate value (cross-entropy tuning) are skipped.
pub fn export_scatter(
    logs: &[PhaseLogRecord],
    epochs: RangeInclusive<usize>,
    lambda: f64,
) -> Result<Scatter> {
    if epochs.is_empty() {
        return Err(feds_core::Error::Input(format!("empty epoch range {epochs:?}")).into());
    }
    if !(lambda > 0.0) {
        return Err(feds_core::Error::Input(format!("lambda must be positive, got {lambda}")).into());
    }
    let rows: Vec<ScatterRow> = logs
        .iter()
        .filter(|r| r.phase == Phase::Recognizer && epochs.contains(&r.epoch))
        .filter_map(|r| {
            r.e_hat.map(|e_hat| ScatterRow {
                epoch: r.epoch,
                iteration: r.iteration,
                sample_index: r.sample_index,
                e: r.e,
                e_hat,
                in_band: feds_core::trainer::gate_open(r.e, e_hat, lambda),
            })
        })
        .collect();
    if rows.is_empty() {
        return Err(feds_core::Error::Input(format!(
            "no recognizer-phase records with a surrogate value in epochs {epochs:?}"
        ))
        .into());
    }
    Ok(Scatter { lambda, epochs, rows })
}

/// Writes `#` metadata lines (lambda, band, epochs) followed by the rows.
pub fn write_scatter<W: Write>(mut out: W, scatter: &Scatter) -> Result<()> {
    writeln!(out, "# lambda={}", scatter.lambda)?;
    writeln!(out, "# band=e-lambda<e_hat<e+lambda")?;
    writeln!(out, "# epochs={}..={}", scatter.epochs.start(), scatter.epochs.end())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCATTER_HEADER)?;
    for r in &scatter.rows {
        w.write_record([
            r.epoch.to_string(),
            r.iteration.to_string(),
            r.sample_index.to_string(),
            r.e.to_string(),
            r.e_hat.to_string(),
            r.in_band.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scatter<R: Read>(mut input: R) -> Result<Scatter> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut lambda = None;
    let mut epochs = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let Some((key, value)) = line.trim_start_matches('#').trim().split_once('=') else {
            continue;
        };
        match key {
            "lambda" => lambda = value.parse::<f64>().ok(),
            "epochs" => {
                epochs = value
                    .split_once("..=")
                    .and_then(|(a, b)| Some(a.parse::<usize>().ok()?..=b.parse::<usize>().ok()?))
            }
            _ => {}
        }
    }
    let (Some(lambda), Some(epochs)) = (lambda, epochs) else {
        return Err(FormatError::malformed("scatter", "missing lambda or epochs metadata"));
    };
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut recs = rd.records();
    let header = recs
        .next()
        .ok_or_else(|| FormatError::malformed("scatter", "missing header"))??;
    check_header(&header, &SCATTER_HEADER, "scatter")?;
    let rows = recs
        .map(|rec| {
            let rec = rec?;
            Ok(ScatterRow {
                epoch: field(&rec, 0, "scatter")?,
                iteration: field(&rec, 1, "scatter")?,
                sample_index: field(&rec, 2, "scatter")?,
                e: field(&rec, 3, "scatter")?,
                e_hat: field(&rec, 4, "scatter")?,
                in_band: field(&rec, 5, "scatter")?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Scatter { lambda, epochs, rows })
}

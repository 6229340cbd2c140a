//! Metrics CSV and human-readable summaries.

use std::fmt::Write as _;
use std::io::{Read, Write};

use feds_core::text::SampleRow;
use feds_core::MetricsReport;

use crate::{FormatError, Result};

pub const METRICS_HEADER: [&str; 4] = ["sample_index", "gt", "pred", "ed"];

pub fn write_metrics<W: Write>(out: W, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for (i, r) in report.rows.iter().enumerate() {
        w.write_record([i.to_string(), r.gt.clone(), r.pred.clone(), r.ed.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the per-sample rows of a metrics CSV.
pub fn read_metrics<R: Read>(input: R) -> Result<Vec<SampleRow>> {
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.iter().ne(METRICS_HEADER) {
        return Err(FormatError::malformed("metrics", "unexpected header"));
    }
    rd.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let num = |col: usize| {
                rec[col]
                    .parse::<usize>()
                    .map_err(|_| FormatError::malformed("metrics", format!("row {i}: bad number {:?}", &rec[col])))
            };
            if num(0)? != i {
                return Err(FormatError::malformed("metrics", format!("row {i} out of order")));
            }
            Ok(SampleRow {
                gt: rec[1].to_owned(),
                pred: rec[2].to_owned(),
                ed: num(3)?,
            })
        })
        .collect()
}

/// Summary text; with a baseline it adds the baseline TED and the relative
/// TED improvement `(ted_base - ted) / ted_base`.
pub fn summary(report: &MetricsReport, baseline: Option<&MetricsReport>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "dataset: {}", report.dataset);
    let _ = writeln!(s, "samples: {}", report.n_samples);
    let _ = writeln!(s, "accuracy: {:.6}", report.accuracy);
    let _ = writeln!(s, "ned: {:.6}", report.ned);
    let _ = writeln!(s, "ted: {}", report.ted);
    if let Some(base) = baseline {
        let _ = writeln!(s, "baseline_accuracy: {:.6}", base.accuracy);
        let _ = writeln!(s, "baseline_ted: {}", base.ted);
        match report.relative_ted_improvement(base) {
            Some(r) => {
                let _ = writeln!(s, "relative_ted_improvement: {:+.2}%", 100.0 * r);
            }
            None => {
                let _ = writeln!(s, "relative_ted_improvement: undefined (baseline ted is 0)");
            }
        }
    }
    s
}

//! File formats, configuration and experiment drivers around `feds-core`.
//!
//! - [`checkpoint`]: the flat binary tensor format for network weights,
//! - [`dataset`]: PGM images plus `labels.tsv`,
//! - [`logs`]: training log and scatter CSVs,
//! - [`report`]: metrics CSV and text summaries,
//! - [`config`]: the TOML experiment configuration,
//! - [`commands`]: the implementations behind the `feds` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::tabs_in_doc_comments)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod logs;
pub mod report;

pub use feds_core as core;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error(transparent)]
    Core(#[from] feds_core::Error),
}

impl FormatError {
    pub(crate) fn malformed(what: &'static str, detail: impl Into<String>) -> Self {
        FormatError::Malformed {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

//! File formats, end-to-end pipeline and command-line tool on top of
//! `omniret-core`.
//!
//! - [`dataio`]: JSON-lines corpora, queries, judgments, runs and triples;
//!   the binary embedding store; trained-weight files and loss traces.
//! - [`pipeline`]: corpus embedding, batch search, evaluation settings and
//!   the fusion ablation.
//! - [`report`]: tables and JSON for evaluation results.
//! - [`manifest`]: provenance sidecars for every artifact.
//! - [`config`]: `key = value` configuration files.
//! - [`oracle`]: reference implementations behind `omniret selfcheck`.

pub mod config;
pub mod dataio;
pub mod error;
pub mod manifest;
pub mod oracle;
pub mod pipeline;
pub mod report;

pub use error::{AppError, Result};

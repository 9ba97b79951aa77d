//! FloodNet VQA pipeline: the IO, encoder and reporting side of the
//! fusion-head baseline built on [`floodvqa_core`].
//!
//! Stages, in pipeline order:
//!
//! - [`annotations`] loads FloodNet VQA question files; [`split_file`] pins an
//!   image-disjoint split to disk.
//! - [`encoders`] runs frozen backbones once and [`store`] caches the pooled
//!   vectors.
//! - [`training`] fits a fusion head on cached features; [`checkpoint`]
//!   persists it.
//! - [`evaluation`] scores heads per question type and renders comparison
//!   reports.
//! - [`cli`] wires the stages into the `floodvqa` binary.

pub mod annotations;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod split_file;
pub mod store;
pub mod training;

pub use error::{Error, Result};
pub use floodvqa_core as core;

/// Pipeline version recorded in training logs.
pub fn pipeline_version() -> String {
    format!("floodvqa {} ({})", env!("CARGO_PKG_VERSION"), env!("FLOODVQA_GIT_DESCRIBE"))
}

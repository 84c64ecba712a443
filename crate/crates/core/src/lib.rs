//! Continual-learning detector for synthetic media.
//!
//! * [`nn`]: dense ReLU classifier with exact gradients, momentum SGD and a
//!   cosine learning-rate schedule.
//! * [`continual`]: knowledge distillation, elastic weight consolidation and
//!   the sequential training driver.
//! * [`taskgen`]: synthetic generator-fingerprint tasks, preset sequences,
//!   grouping and PGM ingestion.
//! * [`harness`]: run settings, evaluation matrices, curves and reports.
//! * [`pipeline`]: registry, serving, drift monitoring and retraining.

pub mod checkpoint;
pub mod continual;
pub mod error;
pub mod harness;
pub mod nn;
pub mod pipeline;
pub mod taskgen;

pub use error::{Error, Result};

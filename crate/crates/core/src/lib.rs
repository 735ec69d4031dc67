//! wavevault — archival pipeline for bedside-monitor extract bundles.
//!
//! Converts day-partitioned CSV extract bundles into de-identified,
//! per-study waveform records with a queryable catalog. The crate is
//! organized as a pipeline:
//!
//! * [`extract`] — bundle verification and table parsing
//! * [`linkage`] — monitor-stream ↔ medical-record-number assignment
//! * [`segmentation`] — cutting linked streams into bounded studies
//! * [`signal_store`] — fixed-point waveform records on disk
//! * [`deid`] — deterministic de-identification
//! * [`catalog`] — day-partitioned query tables
//! * [`synthgen`] — seeded synthetic corpora with exact ground truth
//! * [`pipeline`] — idempotent day-by-day orchestration

pub mod catalog;
pub mod deid;
pub mod error;
pub mod extract;
pub mod hash;
pub mod linkage;
pub mod pipeline;
pub mod registry;
pub mod segmentation;
pub mod signal_store;
pub mod synthgen;
pub mod time;

pub use error::{Error, Result};

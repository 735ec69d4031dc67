//! Open on-disk schema for daily extract bundles.
//!
//! A bundle is one UTC calendar day of monitor data under
//! `extracts/YYYY-MM-DD/`: six CSV tables, an optional `counts.csv` with
//! declared row counts, and a `manifest.csv` whose sizes and SHA-256
//! digests are verified, never trusted.

mod bundle;
mod manifest;
mod tables;

pub use bundle::{parse_extract_day, validate_row_counts, CountReport, ExtractBundle, TableCount};
pub use manifest::{parse_manifest, verify_bundle, ManifestEntry, VerifiedBundle};
pub use tables::{
    AdtEvent, AdtEventKind, AlertRecord, AlertSeverity, DeviceLogRecord, EnumerationRecord,
    Metric, NumericRecord, WaveSampleRecord, ADT_EVENTS_HEADER, ALERTS_HEADER,
    DEVICE_LOGS_HEADER, ENUMERATIONS_HEADER, LIFETIME_ID_KEY, NUMERICS_HEADER,
    WAVE_SAMPLES_HEADER,
};

/// Table file names inside a bundle directory, in canonical order.
pub const TABLE_FILES: [&str; 6] = [
    "numerics.csv",
    "wave_samples.csv",
    "enumerations.csv",
    "alerts.csv",
    "device_logs.csv",
    "adt_events.csv",
];

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const COUNTS_FILE: &str = "counts.csv";

//! Crate-wide error type.

use thiserror::Error;

/// What a bundle integrity check found wrong with a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrityKind {
    Missing,
    Extra,
    SizeMismatch,
    ChecksumMismatch,
}

impl std::fmt::Display for IntegrityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            IntegrityKind::Missing => "missing",
            IntegrityKind::Extra => "extra",
            IntegrityKind::SizeMismatch => "size mismatch",
            IntegrityKind::ChecksumMismatch => "checksum mismatch",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("integrity failure: {kind} for {file}")]
    Integrity { file: String, kind: IntegrityKind },

    #[error("schema violation in {table} line {line}: {msg}")]
    SchemaViolation {
        table: String,
        line: u64,
        msg: String,
    },

    #[error("timestamp {timestamp} in {table} line {line} is outside day {day}")]
    OutOfDayTimestamp {
        table: String,
        line: u64,
        timestamp: String,
        day: String,
    },

    #[error("ambiguous bed label: {0}")]
    AmbiguousLabel(String),

    #[error("unknown wave symbol: {0}")]
    UnknownWaveSymbol(String),

    #[error("no finite samples to quantize")]
    NoFiniteSamples,

    #[error("overlapping sample blocks: {0}")]
    OverlappingBlocks(String),

    #[error("checksum mismatch in record {record}: header {expected}, computed {actual}")]
    ChecksumMismatch {
        record: String,
        expected: i16,
        actual: i16,
    },

    #[error("signal length mismatch in {record}: header implies {expected_bytes} bytes, file has {actual_bytes}")]
    RecordLength {
        record: String,
        expected_bytes: u64,
        actual_bytes: u64,
    },

    #[error("header parse error: {0}")]
    HeaderParse(String),

    #[error("de-identification map has no entry for {0}")]
    MapMissingEntry(String),

    #[error("day {day} cannot be published: {missing} studies are not packed")]
    PartialDay { day: String, missing: usize },

    #[error("partition for {0} is locked by another writer")]
    PartitionLocked(String),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("pipeline phase {phase} failed for {day}: {msg}")]
    PhaseFailed {
        phase: String,
        day: String,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Zip(#[from] zip::result::ZipError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

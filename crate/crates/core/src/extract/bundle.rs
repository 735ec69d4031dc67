//! Full-day bundle parsing and row-count reconciliation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::extract::manifest::VerifiedBundle;
use crate::extract::tables::{
    AdtEvent, AlertRecord, DeviceLogRecord, EnumerationRecord, NumericRecord, WaveSampleRecord,
};
use crate::extract::COUNTS_FILE;
use crate::time::{format_timestamp, Day};

/// All six tables of one extract day, parsed and validated.
#[derive(Debug, Clone, Default)]
pub struct ExtractBundle {
    pub day: Option<Day>,
    pub numerics: Vec<NumericRecord>,
    pub wave_samples: Vec<WaveSampleRecord>,
    pub enumerations: Vec<EnumerationRecord>,
    pub alerts: Vec<AlertRecord>,
    pub device_logs: Vec<DeviceLogRecord>,
    pub adt_events: Vec<AdtEvent>,
    /// Row counts declared in the optional `counts.csv` sidecar.
    pub declared_counts: Option<BTreeMap<String, u64>>,
}

fn read_rows(path: &Path, expected_header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let table = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("table")
        .to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != expected_header {
            return Err(Error::SchemaViolation {
                table,
                line: 1,
                msg: format!("unexpected header {got:?}"),
            });
        }
    }
    let mut rows = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        rows.push((idx as u64 + 2, row));
    }
    Ok(rows)
}

fn check_in_day(
    table: &str,
    line: u64,
    ts: chrono::DateTime<chrono::Utc>,
    day: Day,
) -> Result<()> {
    if !day.contains(ts) {
        return Err(Error::OutOfDayTimestamp {
            table: table.to_string(),
            line,
            timestamp: format_timestamp(ts),
            day: day.to_string(),
        });
    }
    Ok(())
}

/// Parses all tables of a verified bundle and enforces day-window and
/// cross-row invariants:
///
/// * every timestamp lies in `[day 00:00, next day 00:00)`;
/// * wave blocks also end by the day boundary (a block may touch it);
/// * device-log intervals lie within the day;
/// * ADT `event_id`s are unique within the day.
pub fn parse_extract_day(verified: &VerifiedBundle) -> Result<ExtractBundle> {
    let dir = &verified.dir;
    let day = verified.day;
    let mut bundle = ExtractBundle { day: Some(day), ..ExtractBundle::default() };

    for (line, row) in read_rows(&dir.join("numerics.csv"), &super::tables::NUMERICS_HEADER)? {
        let rec = NumericRecord::from_row(&row, line)?;
        check_in_day("numerics", line, rec.observed_at, day)?;
        bundle.numerics.push(rec);
    }

    for (line, row) in
        read_rows(&dir.join("wave_samples.csv"), &super::tables::WAVE_SAMPLES_HEADER)?
    {
        let rec = WaveSampleRecord::from_row(&row, line)?;
        check_in_day("wave_samples", line, rec.block_start, day)?;
        if rec.block_end() > day.end() {
            return Err(Error::OutOfDayTimestamp {
                table: "wave_samples".into(),
                line,
                timestamp: format_timestamp(rec.block_end()),
                day: day.to_string(),
            });
        }
        bundle.wave_samples.push(rec);
    }

    for (line, row) in
        read_rows(&dir.join("enumerations.csv"), &super::tables::ENUMERATIONS_HEADER)?
    {
        let rec = EnumerationRecord::from_row(&row, line)?;
        check_in_day("enumerations", line, rec.observed_at, day)?;
        bundle.enumerations.push(rec);
    }

    for (line, row) in read_rows(&dir.join("alerts.csv"), &super::tables::ALERTS_HEADER)? {
        let rec = AlertRecord::from_row(&row, line)?;
        check_in_day("alerts", line, rec.at, day)?;
        bundle.alerts.push(rec);
    }

    for (line, row) in read_rows(&dir.join("device_logs.csv"), &super::tables::DEVICE_LOGS_HEADER)?
    {
        let rec = DeviceLogRecord::from_row(&row, line)?;
        check_in_day("device_logs", line, rec.attach_at, day)?;
        if rec.detach_at > day.end() {
            return Err(Error::OutOfDayTimestamp {
                table: "device_logs".into(),
                line,
                timestamp: format_timestamp(rec.detach_at),
                day: day.to_string(),
            });
        }
        bundle.device_logs.push(rec);
    }

    let mut seen_event_ids = BTreeSet::new();
    for (line, row) in read_rows(&dir.join("adt_events.csv"), &super::tables::ADT_EVENTS_HEADER)? {
        let rec = AdtEvent::from_row(&row, line)?;
        check_in_day("adt_events", line, rec.at, day)?;
        if !seen_event_ids.insert(rec.event_id) {
            return Err(Error::SchemaViolation {
                table: "adt_events".into(),
                line,
                msg: format!("duplicate event_id {}", rec.event_id),
            });
        }
        bundle.adt_events.push(rec);
    }

    let counts_path = dir.join(COUNTS_FILE);
    if counts_path.is_file() {
        bundle.declared_counts = Some(parse_counts(&counts_path)?);
    }

    Ok(bundle)
}

fn parse_counts(path: &Path) -> Result<BTreeMap<String, u64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != ["table", "rows"] {
            return Err(Error::SchemaViolation {
                table: "counts".into(),
                line: 1,
                msg: format!("unexpected header {got:?}"),
            });
        }
    }
    let mut counts = BTreeMap::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        let line = idx as u64 + 2;
        if row.len() != 2 {
            return Err(Error::SchemaViolation {
                table: "counts".into(),
                line,
                msg: format!("expected 2 columns, got {}", row.len()),
            });
        }
        let rows: u64 = row[1].parse().map_err(|_| Error::SchemaViolation {
            table: "counts".into(),
            line,
            msg: format!("bad row count {:?}", &row[1]),
        })?;
        counts.insert(row[0].to_string(), rows);
    }
    Ok(counts)
}

/// Reconciliation of parsed row counts against the declared sidecar.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct TableCount {
    pub table: String,
    pub declared: Option<u64>,
    pub actual: u64,
    /// `None` when no declaration exists for the table.
    pub matches: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct CountReport {
    pub per_table: Vec<TableCount>,
    /// `Some(true)` when every declared count matches, `Some(false)` when
    /// any mismatches, `None` when no counts were declared at all.
    pub ok: Option<bool>,
}

pub fn validate_row_counts(bundle: &ExtractBundle) -> CountReport {
    let actuals: [(&str, u64); 6] = [
        ("numerics", bundle.numerics.len() as u64),
        ("wave_samples", bundle.wave_samples.len() as u64),
        ("enumerations", bundle.enumerations.len() as u64),
        ("alerts", bundle.alerts.len() as u64),
        ("device_logs", bundle.device_logs.len() as u64),
        ("adt_events", bundle.adt_events.len() as u64),
    ];
    let mut per_table = Vec::with_capacity(6);
    let mut any_declared = false;
    let mut all_match = true;
    for (table, actual) in actuals {
        let declared = bundle.declared_counts.as_ref().and_then(|m| m.get(table)).copied();
        let matches = declared.map(|d| d == actual);
        if let Some(m) = matches {
            any_declared = true;
            all_match &= m;
        }
        per_table.push(TableCount { table: table.to_string(), declared, actual, matches });
    }
    CountReport { per_table, ok: any_declared.then_some(all_match) }
}

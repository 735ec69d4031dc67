//! Row types and CSV layouts for the six bundle tables.
//!
//! Column orders here are the wire format; synthetic generation and parsing
//! share these definitions so they cannot drift apart.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry;
use crate::time::{format_timestamp, parse_timestamp};

pub const NUMERICS_HEADER: [&str; 7] = [
    "monitor_patient_id",
    "bed_label",
    "observed_at",
    "metric",
    "value",
    "unit",
    "lifetime_id",
];
pub const WAVE_SAMPLES_HEADER: [&str; 6] = [
    "monitor_patient_id",
    "bed_label",
    "wave",
    "block_start",
    "sample_rate",
    "samples",
];
pub const ENUMERATIONS_HEADER: [&str; 5] =
    ["monitor_patient_id", "bed_label", "observed_at", "key", "value"];
pub const ALERTS_HEADER: [&str; 5] = ["monitor_patient_id", "bed_label", "at", "severity", "text"];
pub const DEVICE_LOGS_HEADER: [&str; 4] = ["encounter_id", "bed_label", "attach_at", "detach_at"];
pub const ADT_EVENTS_HEADER: [&str; 7] =
    ["event_id", "patient_name", "mrn", "visit_id", "event", "bed", "at"];

fn violation(table: &str, line: u64, msg: impl Into<String>) -> Error {
    Error::SchemaViolation { table: table.to_string(), line, msg: msg.into() }
}

/// Vital-sign kind for 1 Hz numerics.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Hr,
    SpO2,
    BpSys,
    BpDia,
    Rr,
    Other(String),
}

impl Metric {
    pub fn as_str(&self) -> &str {
        match self {
            Metric::Hr => "HR",
            Metric::SpO2 => "SpO2",
            Metric::BpSys => "BP_SYS",
            Metric::BpDia => "BP_DIA",
            Metric::Rr => "RR",
            Metric::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Metric {
        match s {
            "HR" => Metric::Hr,
            "SpO2" => Metric::SpO2,
            "BP_SYS" => Metric::BpSys,
            "BP_DIA" => Metric::BpDia,
            "RR" => Metric::Rr,
            other => Metric::Other(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericRecord {
    pub monitor_patient_id: String,
    pub bed_label: String,
    pub observed_at: DateTime<Utc>,
    pub metric: Metric,
    pub value: f64,
    pub unit: String,
    /// MRN entered at the monitor, when the stream was registered.
    pub lifetime_id: Option<String>,
}

impl NumericRecord {
    pub fn from_row(row: &csv::StringRecord, line: u64) -> Result<NumericRecord> {
        let t = "numerics";
        if row.len() != NUMERICS_HEADER.len() {
            return Err(violation(t, line, format!("expected 7 columns, got {}", row.len())));
        }
        let observed_at = parse_timestamp(&row[2])
            .map_err(|e| violation(t, line, e.to_string()))?;
        if observed_at.timestamp_subsec_nanos() != 0 {
            return Err(violation(t, line, "observed_at must be whole-second"));
        }
        let value: f64 = row[4]
            .parse()
            .map_err(|_| violation(t, line, format!("bad value {:?}", &row[4])))?;
        let lifetime_id = (!row[6].is_empty()).then(|| row[6].to_string());
        Ok(NumericRecord {
            monitor_patient_id: row[0].to_string(),
            bed_label: row[1].to_string(),
            observed_at,
            metric: Metric::parse(&row[3]),
            value,
            unit: row[5].to_string(),
            lifetime_id,
        })
    }

    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.monitor_patient_id.clone(),
            self.bed_label.clone(),
            format_timestamp(self.observed_at),
            self.metric.as_str().to_string(),
            trim_decimal(self.value),
            self.unit.clone(),
            self.lifetime_id.clone().unwrap_or_default(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveSampleRecord {
    pub monitor_patient_id: String,
    pub bed_label: String,
    /// Registry symbol, e.g. `II`, `Pleth`, `Resp`.
    pub wave: String,
    pub block_start: DateTime<Utc>,
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl WaveSampleRecord {
    pub fn from_row(row: &csv::StringRecord, line: u64) -> Result<WaveSampleRecord> {
        let t = "wave_samples";
        if row.len() != WAVE_SAMPLES_HEADER.len() {
            return Err(violation(t, line, format!("expected 6 columns, got {}", row.len())));
        }
        let spec = registry::wave_spec(&row[2]).map_err(|e| violation(t, line, e.to_string()))?;
        let block_start =
            parse_timestamp(&row[3]).map_err(|e| violation(t, line, e.to_string()))?;
        let sample_rate: u32 = row[4]
            .parse()
            .map_err(|_| violation(t, line, format!("bad sample_rate {:?}", &row[4])))?;
        if sample_rate != spec.rate {
            return Err(violation(
                t,
                line,
                format!("rate {sample_rate} does not match registry rate {} for {}", spec.rate, spec.symbol),
            ));
        }
        let mut samples = Vec::new();
        for part in row[5].split(';') {
            if part.is_empty() {
                continue;
            }
            samples.push(
                part.parse::<f64>()
                    .map_err(|_| violation(t, line, format!("bad sample {part:?}")))?,
            );
        }
        if samples.is_empty() {
            return Err(violation(t, line, "empty sample payload"));
        }
        Ok(WaveSampleRecord {
            monitor_patient_id: row[0].to_string(),
            bed_label: row[1].to_string(),
            wave: row[2].to_string(),
            block_start,
            sample_rate,
            samples,
        })
    }

    /// Hand-formatted CSV line: the sample payload is one quoted field of
    /// semicolon-separated decimals.
    pub fn to_csv_line(&self) -> String {
        let mut payload = String::with_capacity(self.samples.len() * 7);
        for (i, s) in self.samples.iter().enumerate() {
            if i > 0 {
                payload.push(';');
            }
            payload.push_str(&format!("{s:.3}"));
        }
        format!(
            "{},{},{},{},{},\"{}\"",
            self.monitor_patient_id,
            self.bed_label,
            self.wave,
            format_timestamp(self.block_start),
            self.sample_rate,
            payload
        )
    }

    /// Exclusive end of the block on the time axis.
    pub fn block_end(&self) -> DateTime<Utc> {
        self.block_start
            + chrono::Duration::microseconds(
                (self.samples.len() as i64 * 1_000_000) / self.sample_rate as i64,
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlertSeverity {
    Red,
    Yellow,
    Technical,
}

impl AlertSeverity {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlertSeverity::Red => "red",
            AlertSeverity::Yellow => "yellow",
            AlertSeverity::Technical => "technical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub monitor_patient_id: String,
    pub bed_label: String,
    pub at: DateTime<Utc>,
    pub severity: AlertSeverity,
    pub text: String,
}

impl AlertRecord {
    pub fn from_row(row: &csv::StringRecord, line: u64) -> Result<AlertRecord> {
        let t = "alerts";
        if row.len() != ALERTS_HEADER.len() {
            return Err(violation(t, line, format!("expected 5 columns, got {}", row.len())));
        }
        let at = parse_timestamp(&row[2]).map_err(|e| violation(t, line, e.to_string()))?;
        let severity = match &row[3] {
            "red" => AlertSeverity::Red,
            "yellow" => AlertSeverity::Yellow,
            "technical" => AlertSeverity::Technical,
            other => return Err(violation(t, line, format!("bad severity {other:?}"))),
        };
        if row[4].is_empty() {
            return Err(violation(t, line, "alert text must be non-empty"));
        }
        Ok(AlertRecord {
            monitor_patient_id: row[0].to_string(),
            bed_label: row[1].to_string(),
            at,
            severity,
            text: row[4].to_string(),
        })
    }

    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.monitor_patient_id.clone(),
            self.bed_label.clone(),
            format_timestamp(self.at),
            self.severity.as_str().to_string(),
            self.text.clone(),
        ]
    }
}

/// Discrete device-side observation (rhythm labels, registration events).
/// Rows with key `LifeTimeId` carry the monitor-entered MRN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationRecord {
    pub monitor_patient_id: String,
    pub bed_label: String,
    pub observed_at: DateTime<Utc>,
    pub key: String,
    pub value: String,
}

pub const LIFETIME_ID_KEY: &str = "LifeTimeId";

impl EnumerationRecord {
    pub fn from_row(row: &csv::StringRecord, line: u64) -> Result<EnumerationRecord> {
        let t = "enumerations";
        if row.len() != ENUMERATIONS_HEADER.len() {
            return Err(violation(t, line, format!("expected 5 columns, got {}", row.len())));
        }
        let observed_at =
            parse_timestamp(&row[2]).map_err(|e| violation(t, line, e.to_string()))?;
        Ok(EnumerationRecord {
            monitor_patient_id: row[0].to_string(),
            bed_label: row[1].to_string(),
            observed_at,
            key: row[3].to_string(),
            value: row[4].to_string(),
        })
    }

    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.monitor_patient_id.clone(),
            self.bed_label.clone(),
            format_timestamp(self.observed_at),
            self.key.clone(),
            self.value.clone(),
        ]
    }
}

/// Monitor-side record of which encounter was attached to a bed and when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceLogRecord {
    pub encounter_id: String,
    pub bed_label: String,
    pub attach_at: DateTime<Utc>,
    pub detach_at: DateTime<Utc>,
}

impl DeviceLogRecord {
    pub fn from_row(row: &csv::StringRecord, line: u64) -> Result<DeviceLogRecord> {
        let t = "device_logs";
        if row.len() != DEVICE_LOGS_HEADER.len() {
            return Err(violation(t, line, format!("expected 4 columns, got {}", row.len())));
        }
        let attach_at = parse_timestamp(&row[2]).map_err(|e| violation(t, line, e.to_string()))?;
        let detach_at = parse_timestamp(&row[3]).map_err(|e| violation(t, line, e.to_string()))?;
        if attach_at >= detach_at {
            return Err(violation(t, line, "attach_at must precede detach_at"));
        }
        Ok(DeviceLogRecord {
            encounter_id: row[0].to_string(),
            bed_label: row[1].to_string(),
            attach_at,
            detach_at,
        })
    }

    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.encounter_id.clone(),
            self.bed_label.clone(),
            format_timestamp(self.attach_at),
            format_timestamp(self.detach_at),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdtEventKind {
    Admission,
    Discharge,
    TransferIn,
    TransferOut,
}

impl AdtEventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AdtEventKind::Admission => "Admission",
            AdtEventKind::Discharge => "Discharge",
            AdtEventKind::TransferIn => "TransferIn",
            AdtEventKind::TransferOut => "TransferOut",
        }
    }

    pub fn parse(s: &str) -> Option<AdtEventKind> {
        match s {
            "Admission" => Some(AdtEventKind::Admission),
            "Discharge" => Some(AdtEventKind::Discharge),
            "TransferIn" | "Transfer In" => Some(AdtEventKind::TransferIn),
            "TransferOut" | "Transfer Out" => Some(AdtEventKind::TransferOut),
            _ => None,
        }
    }

    /// True for events that open a stay.
    pub fn is_inbound(&self) -> bool {
        matches!(self, AdtEventKind::Admission | AdtEventKind::TransferIn)
    }
}

/// EMR-side bed movement event. `bed` is an EMR bed label, not a
/// device-side one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdtEvent {
    pub event_id: u64,
    pub patient_name: String,
    pub mrn: String,
    pub visit_id: String,
    pub event: AdtEventKind,
    pub bed: String,
    pub at: DateTime<Utc>,
}

impl AdtEvent {
    pub fn from_row(row: &csv::StringRecord, line: u64) -> Result<AdtEvent> {
        let t = "adt_events";
        if row.len() != ADT_EVENTS_HEADER.len() {
            return Err(violation(t, line, format!("expected 7 columns, got {}", row.len())));
        }
        let event_id: u64 = row[0]
            .parse()
            .map_err(|_| violation(t, line, format!("bad event_id {:?}", &row[0])))?;
        let event = AdtEventKind::parse(&row[4])
            .ok_or_else(|| violation(t, line, format!("bad event kind {:?}", &row[4])))?;
        let at = parse_timestamp(&row[6]).map_err(|e| violation(t, line, e.to_string()))?;
        Ok(AdtEvent {
            event_id,
            patient_name: row[1].to_string(),
            mrn: row[2].to_string(),
            visit_id: row[3].to_string(),
            event,
            bed: row[5].to_string(),
            at,
        })
    }

    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.event_id.to_string(),
            self.patient_name.clone(),
            self.mrn.clone(),
            self.visit_id.clone(),
            self.event.as_str().to_string(),
            self.bed.clone(),
            format_timestamp(self.at),
        ]
    }
}

/// Formats a numeric value without trailing zero noise (1 Hz vitals carry
/// at most one decimal place in practice).
fn trim_decimal(v: f64) -> String {
    if v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

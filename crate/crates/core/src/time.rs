//! UTC timestamps, calendar days, and half-open time ranges.
//!
//! Everything in the archive is UTC; "midnight" always means UTC midnight.
//! Ranges are half-open `[start, end)` so that records at a boundary belong
//! to the later interval and nothing is counted twice.

use chrono::{DateTime, Duration, NaiveDate, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Timestamp = DateTime<Utc>;

/// Parses an ISO-8601 timestamp and normalizes it to UTC.
pub fn parse_timestamp(s: &str) -> Result<Timestamp> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::HeaderParse(format!("bad timestamp {s:?}: {e}")))
}

/// Formats a timestamp as ISO-8601 with a `Z` suffix. Sub-second digits are
/// emitted only when present, so the common whole-second case stays compact.
pub fn format_timestamp(t: Timestamp) -> String {
    if t.timestamp_subsec_nanos() == 0 {
        t.to_rfc3339_opts(SecondsFormat::Secs, true)
    } else {
        t.to_rfc3339_opts(SecondsFormat::Micros, true)
    }
}

/// Compact stamp used in study identifiers: `20210301T081200Z`.
pub fn compact_stamp(t: Timestamp) -> String {
    t.format("%Y%m%dT%H%M%SZ").to_string()
}

/// One UTC calendar day, the pipeline's unit of work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Day(pub NaiveDate);

impl Day {
    pub fn parse(s: &str) -> Result<Day> {
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(Day)
            .map_err(|e| Error::ConfigInvalid(format!("bad day {s:?}: {e}")))
    }

    /// Midnight at the start of the day.
    pub fn start(&self) -> Timestamp {
        Utc.from_utc_datetime(&self.0.and_hms_opt(0, 0, 0).unwrap())
    }

    /// Midnight at the start of the next day (exclusive bound).
    pub fn end(&self) -> Timestamp {
        Day(self.0 + Duration::days(1)).start()
    }

    pub fn window(&self) -> TimeRange {
        TimeRange::new(self.start(), self.end())
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start() && t < self.end()
    }

    pub fn succ(&self) -> Day {
        Day(self.0 + Duration::days(1))
    }
}

impl std::fmt::Display for Day {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%d"))
    }
}

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeRange {
    pub fn new(start: Timestamp, end: Timestamp) -> TimeRange {
        debug_assert!(start <= end, "inverted range {start} .. {end}");
        TimeRange { start, end }
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start && t < self.end
    }

    pub fn duration_seconds(&self) -> f64 {
        (self.end - self.start).num_microseconds().unwrap_or(0) as f64 / 1e6
    }

    pub fn intersect(&self, other: &TimeRange) -> Option<TimeRange> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start < end).then_some(TimeRange { start, end })
    }

    pub fn overlap_seconds(&self, other: &TimeRange) -> f64 {
        self.intersect(other)
            .map(|r| r.duration_seconds())
            .unwrap_or(0.0)
    }

    /// True when `other` lies entirely inside this range.
    pub fn covers(&self, other: &TimeRange) -> bool {
        self.start <= other.start && self.end >= other.end
    }
}

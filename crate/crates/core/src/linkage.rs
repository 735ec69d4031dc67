//! Stream-to-MRN linkage.
//!
//! Monitor data arrives keyed by an ephemeral monitor patient id; only some
//! streams carry the medical record number (MRN) that was typed into the
//! monitor. This module recovers MRNs for the rest in two passes:
//!
//! 1. **Device logs** — monitor-side attach/detach intervals resolved to an
//!    MRN through the encounter id.
//! 2. **Sanitized ADT stays** — EMR-side admit/discharge/transfer events
//!    collapsed into per-bed stay intervals.
//!
//! Both passes compare time ranges on the same *normalized* bed label.
//! Streams matched by neither pass are kept, unlinked.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{AdtEvent, ExtractBundle, LIFETIME_ID_KEY};
use crate::time::{TimeRange, Timestamp};

// ---------------------------------------------------------------------------
// Bed label normalization
// ---------------------------------------------------------------------------

/// NATO phonetic alphabet, with common alternate spellings.
const NATO_WORDS: &[(&str, char)] = &[
    ("ALPHA", 'A'),
    ("ALFA", 'A'),
    ("BRAVO", 'B'),
    ("CHARLIE", 'C'),
    ("DELTA", 'D'),
    ("ECHO", 'E'),
    ("FOXTROT", 'F'),
    ("GOLF", 'G'),
    ("HOTEL", 'H'),
    ("INDIA", 'I'),
    ("JULIETT", 'J'),
    ("JULIET", 'J'),
    ("KILO", 'K'),
    ("LIMA", 'L'),
    ("MIKE", 'M'),
    ("NOVEMBER", 'N'),
    ("OSCAR", 'O'),
    ("PAPA", 'P'),
    ("QUEBEC", 'Q'),
    ("ROMEO", 'R'),
    ("SIERRA", 'S'),
    ("TANGO", 'T'),
    ("UNIFORM", 'U'),
    ("VICTOR", 'V'),
    ("WHISKEY", 'W'),
    ("WHISKY", 'W'),
    ("XRAY", 'X'),
    ("X-RAY", 'X'),
    ("YANKEE", 'Y'),
    ("ZULU", 'Z'),
];

/// Maps device-side bed labels to EMR bed labels.
///
/// Explicit overrides win; otherwise labels of the form
/// `<digits><NATO word>` are rewritten to `<letter><zero-padded number>`
/// (`13ALPHA` → `A13`). Unrecognized labels pass through unchanged in
/// lenient mode and fail in strict mode.
#[derive(Debug, Clone, Default)]
pub struct BedLabelMap {
    pub overrides: BTreeMap<String, String>,
    pub strict: bool,
}

impl BedLabelMap {
    pub fn new(overrides: BTreeMap<String, String>, strict: bool) -> BedLabelMap {
        BedLabelMap { overrides, strict }
    }

    /// Loads a two-column `device_label,emr_label` CSV of overrides.
    pub fn from_csv(path: &Path, strict: bool) -> Result<BedLabelMap> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        {
            let headers = reader.headers()?;
            let got: Vec<&str> = headers.iter().collect();
            if got != ["device_label", "emr_label"] {
                return Err(Error::ConfigInvalid(format!(
                    "bed map header must be device_label,emr_label, got {got:?}"
                )));
            }
        }
        let mut overrides = BTreeMap::new();
        for row in reader.records() {
            let row = row?;
            if row.len() != 2 || row[0].is_empty() || row[1].is_empty() {
                return Err(Error::ConfigInvalid("bed map rows must have two non-empty fields".into()));
            }
            overrides.insert(row[0].to_string(), row[1].to_string());
        }
        Ok(BedLabelMap { overrides, strict })
    }

    pub fn normalize(&self, device_label: &str) -> Result<String> {
        normalize_bed_label(device_label, self)
    }
}

fn split_nato(label: &str) -> Option<(u32, char)> {
    let digits_end = label.find(|c: char| !c.is_ascii_digit())?;
    if digits_end == 0 {
        return None;
    }
    let (digits, word) = label.split_at(digits_end);
    let number: u32 = digits.parse().ok()?;
    let upper = word.to_ascii_uppercase();
    let letter = NATO_WORDS.iter().find(|(w, _)| *w == upper)?.1;
    Some((number, letter))
}

/// Normalizes a device-side bed label to its EMR form.
pub fn normalize_bed_label(device_label: &str, map: &BedLabelMap) -> Result<String> {
    if device_label.is_empty() {
        return Err(Error::AmbiguousLabel("empty bed label".into()));
    }
    if let Some(mapped) = map.overrides.get(device_label) {
        return Ok(mapped.clone());
    }
    if let Some((number, letter)) = split_nato(device_label) {
        return Ok(format!("{letter}{number:02}"));
    }
    if map.strict {
        return Err(Error::AmbiguousLabel(device_label.to_string()));
    }
    Ok(device_label.to_string())
}

// ---------------------------------------------------------------------------
// ADT sanitization
// ---------------------------------------------------------------------------

/// One contiguous occupancy of a bed by a patient visit, after noise removal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stay {
    pub mrn: String,
    pub visit_id: String,
    /// EMR bed label, exactly as in the ADT feed.
    pub bed: String,
    pub range: TimeRange,
    /// True when the closing event was missing and the stay was closed at
    /// the supplied boundary instead.
    pub open_ended: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizeReport {
    pub stays: Vec<Stay>,
    /// Exact duplicate events removed (all fields equal except event id).
    pub duplicates_removed: usize,
    /// In/out pairs at the same instant, i.e. zero-length stays, dropped.
    pub zero_length_dropped: usize,
    /// Discharge-then-readmit joins folded into longer stays.
    pub chains_merged: usize,
    /// Inbound events never closed; closed at the boundary when one was
    /// given, otherwise dropped.
    pub dangling_inbound: usize,
    /// Outbound events with no open stay; ignored.
    pub dangling_outbound: usize,
    /// Inbound events arriving while a stay was already open; ignored.
    pub double_inbound: usize,
}

/// Collapses raw ADT events into per-(mrn, visit, bed) stay intervals.
///
/// Noise handling, in order: exact duplicates are removed; events are
/// paired chronologically per (mrn, visit, bed) walking in recorded order,
/// so an in/out pair at the same instant forms a zero-length stay, which is
/// dropped; back-to-back discharge/readmit chains on the same bed are
/// merged, keeping the first admit and the last discharge. An inbound
/// event with no closing event is closed at `close_at` and flagged
/// `open_ended`; with no boundary supplied it is dropped.
pub fn sanitize_adt(events: &[AdtEvent], close_at: Option<Timestamp>) -> SanitizeReport {
    let mut report = SanitizeReport::default();

    // Exact-duplicate removal; the key deliberately excludes event_id.
    let mut seen: BTreeSet<(String, String, String, String, String, Timestamp)> = BTreeSet::new();
    let mut events: Vec<&AdtEvent> = events
        .iter()
        .filter(|e| {
            let key = (
                e.patient_name.clone(),
                e.mrn.clone(),
                e.visit_id.clone(),
                e.event.as_str().to_string(),
                e.bed.clone(),
                e.at,
            );
            let fresh = seen.insert(key);
            if !fresh {
                report.duplicates_removed += 1;
            }
            fresh
        })
        .collect();

    // Recorded order disambiguates simultaneous events: an in,out pair at
    // one instant is a zero-length stay; an out,in pair is a zero-gap
    // readmit. Both patterns appear in real feeds.
    events.sort_by_key(|e| (e.at, e.event_id));

    let mut groups: BTreeMap<(String, String, String), Vec<&AdtEvent>> = BTreeMap::new();
    for e in events {
        groups
            .entry((e.mrn.clone(), e.visit_id.clone(), e.bed.clone()))
            .or_default()
            .push(e);
    }

    let mut stays = Vec::new();
    for ((mrn, visit_id, bed), group) in groups {
        let mut raw: Vec<TimeRange> = Vec::new();
        let mut open: Option<Timestamp> = None;
        let mut open_ended_tail = false;
        for e in group {
            if e.event.is_inbound() {
                if open.is_some() {
                    report.double_inbound += 1;
                } else {
                    open = Some(e.at);
                }
            } else if let Some(start) = open.take() {
                raw.push(TimeRange::new(start, e.at));
            } else {
                report.dangling_outbound += 1;
            }
        }
        if let Some(start) = open {
            report.dangling_inbound += 1;
            if let Some(bound) = close_at {
                if bound > start {
                    raw.push(TimeRange::new(start, bound));
                    open_ended_tail = true;
                }
            }
        }

        let before = raw.len();
        raw.retain(|r| !r.is_empty());
        report.zero_length_dropped += before - raw.len();

        // Merge zero-gap discharge/readmit chains.
        raw.sort_by_key(|r| (r.start, r.end));
        let mut merged: Vec<TimeRange> = Vec::new();
        for r in raw {
            match merged.last_mut() {
                Some(prev) if prev.end == r.start => {
                    prev.end = r.end;
                    report.chains_merged += 1;
                }
                _ => merged.push(r),
            }
        }

        let last_idx = merged.len().saturating_sub(1);
        for (i, range) in merged.into_iter().enumerate() {
            stays.push(Stay {
                mrn: mrn.clone(),
                visit_id: visit_id.clone(),
                bed: bed.clone(),
                range,
                open_ended: open_ended_tail && i == last_idx,
            });
        }
    }

    stays.sort_by(|a, b| {
        (a.range.start, &a.mrn, &a.visit_id, &a.bed).cmp(&(b.range.start, &b.mrn, &b.visit_id, &b.bed))
    });
    report.stays = stays;
    report
}

// ---------------------------------------------------------------------------
// Stream ranges
// ---------------------------------------------------------------------------

/// Continuous presence of one monitor patient id on one bed: the collapsed
/// time range of its observations, plus the monitor-entered MRN if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRange {
    pub monitor_patient_id: String,
    /// Device-side bed label, exactly as observed.
    pub bed_label: String,
    pub range: TimeRange,
    pub lifetime_id: Option<String>,
}

/// Collapses per-row observations into per-(id, bed) time ranges.
///
/// Observations are walked in time order per monitor patient id; a bed
/// change closes the current range and opens a new one, so the same bed
/// seen again later yields a separate range. Numeric observations occupy
/// `[t, t+1s)`; wave blocks occupy their sampled extent. Only numerics and
/// wave samples define presence — enumerations and alerts attach to
/// whatever range contains them but never extend one.
pub fn collapse_stream_ranges(bundle: &ExtractBundle) -> Vec<StreamRange> {
    // (start, end, bed) observation points per monitor patient id.
    let mut obs: BTreeMap<&str, Vec<(Timestamp, Timestamp, &str)>> = BTreeMap::new();
    for n in &bundle.numerics {
        obs.entry(&n.monitor_patient_id).or_default().push((
            n.observed_at,
            n.observed_at + chrono::Duration::seconds(1),
            &n.bed_label,
        ));
    }
    for w in &bundle.wave_samples {
        obs.entry(&w.monitor_patient_id).or_default().push((
            w.block_start,
            w.block_end(),
            &w.bed_label,
        ));
    }

    let mut ranges = Vec::new();
    for (mpid, mut points) in obs {
        points.sort_by_key(|(s, e, bed)| (*s, *e, bed.to_string()));
        let mut current: Option<(TimeRange, &str)> = None;
        for (start, end, bed) in points {
            match current.as_mut() {
                Some((range, cur_bed)) if *cur_bed == bed => {
                    range.end = range.end.max(end);
                }
                Some((range, cur_bed)) => {
                    ranges.push(StreamRange {
                        monitor_patient_id: mpid.to_string(),
                        bed_label: cur_bed.to_string(),
                        range: *range,
                        lifetime_id: None,
                    });
                    current = Some((TimeRange::new(start, end), bed));
                }
                None => current = Some((TimeRange::new(start, end), bed)),
            }
        }
        if let Some((range, bed)) = current {
            ranges.push(StreamRange {
                monitor_patient_id: mpid.to_string(),
                bed_label: bed.to_string(),
                range,
                lifetime_id: None,
            });
        }
    }

    // Attach monitor-entered MRNs: from numerics rows and from LifeTimeId
    // enumeration rows, earliest observation wins.
    let mut lifetime_claims: BTreeMap<usize, (Timestamp, String)> = BTreeMap::new();
    let claim = |ranges: &[StreamRange],
                     claims: &mut BTreeMap<usize, (Timestamp, String)>,
                     mpid: &str,
                     bed: &str,
                     at: Timestamp,
                     value: &str| {
        if value.is_empty() {
            return;
        }
        for (i, r) in ranges.iter().enumerate() {
            if r.monitor_patient_id == mpid && r.bed_label == bed && r.range.contains(at) {
                match claims.get(&i) {
                    Some((t, _)) if *t <= at => {}
                    _ => {
                        claims.insert(i, (at, value.to_string()));
                    }
                }
                break;
            }
        }
    };
    for n in &bundle.numerics {
        if let Some(id) = &n.lifetime_id {
            claim(&ranges, &mut lifetime_claims, &n.monitor_patient_id, &n.bed_label, n.observed_at, id);
        }
    }
    for e in &bundle.enumerations {
        if e.key == LIFETIME_ID_KEY {
            claim(&ranges, &mut lifetime_claims, &e.monitor_patient_id, &e.bed_label, e.observed_at, &e.value);
        }
    }
    for (i, (_, id)) in lifetime_claims {
        ranges[i].lifetime_id = Some(id);
    }

    ranges.sort_by(|a, b| {
        (a.range.start, &a.monitor_patient_id, &a.bed_label)
            .cmp(&(b.range.start, &b.monitor_patient_id, &b.bed_label))
    });
    ranges
}

// ---------------------------------------------------------------------------
// Assignment
// ---------------------------------------------------------------------------

/// How a segment's MRN was determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMethod {
    LifetimeId,
    DeviceLog,
    AdtOverlap,
    Unmatched,
}

impl LinkMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            LinkMethod::LifetimeId => "lifetime_id",
            LinkMethod::DeviceLog => "device_log",
            LinkMethod::AdtOverlap => "adt_overlap",
            LinkMethod::Unmatched => "unmatched",
        }
    }
}

/// A maximal sub-range of a stream with one MRN decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub range: TimeRange,
    pub mrn: Option<String>,
    pub method: LinkMethod,
    /// Total overlap between the winning evidence interval and the stream,
    /// in seconds. Zero for unmatched segments.
    pub overlap_seconds: f64,
}

/// A stream with its per-segment MRN assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedStream {
    pub monitor_patient_id: String,
    pub bed_label: String,
    pub normalized_bed: String,
    pub range: TimeRange,
    pub lifetime_id: Option<String>,
    pub segments: Vec<Segment>,
    /// Evidence intervals consulted for this stream (device logs in pass
    /// 1, or stays in pass 2); zero for lifetime-id and evidence-free
    /// streams.
    pub candidates_considered: usize,
}

impl LinkedStream {
    pub fn is_assigned(&self) -> bool {
        self.segments.iter().any(|s| s.mrn.is_some())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkageReport {
    pub total_streams: usize,
    pub total_streams_missing_id: usize,
    /// Missing-id streams that received at least one MRN segment.
    pub assigned: usize,
    /// `assigned / total_streams_missing_id`; 1.0 when nothing was missing.
    pub coverage_fraction: f64,
    /// Segment counts by method name.
    pub per_method: BTreeMap<String, usize>,
    /// Device-log rows whose encounter id appears in no ADT event that day.
    pub unresolved_device_logs: usize,
    /// Encounter ids mapping to more than one MRN in the day's ADT.
    pub visit_mrn_conflicts: usize,
}

/// Everything the linkage stage produces for one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayLinkage {
    pub streams: Vec<LinkedStream>,
    pub report: LinkageReport,
    pub sanitize: SanitizeReport,
}

#[derive(Debug, Clone)]
struct Candidate {
    mrn: String,
    /// Evidence interval clipped to the stream range.
    clipped: TimeRange,
}

/// Cuts `range` at every candidate boundary and picks the best covering
/// candidate per piece: largest total overlap with the stream, then
/// earliest interval start, then lexicographically smallest MRN.
fn assign_segments(range: TimeRange, candidates: &[Candidate], method: LinkMethod) -> Vec<Segment> {
    let mut bounds: BTreeSet<Timestamp> = BTreeSet::new();
    bounds.insert(range.start);
    bounds.insert(range.end);
    for c in candidates {
        bounds.insert(c.clipped.start);
        bounds.insert(c.clipped.end);
    }
    let bounds: Vec<Timestamp> = bounds.into_iter().collect();

    let mut segments: Vec<Segment> = Vec::new();
    for pair in bounds.windows(2) {
        let piece = TimeRange::new(pair[0], pair[1]);
        // Boundaries include every candidate endpoint, so a candidate
        // either covers the whole piece or none of it.
        let winner = candidates
            .iter()
            .filter(|c| c.clipped.covers(&piece))
            .min_by(|a, b| {
                b.clipped
                    .duration_seconds()
                    .partial_cmp(&a.clipped.duration_seconds())
                    .unwrap()
                    .then(a.clipped.start.cmp(&b.clipped.start))
                    .then(a.mrn.cmp(&b.mrn))
            });
        let next = match winner {
            Some(c) => Segment {
                range: piece,
                mrn: Some(c.mrn.clone()),
                method,
                overlap_seconds: c.clipped.duration_seconds(),
            },
            None => Segment { range: piece, mrn: None, method: LinkMethod::Unmatched, overlap_seconds: 0.0 },
        };
        match segments.last_mut() {
            Some(prev) if prev.mrn == next.mrn && prev.method == next.method => {
                prev.range.end = next.range.end;
                prev.overlap_seconds = prev.overlap_seconds.max(next.overlap_seconds);
            }
            _ => segments.push(next),
        }
    }
    segments
}

/// Builds the encounter-id → MRN table from a day's raw ADT events.
fn visit_mrn_map(events: &[AdtEvent]) -> (BTreeMap<String, String>, usize) {
    let mut ordered: Vec<&AdtEvent> = events.iter().collect();
    ordered.sort_by_key(|e| (e.at, e.event_id));
    let mut map = BTreeMap::new();
    let mut conflicts = 0;
    for e in ordered {
        match map.get(&e.visit_id) {
            None => {
                map.insert(e.visit_id.clone(), e.mrn.clone());
            }
            Some(existing) if *existing != e.mrn => conflicts += 1,
            _ => {}
        }
    }
    (map, conflicts)
}

/// Links every stream in a parsed day bundle to an MRN where possible.
pub fn link_day(bundle: &ExtractBundle, bed_map: &BedLabelMap) -> Result<DayLinkage> {
    let close_at = bundle.day.map(|d| d.end());
    let ranges = collapse_stream_ranges(bundle);
    let (visit_map, visit_mrn_conflicts) = visit_mrn_map(&bundle.adt_events);
    let sanitize = sanitize_adt(&bundle.adt_events, close_at);

    // Evidence grouped by normalized bed label.
    let mut devlog_by_bed: BTreeMap<String, Vec<(String, TimeRange)>> = BTreeMap::new();
    let mut unresolved_device_logs = 0;
    for log in &bundle.device_logs {
        let bed = bed_map.normalize(&log.bed_label)?;
        match visit_map.get(&log.encounter_id) {
            Some(mrn) => devlog_by_bed
                .entry(bed)
                .or_default()
                .push((mrn.clone(), TimeRange::new(log.attach_at, log.detach_at))),
            None => unresolved_device_logs += 1,
        }
    }
    let mut stays_by_bed: BTreeMap<String, Vec<&Stay>> = BTreeMap::new();
    for stay in &sanitize.stays {
        let bed = bed_map.normalize(&stay.bed)?;
        stays_by_bed.entry(bed).or_default().push(stay);
    }

    let mut streams = Vec::with_capacity(ranges.len());
    let mut report = LinkageReport {
        total_streams: ranges.len(),
        unresolved_device_logs,
        visit_mrn_conflicts,
        ..LinkageReport::default()
    };

    for sr in ranges {
        let normalized_bed = bed_map.normalize(&sr.bed_label)?;
        let mut candidates_considered = 0;
        let segments = if sr.lifetime_id.is_some() {
            // Monitor-entered MRN covers the whole stream; the matching
            // passes never touch these.
            vec![Segment {
                range: sr.range,
                mrn: sr.lifetime_id.clone(),
                method: LinkMethod::LifetimeId,
                overlap_seconds: sr.range.duration_seconds(),
            }]
        } else {
            // Pass 1: device logs on the same normalized bed.
            let devlog_candidates: Vec<Candidate> = devlog_by_bed
                .get(&normalized_bed)
                .into_iter()
                .flatten()
                .filter_map(|(mrn, interval)| {
                    interval.intersect(&sr.range).map(|clipped| Candidate { mrn: mrn.clone(), clipped })
                })
                .collect();
            if !devlog_candidates.is_empty() {
                candidates_considered = devlog_candidates.len();
                assign_segments(sr.range, &devlog_candidates, LinkMethod::DeviceLog)
            } else {
                // Pass 2: sanitized ADT stays.
                let stay_candidates: Vec<Candidate> = stays_by_bed
                    .get(&normalized_bed)
                    .into_iter()
                    .flatten()
                    .filter_map(|stay| {
                        stay.range.intersect(&sr.range).map(|clipped| Candidate { mrn: stay.mrn.clone(), clipped })
                    })
                    .collect();
                if !stay_candidates.is_empty() {
                    candidates_considered = stay_candidates.len();
                    assign_segments(sr.range, &stay_candidates, LinkMethod::AdtOverlap)
                } else {
                    vec![Segment {
                        range: sr.range,
                        mrn: None,
                        method: LinkMethod::Unmatched,
                        overlap_seconds: 0.0,
                    }]
                }
            }
        };

        for seg in &segments {
            *report.per_method.entry(seg.method.as_str().to_string()).or_insert(0) += 1;
        }
        let stream = LinkedStream {
            monitor_patient_id: sr.monitor_patient_id,
            bed_label: sr.bed_label,
            normalized_bed,
            range: sr.range,
            lifetime_id: sr.lifetime_id,
            segments,
            candidates_considered,
        };
        if stream.lifetime_id.is_none() {
            report.total_streams_missing_id += 1;
            if stream.is_assigned() {
                report.assigned += 1;
            }
        }
        streams.push(stream);
    }

    report.coverage_fraction = if report.total_streams_missing_id == 0 {
        1.0
    } else {
        report.assigned as f64 / report.total_streams_missing_id as f64
    };

    Ok(DayLinkage { streams, report, sanitize })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::AdtEventKind;
    use crate::time::parse_timestamp;

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s).unwrap()
    }

    fn lenient() -> BedLabelMap {
        BedLabelMap::default()
    }

    #[test]
    fn nato_labels_normalize() {
        let map = lenient();
        assert_eq!(normalize_bed_label("13ALPHA", &map).unwrap(), "A13");
        assert_eq!(normalize_bed_label("01CHARLIE", &map).unwrap(), "C01");
        assert_eq!(normalize_bed_label("1BRAVO", &map).unwrap(), "B01");
        assert_eq!(normalize_bed_label("7x-ray", &map).unwrap(), "X07");
    }

    #[test]
    fn unknown_labels_pass_through_leniently_and_fail_strictly() {
        let map = lenient();
        assert_eq!(normalize_bed_label("ICU-7", &map).unwrap(), "ICU-7");
        let strict = BedLabelMap::new(BTreeMap::new(), true);
        assert!(matches!(
            normalize_bed_label("ICU-7", &strict),
            Err(Error::AmbiguousLabel(_))
        ));
    }

    #[test]
    fn overrides_beat_the_nato_rule() {
        let mut overrides = BTreeMap::new();
        overrides.insert("13ALPHA".to_string(), "NICU-EAST-13".to_string());
        let map = BedLabelMap::new(overrides, false);
        assert_eq!(normalize_bed_label("13ALPHA", &map).unwrap(), "NICU-EAST-13");
        assert_eq!(normalize_bed_label("14ALPHA", &map).unwrap(), "A14");
    }

    fn adt(
        event_id: u64,
        mrn: &str,
        visit: &str,
        kind: AdtEventKind,
        bed: &str,
        at: &str,
    ) -> AdtEvent {
        AdtEvent {
            event_id,
            patient_name: "John Doe".to_string(),
            mrn: mrn.to_string(),
            visit_id: visit.to_string(),
            event: kind,
            bed: bed.to_string(),
            at: ts(at),
        }
    }

    #[test]
    fn simultaneous_in_out_pair_yields_no_stay() {
        let events = vec![
            adt(1, "M1", "V1", AdtEventKind::TransferIn, "B09", "2019-03-02T04:19:00Z"),
            adt(2, "M1", "V1", AdtEventKind::TransferOut, "B09", "2019-03-02T04:19:00Z"),
        ];
        let report = sanitize_adt(&events, None);
        assert!(report.stays.is_empty());
        assert_eq!(report.zero_length_dropped, 1);
    }

    #[test]
    fn duplicate_admissions_collapse_to_one_stay() {
        let events = vec![
            adt(1, "M1", "V1", AdtEventKind::Admission, "A17", "2020-08-23T11:29:00Z"),
            adt(2, "M1", "V1", AdtEventKind::Admission, "A17", "2020-08-23T11:29:00Z"),
            adt(3, "M1", "V1", AdtEventKind::TransferOut, "A17", "2020-09-23T20:24:00Z"),
        ];
        let report = sanitize_adt(&events, None);
        assert_eq!(report.duplicates_removed, 1);
        assert_eq!(report.stays.len(), 1);
        let stay = &report.stays[0];
        assert_eq!(stay.range.start, ts("2020-08-23T11:29:00Z"));
        assert_eq!(stay.range.end, ts("2020-09-23T20:24:00Z"));
        assert!(!stay.open_ended);
    }

    #[test]
    fn discharge_readmit_chain_merges_to_first_admit_last_discharge() {
        let events = vec![
            adt(1, "M1", "V1", AdtEventKind::Admission, "A03", "2020-07-02T15:59:00Z"),
            adt(2, "M1", "V1", AdtEventKind::TransferOut, "A03", "2020-07-02T16:00:00Z"),
            adt(3, "M1", "V1", AdtEventKind::TransferIn, "A03", "2020-07-02T16:00:00Z"),
            adt(4, "M1", "V1", AdtEventKind::TransferOut, "A03", "2020-07-02T16:16:00Z"),
            adt(5, "M1", "V1", AdtEventKind::TransferIn, "A03", "2020-07-02T16:16:00Z"),
            adt(6, "M1", "V1", AdtEventKind::Discharge, "A03", "2020-07-02T21:03:00Z"),
        ];
        let report = sanitize_adt(&events, None);
        assert_eq!(report.stays.len(), 1);
        let stay = &report.stays[0];
        assert_eq!(stay.range.start, ts("2020-07-02T15:59:00Z"));
        assert_eq!(stay.range.end, ts("2020-07-02T21:03:00Z"));
        assert_eq!(report.chains_merged, 2);
    }

    #[test]
    fn dangling_admit_closes_at_boundary_and_is_flagged() {
        let events =
            vec![adt(1, "M1", "V1", AdtEventKind::Admission, "A01", "2021-03-01T22:00:00Z")];
        let closed = sanitize_adt(&events, Some(ts("2021-03-02T00:00:00Z")));
        assert_eq!(closed.stays.len(), 1);
        assert!(closed.stays[0].open_ended);
        assert_eq!(closed.stays[0].range.end, ts("2021-03-02T00:00:00Z"));
        assert_eq!(closed.dangling_inbound, 1);

        let dropped = sanitize_adt(&events, None);
        assert!(dropped.stays.is_empty());
        assert_eq!(dropped.dangling_inbound, 1);
    }

    fn numeric(mpid: &str, bed: &str, at: &str, lifetime: Option<&str>) -> crate::extract::NumericRecord {
        crate::extract::NumericRecord {
            monitor_patient_id: mpid.to_string(),
            bed_label: bed.to_string(),
            observed_at: ts(at),
            metric: crate::extract::Metric::Hr,
            value: 80.0,
            unit: "bpm".to_string(),
            lifetime_id: lifetime.map(str::to_string),
        }
    }

    #[test]
    fn collapse_merges_consecutive_rows_and_widens_single_rows() {
        let mut bundle = ExtractBundle::default();
        bundle.numerics = vec![
            numeric("p1", "01ALPHA", "2021-03-01T10:00:00Z", None),
            numeric("p1", "01ALPHA", "2021-03-01T10:00:01Z", None),
            numeric("p1", "01ALPHA", "2021-03-01T10:00:02Z", None),
            numeric("p2", "02ALPHA", "2021-03-01T11:00:00Z", None),
        ];
        let ranges = collapse_stream_ranges(&bundle);
        assert_eq!(ranges.len(), 2);
        assert_eq!(ranges[0].range, TimeRange::new(ts("2021-03-01T10:00:00Z"), ts("2021-03-01T10:00:03Z")));
        // A single observation still yields a non-empty range.
        assert_eq!(ranges[1].range, TimeRange::new(ts("2021-03-01T11:00:00Z"), ts("2021-03-01T11:00:01Z")));
    }

    #[test]
    fn collapse_splits_on_bed_changes_even_when_a_bed_recurs() {
        let mut bundle = ExtractBundle::default();
        bundle.numerics = vec![
            numeric("p1", "B1", "2021-03-01T10:00:00Z", None),
            numeric("p1", "B2", "2021-03-01T10:10:00Z", None),
            numeric("p1", "B1", "2021-03-01T10:20:00Z", None),
        ];
        let ranges = collapse_stream_ranges(&bundle);
        assert_eq!(ranges.len(), 3);
        assert_eq!(ranges[0].bed_label, "B1");
        assert_eq!(ranges[1].bed_label, "B2");
        assert_eq!(ranges[2].bed_label, "B1");
        assert!(ranges[0].range.end <= ranges[1].range.start);
        assert!(ranges[1].range.end <= ranges[2].range.start);
    }

    /// Brute-force grouping oracle over a small permutation space: runs of
    /// equal (id, bed) in time order must match collapse output.
    #[test]
    fn collapse_matches_naive_run_grouping_oracle() {
        let beds = ["B1", "B2"];
        // All 2^5 bed sequences of length 5 at fixed times.
        for mask in 0u32..32 {
            let mut bundle = ExtractBundle::default();
            let mut expected_runs: Vec<(&str, Vec<usize>)> = Vec::new();
            for i in 0..5 {
                let bed = beds[((mask >> i) & 1) as usize];
                bundle.numerics.push(numeric(
                    "p1",
                    bed,
                    &format!("2021-03-01T10:00:{:02}Z", i * 10),
                    None,
                ));
                match expected_runs.last_mut() {
                    Some((b, seq)) if *b == bed => seq.push(i),
                    _ => expected_runs.push((bed, vec![i])),
                }
            }
            let ranges = collapse_stream_ranges(&bundle);
            assert_eq!(ranges.len(), expected_runs.len(), "mask {mask}");
            for (range, (bed, seq)) in ranges.iter().zip(&expected_runs) {
                assert_eq!(&range.bed_label, bed);
                let first = seq[0] * 10;
                let last = seq[seq.len() - 1] * 10;
                assert_eq!(range.range.start, ts(&format!("2021-03-01T10:00:{first:02}Z")));
                assert_eq!(
                    range.range.end,
                    ts(&format!("2021-03-01T10:00:{:02}Z", last + 1))
                );
            }
        }
    }

    #[test]
    fn lifetime_id_attaches_from_numerics_and_enumerations() {
        let mut bundle = ExtractBundle::default();
        bundle.numerics = vec![
            numeric("p1", "B1", "2021-03-01T10:00:00Z", None),
            numeric("p1", "B1", "2021-03-01T10:00:01Z", Some("M77")),
            numeric("p2", "B2", "2021-03-01T10:00:00Z", None),
        ];
        bundle.enumerations.push(crate::extract::EnumerationRecord {
            monitor_patient_id: "p2".to_string(),
            bed_label: "B2".to_string(),
            observed_at: ts("2021-03-01T10:00:00Z"),
            key: LIFETIME_ID_KEY.to_string(),
            value: "M88".to_string(),
        });
        let ranges = collapse_stream_ranges(&bundle);
        let p1 = ranges.iter().find(|r| r.monitor_patient_id == "p1").unwrap();
        let p2 = ranges.iter().find(|r| r.monitor_patient_id == "p2").unwrap();
        assert_eq!(p1.lifetime_id.as_deref(), Some("M77"));
        assert_eq!(p2.lifetime_id.as_deref(), Some("M88"));
    }

    fn minute_range(day: &str, h1: u32, m1: u32, h2: u32, m2: u32) -> TimeRange {
        TimeRange::new(
            ts(&format!("{day}T{h1:02}:{m1:02}:00Z")),
            ts(&format!("{day}T{h2:02}:{m2:02}:00Z")),
        )
    }

    fn bundle_with_stream(day: &str) -> ExtractBundle {
        // Stream p1 on 13ALPHA from 10:00 to 14:00 (numerics every 30 min).
        let mut bundle = ExtractBundle::default();
        bundle.day = Some(crate::time::Day::parse(day).unwrap());
        for i in 0..9 {
            let minutes = i * 30;
            bundle.numerics.push(numeric(
                "p1",
                "13ALPHA",
                &format!("{day}T{:02}:{:02}:00Z", 10 + minutes / 60, minutes % 60),
                None,
            ));
        }
        bundle
    }

    #[test]
    fn device_log_assigns_whole_stream() {
        let day = "2021-03-01";
        let mut bundle = bundle_with_stream(day);
        bundle.device_logs.push(crate::extract::DeviceLogRecord {
            encounter_id: "V1".to_string(),
            bed_label: "13ALPHA".to_string(),
            attach_at: ts(&format!("{day}T09:55:00Z")),
            detach_at: ts(&format!("{day}T14:10:00Z")),
        });
        bundle.adt_events.push(adt(1, "M1", "V1", AdtEventKind::Admission, "A13", &format!("{day}T09:50:00Z")));
        let linked = link_day(&bundle, &lenient()).unwrap();
        assert_eq!(linked.streams.len(), 1);
        let s = &linked.streams[0];
        assert_eq!(s.normalized_bed, "A13");
        assert_eq!(s.segments.len(), 1);
        assert_eq!(s.segments[0].mrn.as_deref(), Some("M1"));
        assert_eq!(s.segments[0].method, LinkMethod::DeviceLog);
        assert_eq!(linked.report.coverage_fraction, 1.0);
    }

    #[test]
    fn larger_overlap_wins_between_device_logs() {
        let day = "2021-03-01";
        let mut bundle = bundle_with_stream(day);
        // M_short overlaps 30 minutes, M_long overlaps 3 hours.
        for (visit, mrn, a, b) in
            [("V1", "M_short", (9, 45), (10, 30)), ("V2", "M_long", (10, 30), (13, 30))]
        {
            bundle.device_logs.push(crate::extract::DeviceLogRecord {
                encounter_id: visit.to_string(),
                bed_label: "13ALPHA".to_string(),
                attach_at: ts(&format!("{day}T{:02}:{:02}:00Z", a.0, a.1)),
                detach_at: ts(&format!("{day}T{:02}:{:02}:00Z", b.0, b.1)),
            });
            bundle.adt_events.push(adt(
                bundle.adt_events.len() as u64 + 1,
                mrn,
                visit,
                AdtEventKind::Admission,
                "A13",
                &format!("{day}T09:00:00Z"),
            ));
        }
        let linked = link_day(&bundle, &lenient()).unwrap();
        let s = &linked.streams[0];
        // Non-overlapping evidence: each wins its own interval; the long
        // one also wins nothing extra since intervals do not contend.
        let assigned: Vec<(&str, f64)> = s
            .segments
            .iter()
            .filter_map(|seg| seg.mrn.as_deref().map(|m| (m, seg.range.duration_seconds())))
            .collect();
        assert_eq!(assigned.iter().map(|(m, _)| *m).collect::<Vec<_>>(), vec!["M_short", "M_long"]);

        // Now make them contend on the same piece: both cover 10:30–11:00.
        bundle.device_logs[0].detach_at = ts(&format!("{day}T11:00:00Z"));
        let linked = link_day(&bundle, &lenient()).unwrap();
        let s = &linked.streams[0];
        let at_1045 = s
            .segments
            .iter()
            .find(|seg| seg.range.contains(ts(&format!("{day}T10:45:00Z"))))
            .unwrap();
        assert_eq!(at_1045.mrn.as_deref(), Some("M_long"));
    }

    #[test]
    fn no_device_log_overlap_falls_through_to_adt() {
        let day = "2021-03-01";
        let mut bundle = bundle_with_stream(day);
        // Device log on a different bed: no overlap on A13.
        bundle.device_logs.push(crate::extract::DeviceLogRecord {
            encounter_id: "V9".to_string(),
            bed_label: "02ALPHA".to_string(),
            attach_at: ts(&format!("{day}T10:00:00Z")),
            detach_at: ts(&format!("{day}T14:00:00Z")),
        });
        bundle.adt_events.extend([
            adt(1, "M2", "V2", AdtEventKind::Admission, "A13", &format!("{day}T09:30:00Z")),
            adt(2, "M2", "V2", AdtEventKind::Discharge, "A13", &format!("{day}T15:00:00Z")),
            adt(3, "M9", "V9", AdtEventKind::Admission, "A02", &format!("{day}T09:30:00Z")),
        ]);
        let linked = link_day(&bundle, &lenient()).unwrap();
        let s = &linked.streams[0];
        assert_eq!(s.segments.len(), 1);
        assert_eq!(s.segments[0].method, LinkMethod::AdtOverlap);
        assert_eq!(s.segments[0].mrn.as_deref(), Some("M2"));
    }

    #[test]
    fn equal_stay_overlap_breaks_tie_by_earlier_start_deterministically() {
        let day = "2021-03-01";
        let mut bundle = bundle_with_stream(day); // stream 10:00–14:00ish
        bundle.adt_events.extend([
            // Both stays cover the whole stream; M_b starts earlier.
            adt(1, "M_z", "V1", AdtEventKind::Admission, "A13", &format!("{day}T09:00:00Z")),
            adt(2, "M_z", "V1", AdtEventKind::Discharge, "A13", &format!("{day}T18:00:00Z")),
            adt(3, "M_b", "V2", AdtEventKind::Admission, "A13", &format!("{day}T08:00:00Z")),
            adt(4, "M_b", "V2", AdtEventKind::Discharge, "A13", &format!("{day}T19:00:00Z")),
        ]);
        let first = link_day(&bundle, &lenient()).unwrap();
        let s = &first.streams[0];
        assert_eq!(s.segments.len(), 1);
        assert_eq!(s.segments[0].mrn.as_deref(), Some("M_b"));
        for _ in 0..5 {
            assert_eq!(link_day(&bundle, &lenient()).unwrap(), first);
        }
    }

    #[test]
    fn lifetime_id_streams_are_untouched_by_matching() {
        let day = "2021-03-01";
        let mut bundle = ExtractBundle::default();
        bundle.day = Some(crate::time::Day::parse(day).unwrap());
        bundle.numerics.push(numeric("p1", "13ALPHA", &format!("{day}T10:00:00Z"), Some("M_real")));
        // Contradictory ADT evidence that would otherwise assign M_other.
        bundle.adt_events.extend([
            adt(1, "M_other", "V1", AdtEventKind::Admission, "A13", &format!("{day}T09:00:00Z")),
            adt(2, "M_other", "V1", AdtEventKind::Discharge, "A13", &format!("{day}T18:00:00Z")),
        ]);
        let linked = link_day(&bundle, &lenient()).unwrap();
        let s = &linked.streams[0];
        assert_eq!(s.segments.len(), 1);
        assert_eq!(s.segments[0].method, LinkMethod::LifetimeId);
        assert_eq!(s.segments[0].mrn.as_deref(), Some("M_real"));
        assert_eq!(linked.report.total_streams_missing_id, 0);
        assert_eq!(linked.report.coverage_fraction, 1.0);
    }

    #[test]
    fn unmatched_streams_are_kept_without_mrn() {
        let day = "2021-03-01";
        let bundle = bundle_with_stream(day);
        let linked = link_day(&bundle, &lenient()).unwrap();
        let s = &linked.streams[0];
        assert_eq!(s.segments.len(), 1);
        assert_eq!(s.segments[0].method, LinkMethod::Unmatched);
        assert!(s.segments[0].mrn.is_none());
        assert_eq!(linked.report.coverage_fraction, 0.0);
    }

    #[test]
    fn adt_handover_cuts_stream_at_stay_boundary() {
        let day = "2021-03-01";
        let mut bundle = ExtractBundle::default();
        bundle.day = Some(crate::time::Day::parse(day).unwrap());
        // One shared stream 10:00–12:00 on bed A05 with no device logs.
        for m in 0..120 {
            bundle.numerics.push(numeric(
                "shared",
                "05ALPHA",
                &format!("{day}T{:02}:{:02}:00Z", 10 + m / 60, m % 60),
                None,
            ));
        }
        bundle.adt_events.extend([
            adt(1, "M_a", "V1", AdtEventKind::Admission, "A05", &format!("{day}T09:00:00Z")),
            adt(2, "M_a", "V1", AdtEventKind::TransferOut, "A05", &format!("{day}T11:00:00Z")),
            adt(3, "M_b", "V2", AdtEventKind::TransferIn, "A05", &format!("{day}T11:00:00Z")),
            adt(4, "M_b", "V2", AdtEventKind::Discharge, "A05", &format!("{day}T13:00:00Z")),
        ]);
        let linked = link_day(&bundle, &lenient()).unwrap();
        let s = &linked.streams[0];
        assert_eq!(s.segments.len(), 2);
        assert_eq!(s.segments[0].mrn.as_deref(), Some("M_a"));
        assert_eq!(s.segments[1].mrn.as_deref(), Some("M_b"));
        assert_eq!(s.segments[0].range.end, ts(&format!("{day}T11:00:00Z")));
        assert_eq!(s.segments[1].range.start, ts(&format!("{day}T11:00:00Z")));
        assert_eq!(minute_range(day, 10, 0, 12, 1).covers(&s.range), true);
    }
}

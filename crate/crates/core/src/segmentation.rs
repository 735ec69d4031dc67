//! Cutting linked streams into bounded studies.
//!
//! A *study* is at most 24 hours of one monitor patient id on one bed with
//! one MRN decision. Studies inherit their bounds from linkage segments
//! (already cut at evidence boundaries, so EMR stay timestamps clamp them
//! where available) and are additionally cut at UTC midnights. Every
//! in-range record lands in exactly one study; records matching no study
//! are collected as orphans, never dropped silently.

use serde::{Deserialize, Serialize};

use crate::extract::{AlertRecord, ExtractBundle, NumericRecord, WaveSampleRecord};
use crate::linkage::{BedLabelMap, DayLinkage, LinkMethod};
use crate::time::{compact_stamp, TimeRange, Timestamp};
use crate::error::Result;

/// Stable identifier: `<monitor_patient_id>_<normalized bed>_<compact start>`.
pub fn study_identifier(monitor_patient_id: &str, normalized_bed: &str, start: Timestamp) -> String {
    format!("{monitor_patient_id}_{normalized_bed}_{}", compact_stamp(start))
}

/// A planned study: bounds and identity fixed, contents not yet gathered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySkeleton {
    pub study_id: String,
    pub monitor_patient_id: String,
    /// Device-side bed label, used to match bundle rows.
    pub bed_label: String,
    /// EMR-normalized bed label, used in identifiers and the catalog.
    pub normalized_bed: String,
    pub mrn: Option<String>,
    pub method: LinkMethod,
    pub range: TimeRange,
    pub overlap_seconds: f64,
}

/// A study with its contents gathered from the bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub skeleton: StudySkeleton,
    /// Wave blocks, sorted by (wave, block_start); blocks straddling a
    /// study boundary have been split sample-accurately.
    pub waves: Vec<WaveSampleRecord>,
    pub numerics: Vec<NumericRecord>,
    pub alerts: Vec<AlertRecord>,
}

impl Study {
    pub fn is_empty(&self) -> bool {
        self.waves.is_empty() && self.numerics.is_empty() && self.alerts.is_empty()
    }

    pub fn total_wave_samples(&self) -> u64 {
        self.waves.iter().map(|w| w.samples.len() as u64).sum()
    }
}

/// Records that matched no study.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OrphanReport {
    pub numerics: Vec<NumericRecord>,
    pub alerts: Vec<AlertRecord>,
    pub wave_blocks: Vec<WaveSampleRecord>,
}

impl OrphanReport {
    pub fn is_empty(&self) -> bool {
        self.numerics.is_empty() && self.alerts.is_empty() && self.wave_blocks.is_empty()
    }

    pub fn total_wave_samples(&self) -> u64 {
        self.wave_blocks.iter().map(|w| w.samples.len() as u64).sum()
    }
}

/// Result of planning and filling one day's studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySegmentation {
    pub studies: Vec<Study>,
    pub orphans: OrphanReport,
    /// Planned studies discarded because no record fell inside them.
    pub empty_studies_dropped: usize,
}

/// Plans one study skeleton per linkage segment, cut at UTC midnights.
///
/// Linkage segments are already bounded by evidence intervals (so EMR stay
/// timestamps clamp study bounds where they exist) and never span a bed
/// change; midnight cutting bounds every study at 24 hours.
pub fn plan_studies(linkage: &DayLinkage) -> Vec<StudySkeleton> {
    let mut skeletons = Vec::new();
    for stream in &linkage.streams {
        for segment in &stream.segments {
            for range in cut_at_midnights(segment.range) {
                skeletons.push(StudySkeleton {
                    study_id: study_identifier(
                        &stream.monitor_patient_id,
                        &stream.normalized_bed,
                        range.start,
                    ),
                    monitor_patient_id: stream.monitor_patient_id.clone(),
                    bed_label: stream.bed_label.clone(),
                    normalized_bed: stream.normalized_bed.clone(),
                    mrn: segment.mrn.clone(),
                    method: segment.method,
                    range,
                    overlap_seconds: segment.overlap_seconds,
                });
            }
        }
    }
    skeletons.sort_by(|a, b| (a.range.start, &a.study_id).cmp(&(b.range.start, &b.study_id)));
    skeletons
}

/// Splits a range at every UTC midnight strictly inside it.
fn cut_at_midnights(range: TimeRange) -> Vec<TimeRange> {
    let mut cuts = vec![range.start];
    let mut midnight = range
        .start
        .date_naive()
        .succ_opt()
        .expect("date overflow")
        .and_hms_opt(0, 0, 0)
        .expect("valid midnight")
        .and_utc();
    while midnight < range.end {
        cuts.push(midnight);
        midnight += chrono::Duration::days(1);
    }
    cuts.push(range.end);
    cuts.windows(2).map(|w| TimeRange::new(w[0], w[1])).collect()
}

/// Splits a wave block at `cut`: samples strictly before the cut-aligned
/// index stay in the first piece, the remainder (including a sample that
/// straddles the cut) moves to the second. The split index is
/// `floor((cut - block_start) * rate)`, so a sub-second cut makes the
/// first part shorter. Concatenating the pieces reproduces the original
/// samples exactly.
pub fn split_wave_block(
    block: &WaveSampleRecord,
    cut: Timestamp,
) -> (Option<WaveSampleRecord>, Option<WaveSampleRecord>) {
    let n = block.samples.len() as i64;
    let offset_us = (cut - block.block_start).num_microseconds().unwrap_or(i64::MAX);
    if offset_us <= 0 {
        return (None, Some(block.clone()));
    }
    let k = (offset_us * block.sample_rate as i64).div_euclid(1_000_000);
    if k >= n {
        return (Some(block.clone()), None);
    }
    let first = WaveSampleRecord { samples: block.samples[..k as usize].to_vec(), ..block.clone() };
    let second_start =
        block.block_start + chrono::Duration::microseconds((k * 1_000_000) / block.sample_rate as i64);
    let second = WaveSampleRecord {
        samples: block.samples[k as usize..].to_vec(),
        block_start: second_start,
        ..block.clone()
    };
    (
        (!first.samples.is_empty()).then_some(first),
        (!second.samples.is_empty()).then_some(second),
    )
}

/// Gathers bundle records into their studies.
///
/// A record belongs to the study sharing its monitor patient id whose
/// normalized bed equals the record's normalized bed label and whose
/// half-open range contains the record's timestamp. Wave blocks straddling
/// study boundaries are split sample-accurately; pieces covered by no
/// study become orphans.
pub fn fill_studies(
    skeletons: Vec<StudySkeleton>,
    bundle: &ExtractBundle,
    bed_map: &BedLabelMap,
) -> Result<DaySegmentation> {
    let mut studies: Vec<Study> = skeletons
        .into_iter()
        .map(|skeleton| Study { skeleton, waves: Vec::new(), numerics: Vec::new(), alerts: Vec::new() })
        .collect();

    // Studies per (monitor id, normalized bed), time-ordered.
    let mut index: std::collections::BTreeMap<(String, String), Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, s) in studies.iter().enumerate() {
        index
            .entry((s.skeleton.monitor_patient_id.clone(), s.skeleton.normalized_bed.clone()))
            .or_default()
            .push(i);
    }
    for v in index.values_mut() {
        v.sort_by_key(|&i| studies[i].skeleton.range.start);
    }

    let mut orphans = OrphanReport::default();

    for n in &bundle.numerics {
        let key = (n.monitor_patient_id.clone(), bed_map.normalize(&n.bed_label)?);
        let target = index.get(&key).and_then(|ids| {
            ids.iter().find(|&&i| studies[i].skeleton.range.contains(n.observed_at)).copied()
        });
        match target {
            Some(i) => studies[i].numerics.push(n.clone()),
            None => orphans.numerics.push(n.clone()),
        }
    }

    for a in &bundle.alerts {
        let key = (a.monitor_patient_id.clone(), bed_map.normalize(&a.bed_label)?);
        let target = index.get(&key).and_then(|ids| {
            ids.iter().find(|&&i| studies[i].skeleton.range.contains(a.at)).copied()
        });
        match target {
            Some(i) => studies[i].alerts.push(a.clone()),
            None => orphans.alerts.push(a.clone()),
        }
    }

    for w in &bundle.wave_samples {
        let key = (w.monitor_patient_id.clone(), bed_map.normalize(&w.bed_label)?);
        let ids = index.get(&key).cloned().unwrap_or_default();
        let mut remaining = Some(w.clone());
        for i in ids {
            let Some(block) = remaining.take() else { break };
            let study_range = studies[i].skeleton.range;
            if block.block_end() <= study_range.start {
                // Entirely before this (and by order, every later) study.
                remaining = Some(block);
                break;
            }
            // Anything before the study start is covered by no study here.
            let (before, rest) = split_wave_block(&block, study_range.start);
            if let Some(piece) = before {
                orphans.wave_blocks.push(piece);
            }
            let Some(rest) = rest else { continue };
            let (inside, after) = split_wave_block(&rest, study_range.end);
            if let Some(piece) = inside {
                studies[i].waves.push(piece);
            }
            remaining = after;
        }
        if let Some(piece) = remaining {
            orphans.wave_blocks.push(piece);
        }
    }

    for s in &mut studies {
        s.waves.sort_by(|a, b| (&a.wave, a.block_start).cmp(&(&b.wave, b.block_start)));
        s.numerics.sort_by(|a, b| {
            (a.observed_at, a.metric.as_str(), &a.bed_label)
                .cmp(&(b.observed_at, b.metric.as_str(), &b.bed_label))
        });
        s.alerts
            .sort_by(|a, b| (a.at, a.severity.as_str(), &a.text).cmp(&(b.at, b.severity.as_str(), &b.text)));
    }

    let before = studies.len();
    studies.retain(|s| !s.is_empty());
    let empty_studies_dropped = before - studies.len();

    Ok(DaySegmentation { studies, orphans, empty_studies_dropped })
}

/// Plans and fills in one call.
pub fn segment_day(
    linkage: &DayLinkage,
    bundle: &ExtractBundle,
    bed_map: &BedLabelMap,
) -> Result<DaySegmentation> {
    fill_studies(plan_studies(linkage), bundle, bed_map)
}

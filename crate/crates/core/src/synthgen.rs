//! Deterministic synthetic corpus generator.
//!
//! Produces extract bundles with known ground truth — true bed occupancy,
//! true study boundaries, expected catalog rows — so every downstream
//! stage can be tested against an oracle at desk scale. Generation is a
//! pure function of `(config, day)`: the same inputs produce byte-identical
//! bundles on any machine (waveform morphology uses only piecewise-linear
//! arithmetic, never transcendental functions whose low bits vary by
//! platform libm).
//!
//! The generator plans a day as a sequence of non-overlapping patient
//! visits, then renders them into the six bundle tables. Identity evidence
//! is injected per patient according to configurable rates:
//!
//! * lifetime id present — the monitor itself knows the MRN;
//! * device-log evidence — bed attach/detach rows resolve the MRN;
//! * ADT-only evidence — only the EMR stay overlaps the stream;
//! * withheld — no evidence at all (the stream must stay unmatched);
//! * mislabeled — the device log carries a different patient's encounter.
//!
//! The three ADT pathologies (exact duplicates, zero-length stay pairs,
//! zero-gap readmit chains) are injected so that sanitization provably
//! leaves the true stay intervals unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::Duration;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{clinical_unit, ArchiveStats, StudyDetailRow, StudyMapRow};
use crate::error::{Error, Result};
use crate::extract::{
    AdtEvent, AdtEventKind, AlertRecord, AlertSeverity, DeviceLogRecord, EnumerationRecord,
    Metric, NumericRecord, WaveSampleRecord, ADT_EVENTS_HEADER, ALERTS_HEADER, COUNTS_FILE,
    DEVICE_LOGS_HEADER, ENUMERATIONS_HEADER, LIFETIME_ID_KEY, MANIFEST_FILE, NUMERICS_HEADER,
    TABLE_FILES, WAVE_SAMPLES_HEADER,
};
use crate::hash::sha256_bytes;
use crate::linkage::{DayLinkage, LinkMethod};
use crate::registry::wave_spec;
use crate::segmentation::study_identifier;
use crate::time::{format_timestamp, Day, TimeRange, Timestamp};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Rates for the three ADT pathologies, each in `[0, 1]` per patient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdtNoise {
    pub zero_length_pairs: f64,
    pub duplicates: f64,
    pub readmit_chains: f64,
}

impl Default for AdtNoise {
    fn default() -> Self {
        AdtNoise { zero_length_pairs: 0.0, duplicates: 0.0, readmit_chains: 0.0 }
    }
}

/// Everything that defines a synthetic scenario. See
/// [`ScenarioConfig::from_key_values`] for the config-file grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub days: u32,
    pub start_day: Day,
    pub patients_per_day: u32,
    /// Number of beds in the synthetic unit; labels are generated.
    pub beds: u32,
    /// Wave symbols every patient is monitored with; may be empty for
    /// linkage-only scenarios.
    pub wave_symbols: Vec<String>,
    /// Probability that a visit includes one bed-to-bed transfer.
    pub transfer_rate: f64,
    /// Probability that a stream lacks a monitor-entered lifetime id.
    pub missing_lifetime_id_fraction: f64,
    pub adt_noise: AdtNoise,
    /// Probability that two consecutive patients share one monitor stream
    /// back-to-back (operating-room pattern).
    pub or_shared_stream_fraction: f64,
    /// Of missing-id visits: probability that all identity evidence is
    /// withheld (stream must remain unmatched).
    pub evidence_withheld_rate: f64,
    /// Of missing-id visits: probability the device log names the wrong
    /// encounter (stream gets linked to the wrong patient).
    pub evidence_mislabel_rate: f64,
    /// Of missing-id visits: probability the device log is absent but the
    /// EMR stay is present (stream links through ADT overlap).
    pub adt_only_rate: f64,
    pub stay_seconds_min: u32,
    pub stay_seconds_max: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            days: 1,
            start_day: Day::parse("2021-03-01").expect("valid default day"),
            patients_per_day: 12,
            beds: 6,
            wave_symbols: vec!["II".into(), "Pleth".into(), "Resp".into()],
            transfer_rate: 0.2,
            missing_lifetime_id_fraction: 0.5,
            adt_noise: AdtNoise::default(),
            or_shared_stream_fraction: 0.1,
            evidence_withheld_rate: 0.0,
            evidence_mislabel_rate: 0.0,
            adt_only_rate: 0.25,
            stay_seconds_min: 360,
            stay_seconds_max: 720,
        }
    }
}

impl ScenarioConfig {
    /// Noise preset mirroring a messy production feed: half the streams
    /// lack lifetime ids, all three ADT pathologies occur, and identity
    /// evidence is withheld or mislabeled at calibrated rates (18%
    /// withheld, 5% mislabeled) so that expected coverage is about 0.82
    /// and expected accuracy about 0.95.
    pub fn realistic(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            patients_per_day: 14,
            missing_lifetime_id_fraction: 0.5,
            adt_noise: AdtNoise { zero_length_pairs: 0.3, duplicates: 0.3, readmit_chains: 0.2 },
            or_shared_stream_fraction: 0.15,
            transfer_rate: 0.25,
            evidence_withheld_rate: 0.18,
            evidence_mislabel_rate: 0.05,
            adt_only_rate: 0.25,
            ..ScenarioConfig::default()
        }
    }

    /// Fully clean preset: complete evidence, no ADT noise. Linkage must
    /// reach coverage 1.0 and accuracy 1.0, and every catalog statistic is
    /// exactly predictable.
    pub fn clean(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            adt_noise: AdtNoise::default(),
            evidence_withheld_rate: 0.0,
            evidence_mislabel_rate: 0.0,
            ..ScenarioConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("transfer_rate", self.transfer_rate),
            ("missing_lifetime_id_fraction", self.missing_lifetime_id_fraction),
            ("zero_length_pairs", self.adt_noise.zero_length_pairs),
            ("duplicates", self.adt_noise.duplicates),
            ("readmit_chains", self.adt_noise.readmit_chains),
            ("or_shared_stream_fraction", self.or_shared_stream_fraction),
            ("evidence_withheld_rate", self.evidence_withheld_rate),
            ("evidence_mislabel_rate", self.evidence_mislabel_rate),
            ("adt_only_rate", self.adt_only_rate),
        ];
        for (name, rate) in rates {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::ConfigInvalid(format!("{name} must be in [0,1], got {rate}")));
            }
        }
        if self.evidence_withheld_rate + self.evidence_mislabel_rate + self.adt_only_rate > 1.0 {
            return Err(Error::ConfigInvalid(
                "withheld + mislabel + adt_only rates must not exceed 1".into(),
            ));
        }
        if self.beds == 0 {
            return Err(Error::ConfigInvalid("beds must be >= 1".into()));
        }
        if self.days == 0 {
            return Err(Error::ConfigInvalid("days must be >= 1".into()));
        }
        if self.stay_seconds_min < 60 {
            return Err(Error::ConfigInvalid("stay_seconds_min must be >= 60".into()));
        }
        if self.stay_seconds_min > self.stay_seconds_max {
            return Err(Error::ConfigInvalid("stay_seconds_min must be <= stay_seconds_max".into()));
        }
        for symbol in &self.wave_symbols {
            wave_spec(symbol)?;
        }
        // Visits are scheduled sequentially with bounded gaps; everything
        // must fit between the morning and evening margins of one day.
        let worst = self.patients_per_day as u64 * (self.stay_seconds_max as u64 + 420) + 800;
        if worst > 86_400 {
            return Err(Error::ConfigInvalid(format!(
                "{} patients with stays up to {}s cannot fit in one day",
                self.patients_per_day, self.stay_seconds_max
            )));
        }
        Ok(())
    }

    /// Parses the key=value scenario grammar:
    ///
    /// ```text
    /// # comment
    /// seed = 7
    /// profile = realistic      # or clean; applies preset, later keys override
    /// days = 5
    /// start_day = 2021-03-01
    /// patients_per_day = 14
    /// beds = 6
    /// waves = II,Pleth,Resp    # empty value allowed for linkage-only runs
    /// transfer_rate = 0.25
    /// missing_lifetime_id_fraction = 0.5
    /// zero_length_pairs = 0.3
    /// duplicates = 0.3
    /// readmit_chains = 0.2
    /// or_shared_stream_fraction = 0.15
    /// evidence_withheld_rate = 0.18
    /// evidence_mislabel_rate = 0.05
    /// adt_only_rate = 0.25
    /// stay_seconds_min = 360
    /// stay_seconds_max = 720
    /// ```
    pub fn from_key_values(text: &str) -> Result<ScenarioConfig> {
        let mut config = ScenarioConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::ConfigInvalid(format!("line {}: expected key=value, got {raw:?}", idx + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::ConfigInvalid(format!("line {}: bad {what} value {value:?}", idx + 1))
            };
            match key {
                "profile" => {
                    let seed = config.seed;
                    config = match value {
                        "realistic" => ScenarioConfig::realistic(seed),
                        "clean" => ScenarioConfig::clean(seed),
                        _ => return Err(bad("profile")),
                    };
                }
                "seed" => config.seed = value.parse().map_err(|_| bad(key))?,
                "days" => config.days = value.parse().map_err(|_| bad(key))?,
                "start_day" => config.start_day = Day::parse(value)?,
                "patients_per_day" => {
                    config.patients_per_day = value.parse().map_err(|_| bad(key))?
                }
                "beds" => config.beds = value.parse().map_err(|_| bad(key))?,
                "waves" => {
                    config.wave_symbols = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect();
                }
                "transfer_rate" => config.transfer_rate = value.parse().map_err(|_| bad(key))?,
                "missing_lifetime_id_fraction" => {
                    config.missing_lifetime_id_fraction = value.parse().map_err(|_| bad(key))?
                }
                "zero_length_pairs" => {
                    config.adt_noise.zero_length_pairs = value.parse().map_err(|_| bad(key))?
                }
                "duplicates" => {
                    config.adt_noise.duplicates = value.parse().map_err(|_| bad(key))?
                }
                "readmit_chains" => {
                    config.adt_noise.readmit_chains = value.parse().map_err(|_| bad(key))?
                }
                "or_shared_stream_fraction" => {
                    config.or_shared_stream_fraction = value.parse().map_err(|_| bad(key))?
                }
                "evidence_withheld_rate" => {
                    config.evidence_withheld_rate = value.parse().map_err(|_| bad(key))?
                }
                "evidence_mislabel_rate" => {
                    config.evidence_mislabel_rate = value.parse().map_err(|_| bad(key))?
                }
                "adt_only_rate" => config.adt_only_rate = value.parse().map_err(|_| bad(key))?,
                "stay_seconds_min" => {
                    config.stay_seconds_min = value.parse().map_err(|_| bad(key))?
                }
                "stay_seconds_max" => {
                    config.stay_seconds_max = value.parse().map_err(|_| bad(key))?
                }
                other => {
                    return Err(Error::ConfigInvalid(format!(
                        "line {}: unknown key {other:?}",
                        idx + 1
                    )))
                }
            }
        }
        config.validate()?;
        Ok(config)
    }
}

// ---------------------------------------------------------------------------
// Beds
// ---------------------------------------------------------------------------

const BED_LETTERS: [(char, &str, &str); 5] = [
    ('A', "ALPHA", "ICU"),
    ('B', "BRAVO", "PICU"),
    ('C', "CHARLIE", "NICU"),
    ('D', "DELTA", "CICU"),
    ('E', "ECHO", "ER"),
];

/// One generated bed: device-side label (`01ALPHA`), EMR label (`A01`),
/// and its clinical unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BedInfo {
    pub device_label: String,
    pub emr_label: String,
    pub unit: String,
}

/// Deterministic bed roster: cycles through five letter groups, assigning
/// two-digit numbers, so `n = 7` yields A01..E01 then A02, B02.
pub fn bed_roster(n: u32) -> Vec<BedInfo> {
    (0..n)
        .map(|i| {
            let (letter, word, unit) = BED_LETTERS[(i % 5) as usize];
            let number = i / 5 + 1;
            BedInfo {
                device_label: format!("{number:02}{word}"),
                emr_label: format!("{letter}{number:02}"),
                unit: unit.to_string(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// True occupancy of part of a stream by one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSegment {
    pub range: TimeRange,
    pub mrn: String,
}

/// One monitor stream (one monitor patient id on one bed) with its true
/// occupancy, regardless of what evidence was emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamTruth {
    pub monitor_patient_id: String,
    /// Device-side bed label as it appears in the bundle.
    pub bed_label: String,
    pub normalized_bed: String,
    pub range: TimeRange,
    pub lifetime_id_present: bool,
    pub segments: Vec<TruthSegment>,
}

/// One study the pipeline is expected to produce. `subject` is the MRN
/// the pipeline should assign (None for evidence-withheld streams, the
/// wrong patient for mislabeled ones); `true_mrn` is who actually
/// occupied the bed and is the scoring reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthStudy {
    pub study_id: String,
    pub monitor_patient_id: String,
    pub normalized_bed: String,
    pub range: TimeRange,
    pub subject: Option<String>,
    pub true_mrn: String,
    pub method: String,
}

/// Identifier sets for leak scans: none of these may appear anywhere in a
/// de-identified archive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthIdentifiers {
    pub mrns: Vec<String>,
    pub patient_names: Vec<String>,
    pub visit_ids: Vec<String>,
}

/// Everything the generator knows about one generated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub day: Day,
    pub seed: u64,
    pub streams: Vec<StreamTruth>,
    pub studies: Vec<TruthStudy>,
    pub row_counts: BTreeMap<String, u64>,
    /// Catalog rows the pipeline is expected to publish for this day.
    /// `storage_path` is left empty — physical layout belongs to the
    /// pipeline, and no statistic depends on it.
    pub expected_study_map: Vec<StudyMapRow>,
    pub expected_study_details: Vec<StudyDetailRow>,
    pub identifiers: TruthIdentifiers,
}

pub fn truth_path(extracts_root: &Path, day: Day) -> PathBuf {
    extracts_root.join(format!("{day}.truth.json"))
}

pub fn load_truth(path: &Path) -> Result<GroundTruth> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Aggregates per-day expected catalog rows into the archive statistics
/// the real `summarize` must reproduce (compression-dependent fields
/// excluded; compare against `ArchiveStats::content_projection`).
pub fn expected_stats(truths: &[GroundTruth]) -> ArchiveStats {
    let map: Vec<StudyMapRow> =
        truths.iter().flat_map(|t| t.expected_study_map.iter().cloned()).collect();
    let details: Vec<StudyDetailRow> =
        truths.iter().flat_map(|t| t.expected_study_details.iter().cloned()).collect();
    crate::catalog::stats_from_rows(truths.len() as u64, &map, &details, &[], None)
}

// ---------------------------------------------------------------------------
// Day planning
// ---------------------------------------------------------------------------

/// How identity evidence is emitted for a visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Evidence {
    /// Device log present with the correct encounter.
    DeviceLog,
    /// No device log; EMR stay only.
    AdtOnly,
    /// No device log, no ADT events at all.
    Withheld,
    /// Device log present but carries the donor patient's encounter.
    Mislabeled { donor: usize },
}

#[derive(Debug, Clone)]
struct VisitPlan {
    ord: u32,
    mrn: String,
    name: String,
    visit_id: String,
    /// Bed segments of the visit: (bed index, window). Two entries for a
    /// transfer, one otherwise.
    segments: Vec<(usize, TimeRange)>,
    lifetime_id: bool,
    evidence: Evidence,
    /// Member of an OR-shared stream pair (evidence fixed to device logs
    /// with exact boundaries).
    shared: bool,
}

#[derive(Debug, Clone)]
struct StreamPlan {
    mpid: String,
    bed: usize,
    range: TimeRange,
    /// (occupant window, visit index); one entry normally, two for an
    /// OR-shared stream.
    occupants: Vec<(TimeRange, usize)>,
}

struct DayPlan {
    visits: Vec<VisitPlan>,
    streams: Vec<StreamPlan>,
}

fn day_rng(config: &ScenarioConfig, day: Day) -> ChaCha8Rng {
    use chrono::Datelike;
    let ordinal = day.0.num_days_from_ce() as u64;
    ChaCha8Rng::seed_from_u64(config.seed ^ ordinal.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn plan_day(config: &ScenarioConfig, day: Day, rng: &mut ChaCha8Rng) -> Result<DayPlan> {
    use chrono::Datelike;
    let n = config.patients_per_day as usize;
    let day_ordinal = day.0.num_days_from_ce() as u64;

    let mut visits: Vec<VisitPlan> = (0..n)
        .map(|i| {
            let ord = 100 + ((day_ordinal * config.patients_per_day as u64 + i as u64) % 800) as u32;
            VisitPlan {
                ord,
                mrn: format!("M{ord:03}"),
                name: format!("John{ord} Doe{ord}"),
                visit_id: format!("V{}", 5000 + ord),
                segments: Vec::new(),
                lifetime_id: false,
                evidence: Evidence::DeviceLog,
                shared: false,
            }
        })
        .collect();

    // Pair consecutive patients into OR-shared streams.
    let mut paired_with: Vec<Option<usize>> = vec![None; n];
    let mut i = 0;
    while i + 1 < n {
        if rng.random::<f64>() < config.or_shared_stream_fraction {
            paired_with[i] = Some(i + 1);
            visits[i].shared = true;
            visits[i + 1].shared = true;
            i += 2;
        } else {
            i += 1;
        }
    }

    // Schedule visits sequentially: globally non-overlapping windows with
    // at least 300 s between consecutive visits, so no two device-log or
    // stay intervals can ever shadow a neighbouring stream even after
    // attach/detach jitter (bounded by 120 s).
    let mut streams = Vec::new();
    let mut cursor = day.start() + Duration::seconds(400);
    let mut bed_cycle = 0usize;
    let nb = config.beds as usize;
    let mut idx = 0;
    while idx < n {
        let gap = 300 + rng.random_range(0..=120i64);
        if let Some(partner) = paired_with[idx] {
            // Shared stream: two back-to-back stays, exact handover.
            let dur_a =
                rng.random_range(config.stay_seconds_min..=config.stay_seconds_max) as i64;
            let dur_b =
                rng.random_range(config.stay_seconds_min..=config.stay_seconds_max) as i64;
            let start = cursor;
            let handover = start + Duration::seconds(dur_a);
            let end = handover + Duration::seconds(dur_b);
            let bed = bed_cycle % nb;
            bed_cycle += 1;
            visits[idx].segments = vec![(bed, TimeRange::new(start, handover))];
            visits[partner].segments = vec![(bed, TimeRange::new(handover, end))];
            streams.push(StreamPlan {
                mpid: format!("or{}", visits[idx].ord),
                bed,
                range: TimeRange::new(start, end),
                occupants: vec![
                    (TimeRange::new(start, handover), idx),
                    (TimeRange::new(handover, end), partner),
                ],
            });
            cursor = end + Duration::seconds(gap);
            idx += 2;
        } else {
            let dur = rng.random_range(config.stay_seconds_min..=config.stay_seconds_max) as i64;
            let start = cursor;
            let end = start + Duration::seconds(dur);
            let transfer = nb >= 2 && rng.random::<f64>() < config.transfer_rate;
            let bed = bed_cycle % nb;
            bed_cycle += 1;
            if transfer {
                let second_bed = bed_cycle % nb;
                bed_cycle += 1;
                let mid = start + Duration::seconds(dur / 2);
                visits[idx].segments =
                    vec![(bed, TimeRange::new(start, mid)), (second_bed, TimeRange::new(mid, end))];
                streams.push(StreamPlan {
                    mpid: format!("p{}", visits[idx].ord),
                    bed,
                    range: TimeRange::new(start, mid),
                    occupants: vec![(TimeRange::new(start, mid), idx)],
                });
                streams.push(StreamPlan {
                    mpid: format!("p{}x", visits[idx].ord),
                    bed: second_bed,
                    range: TimeRange::new(mid, end),
                    occupants: vec![(TimeRange::new(mid, end), idx)],
                });
            } else {
                visits[idx].segments = vec![(bed, TimeRange::new(start, end))];
                streams.push(StreamPlan {
                    mpid: format!("p{}", visits[idx].ord),
                    bed,
                    range: TimeRange::new(start, end),
                    occupants: vec![(TimeRange::new(start, end), idx)],
                });
            }
            cursor = end + Duration::seconds(gap);
            idx += 1;
        }
    }
    if cursor > day.end() - Duration::seconds(400) {
        return Err(Error::ConfigInvalid(format!(
            "scheduled visits overflow day {day}; reduce patients_per_day or stay lengths"
        )));
    }

    // Lifetime-id and evidence decisions. Shared streams are always
    // missing ids (profile-mode monitors) and always device-log evidenced
    // with exact boundaries.
    for v in visits.iter_mut() {
        if v.shared {
            v.lifetime_id = false;
        } else {
            v.lifetime_id = rng.random::<f64>() >= config.missing_lifetime_id_fraction;
        }
    }
    for i in 0..n {
        if visits[i].shared || visits[i].lifetime_id {
            continue;
        }
        let r = rng.random::<f64>();
        visits[i].evidence = if r < config.evidence_withheld_rate {
            Evidence::Withheld
        } else if r < config.evidence_withheld_rate + config.evidence_mislabel_rate {
            Evidence::Mislabeled { donor: usize::MAX } // donor resolved below
        } else if r
            < config.evidence_withheld_rate
                + config.evidence_mislabel_rate
                + config.adt_only_rate
        {
            Evidence::AdtOnly
        } else {
            Evidence::DeviceLog
        };
    }
    // Mislabel donors: the next patient (cyclically) whose encounter is
    // actually present in ADT; without one the mislabel degrades to a
    // correct device log.
    for i in 0..n {
        if !matches!(visits[i].evidence, Evidence::Mislabeled { .. }) {
            continue;
        }
        let donor = (1..n)
            .map(|step| (i + step) % n)
            .find(|&j| !matches!(visits[j].evidence, Evidence::Withheld));
        visits[i].evidence = match donor {
            Some(j) => Evidence::Mislabeled { donor: j },
            None => Evidence::DeviceLog,
        };
    }

    Ok(DayPlan { visits, streams })
}

// ---------------------------------------------------------------------------
// Waveform morphology
// ---------------------------------------------------------------------------

/// Triangle wave with period 1, range [-1, 1]; exact IEEE arithmetic.
fn tri(x: f64) -> f64 {
    1.0 - 4.0 * ((x - x.floor()) - 0.5).abs()
}

/// Parabolic bump on [0, 1], peak 1 at the midpoint, 0 outside.
fn bump(u: f64) -> f64 {
    if (0.0..1.0).contains(&u) {
        4.0 * u * (1.0 - u)
    } else {
        0.0
    }
}

/// Sample value at `t` seconds for a wave of the given rate. Morphology is
/// a stylized periodic template chosen by rate class — the pipeline never
/// interprets shapes, only rates, units, gaps, and timing.
pub fn synth_sample(rate: u32, t: f64) -> f64 {
    match rate {
        // ECG-like: one beat per second, flat baseline with P, QRS, T.
        500 => {
            let p = t - t.floor();
            if p < 0.08 {
                0.12 * bump(p / 0.08)
            } else if p < 0.12 {
                0.0
            } else if p < 0.14 {
                -0.16
            } else if p < 0.18 {
                1.25 * bump((p - 0.14) / 0.04)
            } else if p < 0.20 {
                -0.28
            } else if p < 0.32 {
                0.0
            } else if p < 0.48 {
                0.30 * bump((p - 0.32) / 0.16)
            } else {
                0.0
            }
        }
        // Pleth/pressure-like: raised slow triangle.
        125 => 0.50 + 0.45 * tri(1.25 * t),
        // Respiration-like: slow shallow triangle.
        63 => 0.30 * tri(0.25 * t),
        _ => tri(t),
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct TableSet {
    numerics: Vec<NumericRecord>,
    waves: Vec<WaveSampleRecord>,
    enumerations: Vec<EnumerationRecord>,
    alerts: Vec<AlertRecord>,
    device_logs: Vec<DeviceLogRecord>,
    adt_events: Vec<AdtEvent>,
}

fn whole_seconds(range: &TimeRange) -> i64 {
    (range.end - range.start).num_seconds()
}

fn render_tables(
    config: &ScenarioConfig,
    plan: &DayPlan,
    beds: &[BedInfo],
    rng: &mut ChaCha8Rng,
) -> TableSet {
    let mut t = TableSet {
        numerics: Vec::new(),
        waves: Vec::new(),
        enumerations: Vec::new(),
        alerts: Vec::new(),
        device_logs: Vec::new(),
        adt_events: Vec::new(),
    };
    let mut event_id: u64 = 1;

    // --- ADT events (EMR side, normalized bed labels) ------------------
    for (vi, v) in plan.visits.iter().enumerate() {
        if matches!(v.evidence, Evidence::Withheld) {
            continue;
        }
        let mut push = |kind: AdtEventKind, bed: usize, at: Timestamp| {
            t.adt_events.push(AdtEvent {
                event_id,
                patient_name: v.name.clone(),
                mrn: v.mrn.clone(),
                visit_id: v.visit_id.clone(),
                event: kind,
                bed: beds[bed].emr_label.clone(),
                at,
            });
            event_id += 1;
        };
        match v.segments.as_slice() {
            [(bed, window)] => {
                push(AdtEventKind::Admission, *bed, window.start);
                push(AdtEventKind::Discharge, *bed, window.end);
            }
            [(bed1, w1), (bed2, w2)] => {
                push(AdtEventKind::Admission, *bed1, w1.start);
                push(AdtEventKind::TransferOut, *bed1, w1.end);
                push(AdtEventKind::TransferIn, *bed2, w2.start);
                push(AdtEventKind::Discharge, *bed2, w2.end);
            }
            _ => unreachable!("visits have one or two segments"),
        }

        // ADT pathologies; all are provably removed by sanitization, so
        // the true stay intervals survive unchanged.
        let (first_bed, first_window) = v.segments[0];
        if rng.random::<f64>() < config.adt_noise.duplicates {
            // Exact duplicate of the admission row under a fresh event id.
            t.adt_events.push(AdtEvent {
                event_id,
                patient_name: v.name.clone(),
                mrn: v.mrn.clone(),
                visit_id: v.visit_id.clone(),
                event: AdtEventKind::Admission,
                bed: beds[first_bed].emr_label.clone(),
                at: first_window.start,
            });
            event_id += 1;
        }
        if config.beds >= 2 && rng.random::<f64>() < config.adt_noise.zero_length_pairs {
            // In/out pair at the same instant on a bed this patient never
            // occupies at that moment — a zero-length stay, dropped whole.
            let other = (first_bed + 1) % beds.len();
            let at = first_window.start + Duration::seconds(5.min(whole_seconds(&first_window) - 1));
            let mut push2 = |kind: AdtEventKind| {
                t.adt_events.push(AdtEvent {
                    event_id,
                    patient_name: v.name.clone(),
                    mrn: v.mrn.clone(),
                    visit_id: v.visit_id.clone(),
                    event: kind,
                    bed: beds[other].emr_label.clone(),
                    at,
                });
                event_id += 1;
            };
            push2(AdtEventKind::TransferIn);
            push2(AdtEventKind::TransferOut);
        }
        if rng.random::<f64>() < config.adt_noise.readmit_chains {
            // Out/in pair at one instant inside the first stay — splits it
            // into two zero-gap stays that merge right back.
            let len = whole_seconds(&first_window);
            if len >= 4 {
                let at = first_window.start + Duration::seconds(len / 2);
                let mut push2 = |kind: AdtEventKind| {
                    t.adt_events.push(AdtEvent {
                        event_id,
                        patient_name: v.name.clone(),
                        mrn: v.mrn.clone(),
                        visit_id: v.visit_id.clone(),
                        event: kind,
                        bed: beds[first_bed].emr_label.clone(),
                        at,
                    });
                    event_id += 1;
                };
                push2(AdtEventKind::TransferOut);
                push2(AdtEventKind::TransferIn);
            }
        }
        let _ = vi;
    }

    // --- Device logs (device side, device bed labels) -------------------
    for v in plan.visits.iter() {
        let encounter = match v.evidence {
            Evidence::Withheld | Evidence::AdtOnly => continue,
            Evidence::Mislabeled { donor } => plan.visits[donor].visit_id.clone(),
            Evidence::DeviceLog => v.visit_id.clone(),
        };
        for (bed, window) in &v.segments {
            let (attach, detach) = if v.shared {
                // Exact boundaries: the handover instant is the cut.
                (window.start, window.end)
            } else {
                (
                    window.start - Duration::seconds(rng.random_range(0..=120i64)),
                    window.end + Duration::seconds(rng.random_range(0..=120i64)),
                )
            };
            t.device_logs.push(DeviceLogRecord {
                encounter_id: encounter.clone(),
                bed_label: beds[*bed].device_label.clone(),
                attach_at: attach,
                detach_at: detach,
            });
        }
    }

    // --- Monitor data (numerics, waves, enumerations, alerts) ----------
    for stream in &plan.streams {
        let bed = &beds[stream.bed];
        let len = whole_seconds(&stream.range);
        let single = stream.occupants.len() == 1;
        let lifetime = single && plan.visits[stream.occupants[0].1].lifetime_id;
        let lifetime_mrn =
            lifetime.then(|| plan.visits[stream.occupants[0].1].mrn.clone());

        // Vitals every 5 s, plus the final second so the stream's observed
        // extent always equals its planned window exactly.
        let hr_base = 110.0 + (stream.occupants[0].1 % 7) as f64 * 4.0;
        let mut secs: Vec<i64> = (0..len).step_by(5).collect();
        if *secs.last().unwrap_or(&0) != len - 1 {
            secs.push(len - 1);
        }
        for sec in &secs {
            let at = stream.range.start + Duration::seconds(*sec);
            let hr = round1(hr_base + 6.0 * tri(*sec as f64 / 240.0) + (rng.random::<f64>() - 0.5) * 3.0);
            t.numerics.push(NumericRecord {
                monitor_patient_id: stream.mpid.clone(),
                bed_label: bed.device_label.clone(),
                observed_at: at,
                metric: Metric::Hr,
                value: hr,
                unit: "bpm".into(),
                lifetime_id: lifetime_mrn.clone(),
            });
        }
        let mut sec = 2i64;
        while sec < len {
            let at = stream.range.start + Duration::seconds(sec);
            let spo2 = round1(96.0 + 2.0 * tri(sec as f64 / 600.0) + (rng.random::<f64>() - 0.5) * 1.6)
                .min(100.0);
            t.numerics.push(NumericRecord {
                monitor_patient_id: stream.mpid.clone(),
                bed_label: bed.device_label.clone(),
                observed_at: at,
                metric: Metric::SpO2,
                value: spo2,
                unit: "%".into(),
                lifetime_id: lifetime_mrn.clone(),
            });
            sec += 10;
        }

        // Waves in 10-second blocks tiling the stream range exactly; the
        // template is continuous across block boundaries.
        for symbol in &config.wave_symbols {
            let spec = wave_spec(symbol).expect("validated symbol");
            let rate = spec.rate;
            let mut offset = 0i64;
            while offset < len {
                let block_len = 10.min(len - offset);
                let n = (block_len * rate as i64) as usize;
                let mut samples = Vec::with_capacity(n);
                for k in 0..n {
                    let tt = offset as f64 + k as f64 / rate as f64;
                    let noise = (rng.random::<f64>() - 0.5) * 0.02;
                    samples.push(synth_sample(rate, tt) + noise);
                }
                t.waves.push(WaveSampleRecord {
                    monitor_patient_id: stream.mpid.clone(),
                    bed_label: bed.device_label.clone(),
                    wave: symbol.clone(),
                    block_start: stream.range.start + Duration::seconds(offset),
                    sample_rate: rate,
                    samples,
                });
                offset += block_len;
            }
        }

        // Enumerations: the lifetime id claim, plus a rhythm label.
        if let Some(mrn) = &lifetime_mrn {
            t.enumerations.push(EnumerationRecord {
                monitor_patient_id: stream.mpid.clone(),
                bed_label: bed.device_label.clone(),
                observed_at: stream.range.start,
                key: LIFETIME_ID_KEY.into(),
                value: mrn.clone(),
            });
        }
        if len > 20 {
            t.enumerations.push(EnumerationRecord {
                monitor_patient_id: stream.mpid.clone(),
                bed_label: bed.device_label.clone(),
                observed_at: stream.range.start + Duration::seconds(10),
                key: "Rhythm".into(),
                value: "NSR".into(),
            });
        }

        // Alerts per occupant. Identified patients get their name embedded
        // in free text (the de-identifier must scrub it); evidence-withheld
        // patients are anonymous at the monitor too, so their alerts carry
        // no name that the pipeline could never have known to scrub.
        for (window, vi) in &stream.occupants {
            let v = &plan.visits[*vi];
            let wlen = whole_seconds(window);
            let text = if matches!(v.evidence, Evidence::Withheld) {
                "Assess patient at bedside".to_string()
            } else {
                format!("Assess {} at bedside", v.name)
            };
            t.alerts.push(AlertRecord {
                monitor_patient_id: stream.mpid.clone(),
                bed_label: bed.device_label.clone(),
                at: window.start + Duration::seconds(30.min(wlen - 1)),
                severity: AlertSeverity::Yellow,
                text,
            });
            if wlen >= 120 {
                t.alerts.push(AlertRecord {
                    monitor_patient_id: stream.mpid.clone(),
                    bed_label: bed.device_label.clone(),
                    at: window.start + Duration::seconds(wlen / 2),
                    severity: AlertSeverity::Red,
                    text: "Desaturation episode".into(),
                });
            }
        }
    }

    t.numerics.sort_by(|a, b| {
        (a.observed_at, &a.monitor_patient_id, a.metric.as_str())
            .cmp(&(b.observed_at, &b.monitor_patient_id, b.metric.as_str()))
    });
    t.waves.sort_by(|a, b| {
        (a.block_start, &a.monitor_patient_id, &a.wave)
            .cmp(&(b.block_start, &b.monitor_patient_id, &b.wave))
    });
    t.enumerations.sort_by(|a, b| {
        (a.observed_at, &a.monitor_patient_id, &a.key)
            .cmp(&(b.observed_at, &b.monitor_patient_id, &b.key))
    });
    t.alerts.sort_by(|a, b| {
        (a.at, &a.monitor_patient_id, a.severity.as_str())
            .cmp(&(b.at, &b.monitor_patient_id, b.severity.as_str()))
    });
    t.device_logs
        .sort_by(|a, b| (a.attach_at, &a.encounter_id).cmp(&(b.attach_at, &b.encounter_id)));
    t.adt_events.sort_by_key(|e| (e.at, e.event_id));
    t
}

fn build_truth(
    config: &ScenarioConfig,
    day: Day,
    plan: &DayPlan,
    beds: &[BedInfo],
    tables: &TableSet,
) -> GroundTruth {
    let bed_units: BTreeMap<String, String> =
        beds.iter().map(|b| (b.emr_label.clone(), b.unit.clone())).collect();

    let mut streams = Vec::new();
    let mut studies = Vec::new();
    for sp in &plan.streams {
        let bed = &beds[sp.bed];
        let single = sp.occupants.len() == 1;
        let lifetime = single && plan.visits[sp.occupants[0].1].lifetime_id;
        streams.push(StreamTruth {
            monitor_patient_id: sp.mpid.clone(),
            bed_label: bed.device_label.clone(),
            normalized_bed: bed.emr_label.clone(),
            range: sp.range,
            lifetime_id_present: lifetime,
            segments: sp
                .occupants
                .iter()
                .map(|(w, vi)| TruthSegment { range: *w, mrn: plan.visits[*vi].mrn.clone() })
                .collect(),
        });

        // Expected studies: one per evidence segment of the stream.
        let mut push_study = |range: TimeRange, subject: Option<String>, true_mrn: String, method: LinkMethod| {
            studies.push(TruthStudy {
                study_id: study_identifier(&sp.mpid, &bed.emr_label, range.start),
                monitor_patient_id: sp.mpid.clone(),
                normalized_bed: bed.emr_label.clone(),
                range,
                subject,
                true_mrn,
                method: method.as_str().to_string(),
            });
        };
        if lifetime {
            let v = &plan.visits[sp.occupants[0].1];
            push_study(sp.range, Some(v.mrn.clone()), v.mrn.clone(), LinkMethod::LifetimeId);
        } else if !single {
            for (w, vi) in &sp.occupants {
                let v = &plan.visits[*vi];
                push_study(*w, Some(v.mrn.clone()), v.mrn.clone(), LinkMethod::DeviceLog);
            }
        } else {
            let v = &plan.visits[sp.occupants[0].1];
            match v.evidence {
                Evidence::DeviceLog => {
                    push_study(sp.range, Some(v.mrn.clone()), v.mrn.clone(), LinkMethod::DeviceLog)
                }
                Evidence::Mislabeled { donor } => push_study(
                    sp.range,
                    Some(plan.visits[donor].mrn.clone()),
                    v.mrn.clone(),
                    LinkMethod::DeviceLog,
                ),
                Evidence::AdtOnly => {
                    push_study(sp.range, Some(v.mrn.clone()), v.mrn.clone(), LinkMethod::AdtOverlap)
                }
                Evidence::Withheld => {
                    push_study(sp.range, None, v.mrn.clone(), LinkMethod::Unmatched)
                }
            }
        }
    }
    studies.sort_by(|a, b| (a.range.start, &a.study_id).cmp(&(b.range.start, &b.study_id)));

    let lifetime_of: BTreeMap<&str, bool> =
        streams.iter().map(|s| (s.monitor_patient_id.as_str(), s.lifetime_id_present)).collect();

    let mut expected_study_map = Vec::new();
    let mut expected_study_details = Vec::new();
    for s in &studies {
        expected_study_map.push(StudyMapRow {
            study_id: s.study_id.clone(),
            subject_id: s.subject.clone(),
            lifetime_id_source: lifetime_of[s.monitor_patient_id.as_str()],
            bed: s.normalized_bed.clone(),
            clinical_unit: clinical_unit(&bed_units, &s.normalized_bed),
            start: s.range.start,
            end: s.range.end,
            storage_path: String::new(),
            linkage_method: s.method.clone(),
        });
        for symbol in &config.wave_symbols {
            let spec = wave_spec(symbol).expect("validated symbol");
            let n = whole_seconds(&s.range) as u64 * spec.rate as u64;
            expected_study_details.push(StudyDetailRow {
                study_id: s.study_id.clone(),
                wave_symbol: symbol.clone(),
                unit: spec.unit.to_string(),
                rate: spec.rate,
                n_samples: n,
                size_bytes: 2 * n,
            });
        }
    }

    let row_counts: BTreeMap<String, u64> = [
        ("numerics", tables.numerics.len()),
        ("wave_samples", tables.waves.len()),
        ("enumerations", tables.enumerations.len()),
        ("alerts", tables.alerts.len()),
        ("device_logs", tables.device_logs.len()),
        ("adt_events", tables.adt_events.len()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v as u64))
    .collect();

    GroundTruth {
        day,
        seed: config.seed,
        streams,
        studies,
        row_counts,
        expected_study_map,
        expected_study_details,
        identifiers: TruthIdentifiers {
            mrns: plan.visits.iter().map(|v| v.mrn.clone()).collect(),
            patient_names: plan.visits.iter().map(|v| v.name.clone()).collect(),
            visit_ids: plan.visits.iter().map(|v| v.visit_id.clone()).collect(),
        },
    }
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("in-memory csv");
    for row in rows {
        writer.write_record(&row).expect("in-memory csv");
    }
    writer.into_inner().expect("in-memory csv")
}

fn wave_csv_bytes(waves: &[WaveSampleRecord]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&WAVE_SAMPLES_HEADER.join(","));
    out.push('\n');
    for w in waves {
        out.push_str(&w.to_csv_line());
        out.push('\n');
    }
    out.into_bytes()
}

/// Generates one day bundle plus its ground truth. The bundle directory is
/// `<out_parent>/<day>`; ground truth is written next to it as
/// `<day>.truth.json`. Regenerating an existing day overwrites it.
pub fn generate_day(
    config: &ScenarioConfig,
    day: Day,
    out_parent: &Path,
) -> Result<(PathBuf, GroundTruth)> {
    config.validate()?;
    let beds = bed_roster(config.beds);
    let mut rng = day_rng(config, day);
    let plan = plan_day(config, day, &mut rng)?;
    let tables = render_tables(config, &plan, &beds, &mut rng);
    let truth = build_truth(config, day, &plan, &beds, &tables);

    let dir = out_parent.join(day.to_string());
    fs::create_dir_all(&dir)?;

    let files: Vec<(&str, Vec<u8>)> = vec![
        (
            "numerics.csv",
            csv_bytes(&NUMERICS_HEADER, tables.numerics.iter().map(|r| r.to_row()).collect()),
        ),
        ("wave_samples.csv", wave_csv_bytes(&tables.waves)),
        (
            "enumerations.csv",
            csv_bytes(
                &ENUMERATIONS_HEADER,
                tables.enumerations.iter().map(|r| r.to_row()).collect(),
            ),
        ),
        ("alerts.csv", csv_bytes(&ALERTS_HEADER, tables.alerts.iter().map(|r| r.to_row()).collect())),
        (
            "device_logs.csv",
            csv_bytes(&DEVICE_LOGS_HEADER, tables.device_logs.iter().map(|r| r.to_row()).collect()),
        ),
        (
            "adt_events.csv",
            csv_bytes(&ADT_EVENTS_HEADER, tables.adt_events.iter().map(|r| r.to_row()).collect()),
        ),
        (
            COUNTS_FILE,
            csv_bytes(
                &["table", "rows"],
                TABLE_FILES
                    .iter()
                    .map(|name| {
                        let table = name.trim_end_matches(".csv");
                        vec![table.to_string(), truth.row_counts[table].to_string()]
                    })
                    .collect(),
            ),
        ),
    ];

    let mut manifest = String::new();
    manifest.push_str("file_name,created_at,size_bytes,sha256\n");
    let created = format_timestamp(day.end());
    for (name, bytes) in &files {
        manifest.push_str(&format!("{name},{created},{},{}\n", bytes.len(), sha256_bytes(bytes)));
        fs::write(dir.join(name), bytes)?;
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;

    let truth_file = truth_path(out_parent, day);
    fs::write(&truth_file, serde_json::to_vec_pretty(&truth)?)?;
    Ok((dir, truth))
}

/// Filesystem layout of a generated corpus.
#[derive(Debug, Clone)]
pub struct CorpusLayout {
    pub root: PathBuf,
    pub extracts_root: PathBuf,
    pub bed_map: PathBuf,
    pub bed_units: PathBuf,
    /// (day, bundle directory) in chronological order.
    pub days: Vec<(Day, PathBuf)>,
}

/// Generates `config.days` consecutive day bundles under `root/extracts`,
/// plus the bed label override map (empty — generated labels normalize by
/// the standard rule) and the bed-to-unit map the pipeline needs.
pub fn generate_corpus(config: &ScenarioConfig, root: &Path) -> Result<CorpusLayout> {
    config.validate()?;
    let extracts_root = root.join("extracts");
    fs::create_dir_all(&extracts_root)?;

    let beds = bed_roster(config.beds);
    let bed_map = root.join("bed_map.csv");
    fs::write(&bed_map, "device_label,emr_label\n")?;
    let bed_units = root.join("bed_units.csv");
    let mut units = String::from("bed,unit\n");
    for b in &beds {
        units.push_str(&format!("{},{}\n", b.emr_label, b.unit));
    }
    fs::write(&bed_units, units)?;

    let mut days = Vec::new();
    let mut day = config.start_day;
    for _ in 0..config.days {
        let (dir, _) = generate_day(config, day, &extracts_root)?;
        days.push((day, dir));
        day = day.succ();
    }
    Ok(CorpusLayout { root: root.to_path_buf(), extracts_root, bed_map, bed_units, days })
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Linkage quality against ground truth, measured on streams that lack a
/// lifetime id (streams with one are trivially correct).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkScore {
    pub missing_id_streams: usize,
    /// Missing-id streams with at least one assigned segment.
    pub assigned_streams: usize,
    /// `assigned_streams / missing_id_streams`; `None` when no stream was
    /// missing an id.
    pub coverage: Option<f64>,
    pub assigned_seconds: f64,
    pub correct_seconds: f64,
    /// Time-weighted share of assigned seconds carrying the true MRN;
    /// `None` when nothing was assigned.
    pub accuracy: Option<f64>,
}

/// Scores a linkage run against the generated truth. Inferred segments are
/// compared to true occupancy second-by-second (time-weighted), so partial
/// credit is given when only part of a stream is linked correctly.
pub fn score_linkage(linkage: &DayLinkage, truth: &GroundTruth) -> LinkScore {
    let truth_by_mpid: BTreeMap<&str, &StreamTruth> =
        truth.streams.iter().map(|s| (s.monitor_patient_id.as_str(), s)).collect();

    let mut score = LinkScore::default();
    for stream in &linkage.streams {
        let Some(st) = truth_by_mpid.get(stream.monitor_patient_id.as_str()) else {
            continue;
        };
        if st.lifetime_id_present {
            continue;
        }
        score.missing_id_streams += 1;
        if stream.is_assigned() {
            score.assigned_streams += 1;
        }
        for seg in &stream.segments {
            let Some(mrn) = &seg.mrn else { continue };
            score.assigned_seconds += seg.range.duration_seconds();
            for ts in &st.segments {
                if &ts.mrn == mrn {
                    score.correct_seconds += seg.range.overlap_seconds(&ts.range);
                }
            }
        }
    }
    score.coverage = (score.missing_id_streams > 0)
        .then(|| score.assigned_streams as f64 / score.missing_id_streams as f64);
    score.accuracy =
        (score.assigned_seconds > 0.0).then(|| score.correct_seconds / score.assigned_seconds);
    score
}

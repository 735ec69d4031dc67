//! Day-partitioned study catalog: publication, queries, and summaries.
//!
//! The catalog is a set of three flat CSV tables, each partitioned by
//! calendar day so that republishing one day never touches another:
//!
//! ```text
//! catalog/
//!   study_map/day=YYYY-MM-DD/part.csv
//!   study_details/day=YYYY-MM-DD/part.csv
//!   waveform_manifest/day=YYYY-MM-DD/part.csv
//! ```
//!
//! `study_map` holds one row per study (who, where, when, and where the
//! packed record lives), `study_details` one row per wave per study, and
//! `waveform_manifest` one row per packed archive with its size and digest.
//! Publication of a day is atomic per table (write to a temp file, then
//! rename) and guarded by a per-day lock file so concurrent writers fail
//! fast instead of interleaving.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{is_known_symbol, WAVE_REGISTRY};
use crate::time::{format_timestamp, parse_timestamp, Day, TimeRange, Timestamp};

pub const STUDY_MAP_TABLE: &str = "study_map";
pub const STUDY_DETAILS_TABLE: &str = "study_details";
pub const WAVEFORM_MANIFEST_TABLE: &str = "waveform_manifest";
pub const CATALOG_TABLES: [&str; 3] =
    [STUDY_MAP_TABLE, STUDY_DETAILS_TABLE, WAVEFORM_MANIFEST_TABLE];
pub const PART_FILE: &str = "part.csv";

pub const STUDY_MAP_HEADER: [&str; 9] = [
    "study_id",
    "subject_id",
    "lifetime_id_source",
    "bed",
    "clinical_unit",
    "start",
    "end",
    "storage_path",
    "linkage_method",
];
pub const STUDY_DETAILS_HEADER: [&str; 6] =
    ["study_id", "wave_symbol", "unit", "rate", "n_samples", "size_bytes"];
pub const WAVEFORM_MANIFEST_HEADER: [&str; 4] = ["day", "zip_name", "size_bytes", "sha256"];

/// Clinical unit recorded when the bed-to-unit map has no entry for a bed.
pub const UNKNOWN_UNIT: &str = "unknown";

/// One row of `study_map`. `subject_id` is the MRN in the identified
/// catalog and the pseudonym in the de-identified catalog; it is `None`
/// for studies that could not be matched to any patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyMapRow {
    pub study_id: String,
    pub subject_id: Option<String>,
    pub lifetime_id_source: bool,
    pub bed: String,
    pub clinical_unit: String,
    pub start: Timestamp,
    pub end: Timestamp,
    pub storage_path: String,
    pub linkage_method: String,
}

impl StudyMapRow {
    pub fn range(&self) -> TimeRange {
        TimeRange::new(self.start, self.end)
    }
}

/// One row of `study_details`: a single wave inside a single study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyDetailRow {
    pub study_id: String,
    pub wave_symbol: String,
    pub unit: String,
    pub rate: u32,
    pub n_samples: u64,
    pub size_bytes: u64,
}

/// One row of `waveform_manifest`: a packed study archive and its digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveformManifestRow {
    pub day: Day,
    pub zip_name: String,
    pub size_bytes: u64,
    pub sha256: String,
}

/// Everything the catalog records for one day, handed to [`publish_day`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DayPublish {
    pub study_map: Vec<StudyMapRow>,
    pub study_details: Vec<StudyDetailRow>,
    pub waveform_manifest: Vec<WaveformManifestRow>,
}

fn schema_err(table: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::SchemaViolation { table: table.to_string(), line: line as u64, msg: msg.into() }
}

fn parse_u64(table: &str, line: usize, field: &str, raw: &str) -> Result<u64> {
    raw.parse()
        .map_err(|e| schema_err(table, line, format!("bad {field} {raw:?}: {e}")))
}

// ---------------------------------------------------------------------------
// Partition layout and locking
// ---------------------------------------------------------------------------

pub fn partition_dir(catalog_root: &Path, table: &str, day: Day) -> PathBuf {
    catalog_root.join(table).join(format!("day={day}"))
}

pub fn partition_file(catalog_root: &Path, table: &str, day: Day) -> PathBuf {
    partition_dir(catalog_root, table, day).join(PART_FILE)
}

/// Exclusive advisory lock on one day's partitions, held for the duration
/// of a publish. Implemented as a `create_new` lock file under
/// `catalog_root/locks/`; dropping the guard removes the file.
#[derive(Debug)]
pub struct PartitionLock {
    path: PathBuf,
}

impl PartitionLock {
    pub fn acquire(catalog_root: &Path, day: Day) -> Result<PartitionLock> {
        let dir = catalog_root.join("locks");
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("day={day}.lock"));
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(PartitionLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                Err(Error::PartitionLocked(path.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for PartitionLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------------------
// Publication
// ---------------------------------------------------------------------------

/// Publishes (or atomically republishes) one day's catalog partitions.
///
/// Every study in `study_map` must have a packed archive named
/// `<study_id>.zip` in the waveform manifest; otherwise the day is
/// considered partial and nothing is written. When `storage_base` is
/// given, each `storage_path` (resolved against the base if relative)
/// must exist on disk.
///
/// A day with zero studies is legal and produces header-only partition
/// files, which is how "we processed this day and found nothing" is
/// distinguished from "this day was never processed".
pub fn publish_day(
    catalog_root: &Path,
    day: Day,
    delta: &DayPublish,
    storage_base: Option<&Path>,
) -> Result<()> {
    let map_ids: BTreeSet<&str> = delta.study_map.iter().map(|r| r.study_id.as_str()).collect();
    let packed: BTreeSet<&str> = delta
        .waveform_manifest
        .iter()
        .map(|r| r.zip_name.trim_end_matches(".zip"))
        .collect();
    let missing = map_ids.iter().filter(|id| !packed.contains(*id)).count();
    if missing > 0 {
        return Err(Error::PartialDay { day: day.to_string(), missing });
    }
    for row in &delta.study_details {
        if !map_ids.contains(row.study_id.as_str()) {
            return Err(schema_err(
                STUDY_DETAILS_TABLE,
                0,
                format!("detail row references unknown study {:?}", row.study_id),
            ));
        }
    }
    if let Some(base) = storage_base {
        for row in &delta.study_map {
            let path = resolve_storage_path(base, &row.storage_path);
            if !path.exists() {
                return Err(Error::MapMissingEntry(format!(
                    "storage path {} for study {} does not exist",
                    path.display(),
                    row.study_id
                )));
            }
        }
    }

    let _lock = PartitionLock::acquire(catalog_root, day)?;

    let mut map_rows = delta.study_map.clone();
    map_rows.sort_by(|a, b| (a.start, &a.study_id).cmp(&(b.start, &b.study_id)));
    let mut detail_rows = delta.study_details.clone();
    detail_rows.sort_by(|a, b| (&a.study_id, &a.wave_symbol).cmp(&(&b.study_id, &b.wave_symbol)));
    let mut manifest_rows = delta.waveform_manifest.clone();
    manifest_rows.sort_by(|a, b| a.zip_name.cmp(&b.zip_name));

    write_partition(catalog_root, STUDY_MAP_TABLE, day, &STUDY_MAP_HEADER, &map_rows, |w, r| {
        w.write_record([
            r.study_id.as_str(),
            r.subject_id.as_deref().unwrap_or(""),
            if r.lifetime_id_source { "true" } else { "false" },
            r.bed.as_str(),
            r.clinical_unit.as_str(),
            &format_timestamp(r.start),
            &format_timestamp(r.end),
            r.storage_path.as_str(),
            r.linkage_method.as_str(),
        ])
    })?;
    write_partition(
        catalog_root,
        STUDY_DETAILS_TABLE,
        day,
        &STUDY_DETAILS_HEADER,
        &detail_rows,
        |w, r| {
            w.write_record([
                r.study_id.as_str(),
                r.wave_symbol.as_str(),
                r.unit.as_str(),
                &r.rate.to_string(),
                &r.n_samples.to_string(),
                &r.size_bytes.to_string(),
            ])
        },
    )?;
    write_partition(
        catalog_root,
        WAVEFORM_MANIFEST_TABLE,
        day,
        &WAVEFORM_MANIFEST_HEADER,
        &manifest_rows,
        |w, r| {
            w.write_record([
                &r.day.to_string(),
                r.zip_name.as_str(),
                &r.size_bytes.to_string(),
                r.sha256.as_str(),
            ])
        },
    )?;
    Ok(())
}

fn resolve_storage_path(base: &Path, storage_path: &str) -> PathBuf {
    let p = Path::new(storage_path);
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

fn write_partition<T>(
    catalog_root: &Path,
    table: &str,
    day: Day,
    header: &[&str],
    rows: &[T],
    mut emit: impl FnMut(&mut csv::Writer<Vec<u8>>, &T) -> csv::Result<()>,
) -> Result<()> {
    let dir = partition_dir(catalog_root, table, day);
    fs::create_dir_all(&dir)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        emit(&mut writer, row)?;
    }
    let bytes = writer.into_inner().expect("csv into_inner on Vec cannot fail");
    let tmp = dir.join(".part.csv.tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, dir.join(PART_FILE))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Reading
// ---------------------------------------------------------------------------

/// Days that have a published `study_map` partition, sorted ascending.
pub fn list_days(catalog_root: &Path) -> Result<Vec<Day>> {
    let dir = catalog_root.join(STUDY_MAP_TABLE);
    let mut days = BTreeSet::new();
    if !dir.exists() {
        return Ok(Vec::new());
    }
    for entry in fs::read_dir(&dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(raw) = name.strip_prefix("day=") {
            if entry.path().join(PART_FILE).exists() {
                days.insert(Day::parse(raw)?);
            }
        }
    }
    Ok(days.into_iter().collect())
}

fn read_rows<T>(
    catalog_root: &Path,
    table: &str,
    header: &[&str],
    mut parse: impl FnMut(usize, &csv::StringRecord) -> Result<T>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for day in list_days(catalog_root)? {
        let path = partition_file(catalog_root, table, day);
        if !path.exists() {
            return Err(Error::PartialDay { day: day.to_string(), missing: 1 });
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(&path)?;
        let got = reader.headers()?.clone();
        if got.iter().ne(header.iter().copied()) {
            return Err(schema_err(table, 1, format!("unexpected header {got:?}")));
        }
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i + 2;
            if record.len() != header.len() {
                return Err(schema_err(
                    table,
                    line,
                    format!("expected {} fields, found {}", header.len(), record.len()),
                ));
            }
            out.push(parse(line, &record)?);
        }
    }
    Ok(out)
}

pub fn load_study_map(catalog_root: &Path) -> Result<Vec<StudyMapRow>> {
    read_rows(catalog_root, STUDY_MAP_TABLE, &STUDY_MAP_HEADER, |line, r| {
        let t = STUDY_MAP_TABLE;
        Ok(StudyMapRow {
            study_id: r[0].to_string(),
            subject_id: if r[1].is_empty() { None } else { Some(r[1].to_string()) },
            lifetime_id_source: match &r[2] {
                "true" => true,
                "false" => false,
                other => {
                    return Err(schema_err(t, line, format!("bad lifetime_id_source {other:?}")))
                }
            },
            bed: r[3].to_string(),
            clinical_unit: r[4].to_string(),
            start: parse_timestamp(&r[5])?,
            end: parse_timestamp(&r[6])?,
            storage_path: r[7].to_string(),
            linkage_method: r[8].to_string(),
        })
    })
}

pub fn load_study_details(catalog_root: &Path) -> Result<Vec<StudyDetailRow>> {
    read_rows(catalog_root, STUDY_DETAILS_TABLE, &STUDY_DETAILS_HEADER, |line, r| {
        let t = STUDY_DETAILS_TABLE;
        Ok(StudyDetailRow {
            study_id: r[0].to_string(),
            wave_symbol: r[1].to_string(),
            unit: r[2].to_string(),
            rate: parse_u64(t, line, "rate", &r[3])? as u32,
            n_samples: parse_u64(t, line, "n_samples", &r[4])?,
            size_bytes: parse_u64(t, line, "size_bytes", &r[5])?,
        })
    })
}

pub fn load_waveform_manifest(catalog_root: &Path) -> Result<Vec<WaveformManifestRow>> {
    read_rows(catalog_root, WAVEFORM_MANIFEST_TABLE, &WAVEFORM_MANIFEST_HEADER, |line, r| {
        let t = WAVEFORM_MANIFEST_TABLE;
        Ok(WaveformManifestRow {
            day: Day::parse(&r[0])
                .map_err(|e| schema_err(t, line, format!("bad day {:?}: {e}", &r[0])))?,
            zip_name: r[1].to_string(),
            size_bytes: parse_u64(t, line, "size_bytes", &r[2])?,
            sha256: r[3].to_string(),
        })
    })
}

// ---------------------------------------------------------------------------
// Bed-to-unit map
// ---------------------------------------------------------------------------

/// Loads the bed-to-clinical-unit map (CSV with header `bed,unit`). Beds
/// absent from the map are reported as [`UNKNOWN_UNIT`] by
/// [`clinical_unit`].
pub fn load_bed_units(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(["bed", "unit"]) {
        return Err(Error::ConfigInvalid(format!(
            "bed-unit map {} must start with header bed,unit",
            path.display()
        )));
    }
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::ConfigInvalid(format!(
                "bed-unit map {} has a row with {} fields",
                path.display(),
                record.len()
            )));
        }
        map.insert(record[0].to_string(), record[1].to_string());
    }
    Ok(map)
}

pub fn clinical_unit(bed_units: &BTreeMap<String, String>, bed: &str) -> String {
    bed_units.get(bed).cloned().unwrap_or_else(|| UNKNOWN_UNIT.to_string())
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

/// Conjunctive study filter. Empty vectors mean "no constraint on this
/// axis"; `time_range` matches studies whose interval overlaps it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryFilter {
    pub mrns: Vec<String>,
    pub beds: Vec<String>,
    pub units: Vec<String>,
    pub time_range: Option<TimeRange>,
    pub wave_symbols: Vec<String>,
}

/// Runs a conjunctive query over the catalog and returns matching
/// `study_map` rows ordered by start time (ties broken by study id).
/// Wave-symbol filters join through `study_details`; asking for a symbol
/// that is not in the wave registry is an error rather than an empty
/// result, so typos cannot masquerade as absence of data.
pub fn query_studies(catalog_root: &Path, filter: &QueryFilter) -> Result<Vec<StudyMapRow>> {
    for symbol in &filter.wave_symbols {
        if !is_known_symbol(symbol) {
            return Err(Error::UnknownWaveSymbol(symbol.clone()));
        }
    }
    let mut rows = load_study_map(catalog_root)?;

    let with_waves: Option<BTreeSet<String>> = if filter.wave_symbols.is_empty() {
        None
    } else {
        let wanted: BTreeSet<&str> = filter.wave_symbols.iter().map(String::as_str).collect();
        Some(
            load_study_details(catalog_root)?
                .into_iter()
                .filter(|d| wanted.contains(d.wave_symbol.as_str()))
                .map(|d| d.study_id)
                .collect(),
        )
    };

    let mrns: BTreeSet<&str> = filter.mrns.iter().map(String::as_str).collect();
    let beds: BTreeSet<&str> = filter.beds.iter().map(String::as_str).collect();
    let units: BTreeSet<&str> = filter.units.iter().map(String::as_str).collect();

    rows.retain(|row| {
        if !mrns.is_empty() {
            match &row.subject_id {
                Some(id) if mrns.contains(id.as_str()) => {}
                _ => return false,
            }
        }
        if !beds.is_empty() && !beds.contains(row.bed.as_str()) {
            return false;
        }
        if !units.is_empty() && !units.contains(row.clinical_unit.as_str()) {
            return false;
        }
        if let Some(tr) = &filter.time_range {
            if row.range().intersect(tr).is_none() {
                return false;
            }
        }
        if let Some(ids) = &with_waves {
            if !ids.contains(&row.study_id) {
                return false;
            }
        }
        true
    });
    rows.sort_by(|a, b| (a.start, &a.study_id).cmp(&(b.start, &b.study_id)));
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

/// Aggregate figures for one wave kind. Every registry wave gets a row
/// even when it never occurs, so reports always echo the full registry
/// with its canonical unit and rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveStats {
    pub symbol: String,
    pub name: String,
    pub unit: String,
    pub rate: u32,
    pub studies: u64,
    pub patients: u64,
    pub total_samples: u64,
    pub total_size_bytes: u64,
}

/// Whole-archive summary: totals, per-day averages, the per-wave table,
/// and (when birthdates are supplied) a clinical-unit by age-group study
/// count matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveStats {
    pub days: u64,
    pub total_studies: u64,
    pub total_patients: u64,
    pub unmatched_studies: u64,
    pub total_wave_samples: u64,
    pub total_wave_bytes: u64,
    pub total_zip_bytes: u64,
    pub avg_daily_studies: f64,
    pub avg_daily_patients: f64,
    pub avg_daily_wave_bytes: f64,
    pub per_wave: Vec<WaveStats>,
    pub per_unit_age: Option<BTreeMap<String, BTreeMap<String, u64>>>,
}

impl ArchiveStats {
    /// The subset of the summary that depends only on the logical content
    /// of the archive, with compression-dependent byte counts zeroed.
    /// Planners that predict archive statistics cannot know compressed
    /// sizes, so comparisons against predictions go through this.
    pub fn content_projection(&self) -> ArchiveStats {
        let mut s = self.clone();
        s.total_zip_bytes = 0;
        s
    }
}

pub const AGE_GROUPS: [&str; 7] =
    ["<=28d", "29d-<1y", "1-4y", "5-9y", "10-14y", "15y+", "unknown"];

/// Age bucket of a patient at a moment in time, matching the groups used
/// in neonatal/paediatric archive reports.
pub fn age_group(birthdate: NaiveDate, at: Timestamp) -> &'static str {
    let days = (at.date_naive() - birthdate).num_days();
    if days < 0 {
        return "unknown";
    }
    if days <= 28 {
        return "<=28d";
    }
    match at.date_naive().years_since(birthdate).unwrap_or(0) {
        0 => "29d-<1y",
        1..=4 => "1-4y",
        5..=9 => "5-9y",
        10..=14 => "10-14y",
        _ => "15y+",
    }
}

/// Aggregates catalog rows into [`ArchiveStats`]. `days` is the number of
/// published day partitions (including empty ones). Exposed separately
/// from [`summarize`] so that a scenario planner can aggregate its
/// predicted rows with exactly the same arithmetic.
pub fn stats_from_rows(
    days: u64,
    study_map: &[StudyMapRow],
    study_details: &[StudyDetailRow],
    manifest: &[WaveformManifestRow],
    birthdates: Option<&BTreeMap<String, NaiveDate>>,
) -> ArchiveStats {
    let total_studies = study_map.len() as u64;
    let patients: BTreeSet<&str> =
        study_map.iter().filter_map(|r| r.subject_id.as_deref()).collect();
    let unmatched_studies = study_map.iter().filter(|r| r.subject_id.is_none()).count() as u64;

    let mut daily_patients: BTreeMap<NaiveDate, BTreeSet<&str>> = BTreeMap::new();
    for row in study_map {
        if let Some(id) = row.subject_id.as_deref() {
            daily_patients.entry(row.start.date_naive()).or_default().insert(id);
        }
    }
    let sum_daily_patients: u64 = daily_patients.values().map(|s| s.len() as u64).sum();

    let subject_of: BTreeMap<&str, Option<&str>> =
        study_map.iter().map(|r| (r.study_id.as_str(), r.subject_id.as_deref())).collect();

    let mut per_wave = Vec::with_capacity(WAVE_REGISTRY.len());
    for spec in WAVE_REGISTRY {
        let mut studies = 0u64;
        let mut wave_patients: BTreeSet<&str> = BTreeSet::new();
        let mut total_samples = 0u64;
        let mut total_size_bytes = 0u64;
        for d in study_details.iter().filter(|d| d.wave_symbol == spec.symbol) {
            studies += 1;
            total_samples += d.n_samples;
            total_size_bytes += d.size_bytes;
            if let Some(Some(subject)) = subject_of.get(d.study_id.as_str()) {
                wave_patients.insert(subject);
            }
        }
        per_wave.push(WaveStats {
            symbol: spec.symbol.to_string(),
            name: spec.name.to_string(),
            unit: spec.unit.to_string(),
            rate: spec.rate,
            studies,
            patients: wave_patients.len() as u64,
            total_samples,
            total_size_bytes,
        });
    }

    let total_wave_samples: u64 = study_details.iter().map(|d| d.n_samples).sum();
    let total_wave_bytes: u64 = study_details.iter().map(|d| d.size_bytes).sum();
    let total_zip_bytes: u64 = manifest.iter().map(|m| m.size_bytes).sum();

    let per_unit_age = birthdates.map(|births| {
        let mut matrix: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for row in study_map {
            let group = row
                .subject_id
                .as_deref()
                .and_then(|id| births.get(id))
                .map(|b| age_group(*b, row.start))
                .unwrap_or("unknown");
            *matrix
                .entry(row.clinical_unit.clone())
                .or_default()
                .entry(group.to_string())
                .or_insert(0) += 1;
        }
        matrix
    });

    let denom = if days == 0 { 1.0 } else { days as f64 };
    ArchiveStats {
        days,
        total_studies,
        total_patients: patients.len() as u64,
        unmatched_studies,
        total_wave_samples,
        total_wave_bytes,
        total_zip_bytes,
        avg_daily_studies: total_studies as f64 / denom,
        avg_daily_patients: sum_daily_patients as f64 / denom,
        avg_daily_wave_bytes: total_wave_bytes as f64 / denom,
        per_wave,
        per_unit_age,
    }
}

/// Loads the whole catalog and summarizes it. Pass `birthdates`
/// (subject id to birthdate) to add the per-unit age-group matrix; this
/// only makes sense for the identified catalog, where subject ids are
/// MRNs.
pub fn summarize(
    catalog_root: &Path,
    birthdates: Option<&BTreeMap<String, NaiveDate>>,
) -> Result<ArchiveStats> {
    let days = list_days(catalog_root)?.len() as u64;
    let map = load_study_map(catalog_root)?;
    let details = load_study_details(catalog_root)?;
    let manifest = load_waveform_manifest(catalog_root)?;
    Ok(stats_from_rows(days, &map, &details, &manifest, birthdates))
}

// ---------------------------------------------------------------------------
// Referential integrity
// ---------------------------------------------------------------------------

/// Cross-checks the three tables against each other and against the
/// storage tree. Returns a list of human-readable problems; an intact
/// catalog returns an empty list.
pub fn check_referential_integrity(
    catalog_root: &Path,
    storage_base: &Path,
) -> Result<Vec<String>> {
    let map = load_study_map(catalog_root)?;
    let details = load_study_details(catalog_root)?;
    let manifest = load_waveform_manifest(catalog_root)?;
    let mut problems = Vec::new();

    let map_ids: BTreeSet<&str> = map.iter().map(|r| r.study_id.as_str()).collect();
    if map_ids.len() != map.len() {
        problems.push("duplicate study ids in study_map".to_string());
    }

    for row in &map {
        let path = resolve_storage_path(storage_base, &row.storage_path);
        if !path.exists() {
            problems.push(format!(
                "study {} storage path {} missing",
                row.study_id,
                path.display()
            ));
        }
    }

    let detail_ids: BTreeSet<&str> = details.iter().map(|r| r.study_id.as_str()).collect();
    for id in &detail_ids {
        if !map_ids.contains(id) {
            problems.push(format!("study_details references unknown study {id}"));
        }
    }
    for id in &map_ids {
        if !detail_ids.contains(id) {
            problems.push(format!("study {id} has no study_details rows"));
        }
    }

    let packed: BTreeSet<String> =
        manifest.iter().map(|r| r.zip_name.trim_end_matches(".zip").to_string()).collect();
    for id in &map_ids {
        if !packed.contains(*id) {
            problems.push(format!("study {id} has no waveform_manifest row"));
        }
    }
    for id in &packed {
        if !map_ids.contains(id.as_str()) {
            problems.push(format!("waveform_manifest references unknown study {id}"));
        }
    }

    problems.sort();
    Ok(problems)
}

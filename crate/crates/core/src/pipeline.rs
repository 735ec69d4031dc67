//! Day-at-a-time pipeline orchestration.
//!
//! Each day runs through seven strictly ordered phases — verified, parsed,
//! linked, segmented, written, deidentified, published — checkpointed in a
//! state file so an interrupted day resumes from its last completed phase.
//! Every phase stages its output in a temporary directory and swaps it
//! into place atomically; on failure the partial output is moved to a
//! quarantine directory and earlier phases remain valid. Reruns of a
//! published day are no-ops, and final archive bytes are independent of
//! worker count and of where a run was interrupted.
//!
//! Directory layout (`identified_root` unless noted):
//!
//! ```text
//! state/day=D/state.json          phase checkpoints + digests
//! parsed/day=D/counts.json        row-count reconciliation
//! linkage/day=D/linkage.json      streams, segments, sanitize report
//! segments/day=D/plan.json        study skeletons
//! segments/day=D/audit.jsonl      one line per study (audit trail)
//! studies/day=D/<id>/ + <id>.zip  identified study folders and packs
//! logs/day=D/run.jsonl            phase events (excluded from digests)
//! quarantine/day=D/...            partial outputs of failed phases
//! deid_map.csv + locks/           identity map, single-writer lock
//! <deid_root>/studies/day=D/...   de-identified mirror
//! <deid_root>/catalog/...         catalog with pseudonymous subjects
//! <catalog_root>/...              identified catalog
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{
    self, DayPublish, StudyDetailRow, StudyMapRow, WaveformManifestRow,
};
use crate::deid::{deidentify_study, monitor_identity, DeidMap, DEID_MAP_FILE};
use crate::error::{Error, Result};
use crate::extract::{
    parse_extract_day, validate_row_counts, verify_bundle, CountReport, ExtractBundle,
    MANIFEST_FILE,
};
use crate::hash::{sha256_bytes, sha256_file};
use crate::linkage::{link_day, BedLabelMap, DayLinkage};
use crate::segmentation::{segment_day, DaySegmentation, StudySkeleton};
use crate::signal_store::{describe_zip, pack_study, read_details, write_study};
use crate::time::{compact_stamp, format_timestamp, Day};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Pipeline configuration. See [`PipelineConfig::from_key_values`] for the
/// config-file grammar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub extracts_root: PathBuf,
    pub identified_root: PathBuf,
    pub deid_root: PathBuf,
    pub catalog_root: PathBuf,
    /// Optional `device_label,emr_label` override CSV for bed labels.
    pub bed_map: Option<PathBuf>,
    /// Optional `bed,unit` CSV mapping beds to clinical units.
    pub bed_units: Option<PathBuf>,
    /// Secret seed for pseudonym and date-shift derivation.
    pub deid_seed: String,
    /// Worker threads for per-study write and de-identification work.
    pub worker_count: usize,
    /// Strict mode fails on unparseable bed labels instead of echoing them.
    pub strict_beds: bool,
}

impl PipelineConfig {
    /// Conventional layout rooted at `base`: `extracts/` (as produced by
    /// corpus generation) plus sibling `identified/`, `deid/`, `catalog/`
    /// roots, picking up `bed_map.csv` and `bed_units.csv` when present.
    pub fn conventional(base: &Path, deid_seed: &str) -> PipelineConfig {
        let optional = |name: &str| {
            let p = base.join(name);
            p.is_file().then_some(p)
        };
        PipelineConfig {
            extracts_root: base.join("extracts"),
            identified_root: base.join("identified"),
            deid_root: base.join("deid"),
            catalog_root: base.join("catalog"),
            bed_map: optional("bed_map.csv"),
            bed_units: optional("bed_units.csv"),
            deid_seed: deid_seed.to_string(),
            worker_count: 2,
            strict_beds: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.deid_seed.is_empty() {
            return Err(Error::ConfigInvalid("deid_seed must not be empty".into()));
        }
        if self.worker_count == 0 {
            return Err(Error::ConfigInvalid("worker_count must be >= 1".into()));
        }
        let roots = [
            ("extracts_root", &self.extracts_root),
            ("identified_root", &self.identified_root),
            ("deid_root", &self.deid_root),
            ("catalog_root", &self.catalog_root),
        ];
        for (i, (name_a, a)) in roots.iter().enumerate() {
            for (name_b, b) in roots.iter().skip(i + 1) {
                if a == b || a.starts_with(b) || b.starts_with(a) {
                    return Err(Error::ConfigInvalid(format!(
                        "{name_a} and {name_b} must be disjoint directories \
                         ({} vs {})",
                        a.display(),
                        b.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses the key=value pipeline grammar; relative paths resolve
    /// against `base`:
    ///
    /// ```text
    /// # comment
    /// extracts_root = extracts
    /// identified_root = identified
    /// deid_root = deid
    /// catalog_root = catalog
    /// bed_map = bed_map.csv          # optional
    /// bed_units = bed_units.csv      # optional
    /// deid_seed = rotate-me
    /// worker_count = 4               # default 4
    /// bed_label_mode = lenient       # or strict
    /// ```
    pub fn from_key_values(text: &str, base: &Path) -> Result<PipelineConfig> {
        let mut extracts_root = None;
        let mut identified_root = None;
        let mut deid_root = None;
        let mut catalog_root = None;
        let mut bed_map = None;
        let mut bed_units = None;
        let mut deid_seed = None;
        let mut worker_count = 4usize;
        let mut strict_beds = false;
        let resolve = |value: &str| {
            let p = PathBuf::from(value);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::ConfigInvalid(format!("line {}: expected key=value, got {raw:?}", idx + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "extracts_root" => extracts_root = Some(resolve(value)),
                "identified_root" => identified_root = Some(resolve(value)),
                "deid_root" => deid_root = Some(resolve(value)),
                "catalog_root" => catalog_root = Some(resolve(value)),
                "bed_map" => bed_map = Some(resolve(value)),
                "bed_units" => bed_units = Some(resolve(value)),
                "deid_seed" => deid_seed = Some(value.to_string()),
                "worker_count" => {
                    worker_count = value.parse().map_err(|_| {
                        Error::ConfigInvalid(format!(
                            "line {}: bad worker_count {value:?}",
                            idx + 1
                        ))
                    })?
                }
                "bed_label_mode" => {
                    strict_beds = match value {
                        "strict" => true,
                        "lenient" => false,
                        _ => {
                            return Err(Error::ConfigInvalid(format!(
                                "line {}: bed_label_mode must be strict or lenient",
                                idx + 1
                            )))
                        }
                    }
                }
                other => {
                    return Err(Error::ConfigInvalid(format!(
                        "line {}: unknown key {other:?}",
                        idx + 1
                    )))
                }
            }
        }
        let require = |name: &str, v: Option<PathBuf>| {
            v.ok_or_else(|| Error::ConfigInvalid(format!("missing required key {name}")))
        };
        let config = PipelineConfig {
            extracts_root: require("extracts_root", extracts_root)?,
            identified_root: require("identified_root", identified_root)?,
            deid_root: require("deid_root", deid_root)?,
            catalog_root: require("catalog_root", catalog_root)?,
            bed_map,
            bed_units,
            deid_seed: deid_seed
                .ok_or_else(|| Error::ConfigInvalid("missing required key deid_seed".into()))?,
            worker_count,
            strict_beds,
        };
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        PipelineConfig::from_key_values(&text, base)
    }

    /// Renders back to the config-file grammar (paths verbatim).
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &str| out.push_str(&format!("{k} = {v}\n"));
        kv("extracts_root", &self.extracts_root.display().to_string());
        kv("identified_root", &self.identified_root.display().to_string());
        kv("deid_root", &self.deid_root.display().to_string());
        kv("catalog_root", &self.catalog_root.display().to_string());
        if let Some(p) = &self.bed_map {
            kv("bed_map", &p.display().to_string());
        }
        if let Some(p) = &self.bed_units {
            kv("bed_units", &p.display().to_string());
        }
        kv("deid_seed", &self.deid_seed);
        kv("worker_count", &self.worker_count.to_string());
        kv("bed_label_mode", if self.strict_beds { "strict" } else { "lenient" });
        out
    }

    pub fn bundle_dir(&self, day: Day) -> PathBuf {
        self.extracts_root.join(day.to_string())
    }

    pub fn deid_catalog_root(&self) -> PathBuf {
        self.deid_root.join("catalog")
    }

    fn bed_label_map(&self) -> Result<BedLabelMap> {
        match &self.bed_map {
            Some(path) => BedLabelMap::from_csv(path, self.strict_beds),
            None => Ok(BedLabelMap::new(BTreeMap::new(), self.strict_beds)),
        }
    }

    fn bed_units_map(&self) -> Result<BTreeMap<String, String>> {
        match &self.bed_units {
            Some(path) => catalog::load_bed_units(path),
            None => Ok(BTreeMap::new()),
        }
    }

    fn day_dir(&self, kind: &str, day: Day) -> PathBuf {
        self.identified_root.join(kind).join(format!("day={day}"))
    }

    pub fn deid_map_path(&self) -> PathBuf {
        self.identified_root.join(DEID_MAP_FILE)
    }
}

// ---------------------------------------------------------------------------
// Phases and state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Verified,
    Parsed,
    Linked,
    Segmented,
    Written,
    Deidentified,
    Published,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Verified,
        Phase::Parsed,
        Phase::Linked,
        Phase::Segmented,
        Phase::Written,
        Phase::Deidentified,
        Phase::Published,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Verified => "verified",
            Phase::Parsed => "parsed",
            Phase::Linked => "linked",
            Phase::Segmented => "segmented",
            Phase::Written => "written",
            Phase::Deidentified => "deidentified",
            Phase::Published => "published",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Checkpoint state of one day's run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRunState {
    pub day: Day,
    /// Highest completed phase, `None` before anything ran.
    pub phase: Option<Phase>,
    /// Content digest of each completed phase's output.
    pub digests: BTreeMap<String, String>,
}

impl DayRunState {
    fn new(day: Day) -> DayRunState {
        DayRunState { day, phase: None, digests: BTreeMap::new() }
    }

    pub fn is_complete(&self, phase: Phase) -> bool {
        self.digests.contains_key(phase.as_str())
    }

    fn path(config: &PipelineConfig, day: Day) -> PathBuf {
        config.day_dir("state", day).join("state.json")
    }

    pub fn load(config: &PipelineConfig, day: Day) -> Result<DayRunState> {
        let path = DayRunState::path(config, day);
        if path.is_file() {
            Ok(serde_json::from_slice(&fs::read(&path)?)?)
        } else {
            Ok(DayRunState::new(day))
        }
    }

    fn save(&self, config: &PipelineConfig) -> Result<()> {
        let path = DayRunState::path(config, self.day);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&tmp, text)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

/// One line of `segments/day=D/audit.jsonl`: the full identity-assignment
/// trail for one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLine {
    pub study_id: String,
    pub monitor_patient_id: String,
    pub bed_label: String,
    pub normalized_bed: String,
    pub start: String,
    pub end: String,
    pub method: String,
    pub mrn: Option<String>,
    /// Seconds of evidence overlap behind the winning assignment.
    pub overlap_seconds: f64,
    /// Lifetime id carried by the stream, if any.
    pub lifetime_id: Option<String>,
    pub stream_start: String,
    pub stream_end: String,
    /// Evidence intervals consulted for the stream (device logs or stays).
    pub candidates_considered: usize,
}

/// `segments/day=D/plan.json`: study skeletons plus drop/orphan counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub skeletons: Vec<StudySkeleton>,
    pub empty_studies_dropped: usize,
    pub orphan_numerics: usize,
    pub orphan_alerts: usize,
    pub orphan_wave_blocks: usize,
}

/// Machine-readable failure report written to `quarantine/day=D/failure.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReport {
    pub day: Day,
    pub phase: Phase,
    pub error: String,
}

// ---------------------------------------------------------------------------
// Digests
// ---------------------------------------------------------------------------

/// Content digest of a directory tree: SHA-256 over sorted relative paths
/// and file bytes. Missing or empty trees digest to a fixed value. Entries
/// whose top-level directory name is in `skip` are ignored.
pub fn tree_digest_filtered(root: &Path, skip: &[&str]) -> Result<String> {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    if root.is_dir() {
        for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| {
                Error::ConfigInvalid(format!("walking {}: {e}", root.display()))
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry
                .path()
                .strip_prefix(root)
                .expect("walkdir yields children of root")
                .to_string_lossy()
                .replace('\\', "/");
            if skip.iter().any(|s| rel == *s || rel.starts_with(&format!("{s}/"))) {
                continue;
            }
            files.push((rel, entry.path().to_path_buf()));
        }
    }
    files.sort();
    let mut acc = Vec::new();
    for (rel, path) in files {
        acc.extend_from_slice(rel.as_bytes());
        acc.push(0);
        acc.extend_from_slice(sha256_file(&path)?.as_bytes());
        acc.push(b'\n');
    }
    Ok(sha256_bytes(&acc))
}

pub fn tree_digest(root: &Path) -> Result<String> {
    tree_digest_filtered(root, &[])
}

/// Digests of everything the pipeline publishes: the identified study
/// tree, the de-identified mirror, and both catalogs. Operational noise
/// (locks, logs, state, quarantine) is excluded, so two runs that produced
/// the same archive compare equal regardless of scheduling.
pub fn archive_digests(config: &PipelineConfig) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    out.insert(
        "identified_studies".to_string(),
        tree_digest(&config.identified_root.join("studies"))?,
    );
    out.insert("deid_studies".to_string(), tree_digest(&config.deid_root.join("studies"))?);
    out.insert("catalog".to_string(), tree_digest_filtered(&config.catalog_root, &["locks"])?);
    out.insert(
        "deid_catalog".to_string(),
        tree_digest_filtered(&config.deid_catalog_root(), &["locks"])?,
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// Locks and staging
// ---------------------------------------------------------------------------

/// Lock file that waits (bounded) for a competing writer, for the
/// cross-day critical section around the de-identification map.
struct WaitLock {
    path: PathBuf,
}

impl WaitLock {
    fn acquire(path: PathBuf, timeout: std::time::Duration) -> Result<WaitLock> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let started = Instant::now();
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(WaitLock { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if started.elapsed() > timeout {
                        return Err(Error::PartitionLocked(path.display().to_string()));
                    }
                    std::thread::sleep(std::time::Duration::from_millis(20));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl Drop for WaitLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Replaces `dst` with `tmp` atomically (bar the unavoidable remove+rename
/// pair on an existing destination).
fn swap_dir(tmp: &Path, dst: &Path) -> Result<()> {
    if let Some(parent) = dst.parent() {
        fs::create_dir_all(parent)?;
    }
    if dst.exists() {
        fs::remove_dir_all(dst)?;
    }
    fs::rename(tmp, dst)?;
    Ok(())
}

fn write_json_atomic<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, text)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Day runner
// ---------------------------------------------------------------------------

struct DayRunner<'a> {
    config: &'a PipelineConfig,
    day: Day,
    bed_map: BedLabelMap,
    bundle: Option<ExtractBundle>,
    linkage: Option<DayLinkage>,
    segmentation: Option<DaySegmentation>,
}

impl<'a> DayRunner<'a> {
    fn new(config: &'a PipelineConfig, day: Day) -> Result<DayRunner<'a>> {
        Ok(DayRunner {
            config,
            day,
            bed_map: config.bed_label_map()?,
            bundle: None,
            linkage: None,
            segmentation: None,
        })
    }

    fn log(&self, record: serde_json::Value) {
        let dir = self.config.identified_root.join("logs").join(format!("day={}", self.day));
        if fs::create_dir_all(&dir).is_err() {
            return;
        }
        if let Ok(mut f) =
            fs::OpenOptions::new().create(true).append(true).open(dir.join("run.jsonl"))
        {
            let _ = writeln!(f, "{record}");
        }
    }

    fn log_event(&self, phase: Phase, event: &str, extra: Option<(&str, String)>) {
        let mut record = serde_json::json!({
            "at": format_timestamp(chrono::Utc::now()),
            "day": self.day.to_string(),
            "phase": phase.as_str(),
            "event": event,
        });
        if let Some((key, value)) = extra {
            record[key] = serde_json::Value::String(value);
        }
        self.log(record);
    }

    fn ensure_bundle(&mut self) -> Result<&ExtractBundle> {
        if self.bundle.is_none() {
            let verified = verify_bundle(&self.config.bundle_dir(self.day))?;
            self.bundle = Some(parse_extract_day(&verified)?);
        }
        Ok(self.bundle.as_ref().expect("just set"))
    }

    fn ensure_linkage(&mut self) -> Result<&DayLinkage> {
        if self.linkage.is_none() {
            let path = self.config.day_dir("linkage", self.day).join("linkage.json");
            let linkage = if path.is_file() {
                serde_json::from_slice(&fs::read(&path)?)?
            } else {
                let bed_map = self.bed_map.clone();
                link_day(self.ensure_bundle()?, &bed_map)?
            };
            self.linkage = Some(linkage);
        }
        Ok(self.linkage.as_ref().expect("just set"))
    }

    fn ensure_segmentation(&mut self) -> Result<&DaySegmentation> {
        if self.segmentation.is_none() {
            self.ensure_linkage()?;
            self.ensure_bundle()?;
            let linkage = self.linkage.clone().expect("ensured");
            let bed_map = self.bed_map.clone();
            let bundle = self.bundle.as_ref().expect("ensured");
            self.segmentation = Some(segment_day(&linkage, bundle, &bed_map)?);
        }
        Ok(self.segmentation.as_ref().expect("just set"))
    }

    fn load_plan(&self) -> Result<SegmentPlan> {
        let path = self.config.day_dir("segments", self.day).join("plan.json");
        Ok(serde_json::from_slice(&fs::read(&path)?)?)
    }

    fn studies_dir(&self) -> PathBuf {
        self.config.day_dir("studies", self.day)
    }

    fn deid_studies_dir(&self) -> PathBuf {
        self.config.deid_root.join("studies").join(format!("day={}", self.day))
    }

    /// Identity key for one study: its MRN, or the monitor token for
    /// unmatched studies.
    fn identity_of(skeleton: &StudySkeleton) -> String {
        skeleton
            .mrn
            .clone()
            .unwrap_or_else(|| monitor_identity(&skeleton.monitor_patient_id))
    }

    /// Deny list for free-text scrubbing: every patient name (full and
    /// tokenized), MRN, and visit id present in the day's ADT feed.
    fn deny_names(&mut self) -> Result<Vec<String>> {
        let bundle = self.ensure_bundle()?;
        let mut names = std::collections::BTreeSet::new();
        for e in &bundle.adt_events {
            names.insert(e.patient_name.clone());
            for token in e.patient_name.split_whitespace() {
                names.insert(token.to_string());
            }
            names.insert(e.mrn.clone());
            names.insert(e.visit_id.clone());
        }
        Ok(names.into_iter().collect())
    }

    // --- phase bodies ---------------------------------------------------

    fn phase_verified(&mut self) -> Result<String> {
        let dir = self.config.bundle_dir(self.day);
        verify_bundle(&dir)?;
        sha256_file(&dir.join(MANIFEST_FILE))
    }

    fn phase_parsed(&mut self) -> Result<String> {
        self.ensure_bundle()?;
        let report: CountReport = validate_row_counts(self.bundle.as_ref().expect("ensured"));
        if report.ok == Some(false) {
            let bad: Vec<String> = report
                .per_table
                .iter()
                .filter(|t| t.matches == Some(false))
                .map(|t| {
                    format!(
                        "{} declared {} actual {}",
                        t.table,
                        t.declared.unwrap_or(0),
                        t.actual
                    )
                })
                .collect();
            return Err(Error::ConfigInvalid(format!(
                "row counts disagree with the bundle's declaration: {}",
                bad.join("; ")
            )));
        }
        let dir = self.config.day_dir("parsed", self.day);
        write_json_atomic(&dir, "counts.json", &report)?;
        tree_digest(&dir)
    }

    fn phase_linked(&mut self) -> Result<String> {
        self.ensure_linkage()?;
        let dir = self.config.day_dir("linkage", self.day);
        write_json_atomic(&dir, "linkage.json", self.linkage.as_ref().expect("ensured"))?;
        tree_digest(&dir)
    }

    fn phase_segmented(&mut self) -> Result<String> {
        self.ensure_segmentation()?;
        let segmentation = self.segmentation.as_ref().expect("ensured");
        let linkage = self.linkage.as_ref().expect("ensured");

        let plan = SegmentPlan {
            skeletons: segmentation.studies.iter().map(|s| s.skeleton.clone()).collect(),
            empty_studies_dropped: segmentation.empty_studies_dropped,
            orphan_numerics: segmentation.orphans.numerics.len(),
            orphan_alerts: segmentation.orphans.alerts.len(),
            orphan_wave_blocks: segmentation.orphans.wave_blocks.len(),
        };

        let mut audit = String::new();
        for skeleton in &plan.skeletons {
            let stream = linkage
                .streams
                .iter()
                .find(|s| {
                    s.monitor_patient_id == skeleton.monitor_patient_id
                        && s.bed_label == skeleton.bed_label
                        && s.range.covers(&skeleton.range)
                })
                .ok_or_else(|| {
                    Error::ConfigInvalid(format!(
                        "study {} has no owning stream",
                        skeleton.study_id
                    ))
                })?;
            let line = AuditLine {
                study_id: skeleton.study_id.clone(),
                monitor_patient_id: skeleton.monitor_patient_id.clone(),
                bed_label: skeleton.bed_label.clone(),
                normalized_bed: skeleton.normalized_bed.clone(),
                start: format_timestamp(skeleton.range.start),
                end: format_timestamp(skeleton.range.end),
                method: skeleton.method.as_str().to_string(),
                mrn: skeleton.mrn.clone(),
                overlap_seconds: skeleton.overlap_seconds,
                lifetime_id: stream.lifetime_id.clone(),
                stream_start: format_timestamp(stream.range.start),
                stream_end: format_timestamp(stream.range.end),
                candidates_considered: stream.candidates_considered,
            };
            audit.push_str(&serde_json::to_string(&line)?);
            audit.push('\n');
        }

        let dir = self.config.day_dir("segments", self.day);
        let staging = dir.with_file_name(format!(".day={}.segments.tmp", self.day));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        let mut plan_text = serde_json::to_string_pretty(&plan)?;
        plan_text.push('\n');
        fs::write(staging.join("plan.json"), plan_text)?;
        fs::write(staging.join("audit.jsonl"), audit)?;
        swap_dir(&staging, &dir)?;
        tree_digest(&dir)
    }

    fn phase_written(&mut self) -> Result<String> {
        self.ensure_segmentation()?;
        let segmentation = self.segmentation.as_ref().expect("ensured");
        let dst = self.studies_dir();
        let staging = dst.with_file_name(format!(".day={}.studies.tmp", self.day));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.worker_count)
            .build()
            .map_err(|e| Error::ConfigInvalid(format!("worker pool: {e}")))?;
        pool.install(|| -> Result<()> {
            segmentation
                .studies
                .par_iter()
                .map(|study| -> Result<()> {
                    let dir = staging.join(&study.skeleton.study_id);
                    write_study(study, &dir)?;
                    pack_study(&dir)?;
                    Ok(())
                })
                .collect::<Result<Vec<()>>>()?;
            Ok(())
        })
        .map_err(|e| self.quarantine_staging(&staging, e))?;

        swap_dir(&staging, &dst)?;
        tree_digest(&dst)
    }

    fn phase_deidentified(&mut self) -> Result<String> {
        let plan = self.load_plan()?;
        let deny = self.deny_names()?;
        let identities: Vec<String> = plan.skeletons.iter().map(Self::identity_of).collect();

        // Single-writer critical section: extend the shared identity map.
        let map_path = self.config.deid_map_path();
        let map = {
            let _lock = WaitLock::acquire(
                self.config.identified_root.join("locks").join("deid_map.lock"),
                std::time::Duration::from_secs(60),
            )?;
            let mut map =
                if map_path.is_file() { DeidMap::load(&map_path)? } else { DeidMap::default() };
            for identity in &identities {
                map.ensure(identity, &self.config.deid_seed)?;
            }
            map.save(&map_path)?;
            map
        };

        let dst = self.deid_studies_dir();
        let staging = dst.with_file_name(format!(".day={}.deid.tmp", self.day));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;

        let src_root = self.studies_dir();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.worker_count)
            .build()
            .map_err(|e| Error::ConfigInvalid(format!("worker pool: {e}")))?;
        pool.install(|| -> Result<()> {
            plan.skeletons
                .par_iter()
                .zip(identities.par_iter())
                .map(|(skeleton, identity)| -> Result<()> {
                    let src = src_root.join(&skeleton.study_id);
                    let folder = deidentify_study(&src, &staging, identity, &map, &deny)?;
                    pack_study(&folder)?;
                    Ok(())
                })
                .collect::<Result<Vec<()>>>()?;
            Ok(())
        })
        .map_err(|e| self.quarantine_staging(&staging, e))?;

        swap_dir(&staging, &dst)?;
        tree_digest(&dst)
    }

    fn phase_published(&mut self) -> Result<String> {
        let plan = self.load_plan()?;
        let bed_units = self.config.bed_units_map()?;
        let map_path = self.config.deid_map_path();
        let map = if map_path.is_file() { DeidMap::load(&map_path)? } else { DeidMap::default() };

        let studies_root = self.studies_dir();
        let deid_root = self.deid_studies_dir();
        let rel_day = format!("studies/day={}", self.day);

        let mut identified = DayPublish::default();
        let mut deid = DayPublish::default();
        for skeleton in &plan.skeletons {
            let identity = Self::identity_of(skeleton);
            let entry = map
                .get(&identity)
                .ok_or_else(|| Error::MapMissingEntry(identity.clone()))?;
            let shift = chrono::Duration::days(entry.shift_days as i64);
            let unit = catalog::clinical_unit(&bed_units, &skeleton.normalized_bed);

            let details = read_details(&studies_root.join(&skeleton.study_id))?;
            identified.study_map.push(StudyMapRow {
                study_id: skeleton.study_id.clone(),
                subject_id: skeleton.mrn.clone(),
                lifetime_id_source: skeleton.method == crate::linkage::LinkMethod::LifetimeId,
                bed: skeleton.normalized_bed.clone(),
                clinical_unit: unit.clone(),
                start: skeleton.range.start,
                end: skeleton.range.end,
                storage_path: format!("{rel_day}/{}.zip", skeleton.study_id),
                linkage_method: skeleton.method.as_str().to_string(),
            });
            for wave in &details.waves {
                identified.study_details.push(StudyDetailRow {
                    study_id: skeleton.study_id.clone(),
                    wave_symbol: wave.symbol.clone(),
                    unit: wave.unit.clone(),
                    rate: wave.rate,
                    n_samples: wave.n_samples,
                    size_bytes: wave.size_bytes,
                });
            }
            let zip = describe_zip(&studies_root.join(format!("{}.zip", skeleton.study_id)))?;
            identified.waveform_manifest.push(WaveformManifestRow {
                day: self.day,
                zip_name: zip.zip_name,
                size_bytes: zip.size_bytes,
                sha256: zip.sha256,
            });

            // De-identified side: pseudonymous subject, shifted times,
            // mirrored folder derived exactly as the deid phase named it.
            let deid_start = skeleton.range.start - shift;
            let deid_id = format!(
                "{}_{}_{}",
                entry.pseudo_id,
                skeleton.normalized_bed,
                compact_stamp(deid_start)
            );
            deid.study_map.push(StudyMapRow {
                study_id: deid_id.clone(),
                subject_id: Some(entry.pseudo_id.clone()),
                lifetime_id_source: skeleton.method == crate::linkage::LinkMethod::LifetimeId,
                bed: skeleton.normalized_bed.clone(),
                clinical_unit: unit,
                start: deid_start,
                end: skeleton.range.end - shift,
                storage_path: format!("{rel_day}/{deid_id}.zip"),
                linkage_method: skeleton.method.as_str().to_string(),
            });
            for wave in &details.waves {
                deid.study_details.push(StudyDetailRow {
                    study_id: deid_id.clone(),
                    wave_symbol: wave.symbol.clone(),
                    unit: wave.unit.clone(),
                    rate: wave.rate,
                    n_samples: wave.n_samples,
                    size_bytes: wave.size_bytes,
                });
            }
            let deid_zip = describe_zip(&deid_root.join(format!("{deid_id}.zip")))?;
            deid.waveform_manifest.push(WaveformManifestRow {
                day: self.day,
                zip_name: deid_zip.zip_name,
                size_bytes: deid_zip.size_bytes,
                sha256: deid_zip.sha256,
            });
        }

        catalog::publish_day(
            &self.config.catalog_root,
            self.day,
            &identified,
            Some(&self.config.identified_root),
        )?;
        catalog::publish_day(
            &self.config.deid_catalog_root(),
            self.day,
            &deid,
            Some(&self.config.deid_root),
        )?;

        let mut acc = String::new();
        for root in [&self.config.catalog_root, &self.config.deid_catalog_root()] {
            acc.push_str(&tree_digest_filtered(root, &["locks"])?);
            acc.push('\n');
        }
        Ok(sha256_bytes(acc.as_bytes()))
    }

    /// Moves a failed phase's staging directory into quarantine and returns
    /// the original error for propagation.
    fn quarantine_staging(&self, staging: &Path, err: Error) -> Error {
        if staging.exists() {
            let qdir = self
                .config
                .identified_root
                .join("quarantine")
                .join(format!("day={}", self.day));
            let dst = qdir.join("staging");
            let _ = fs::create_dir_all(&qdir);
            let _ = fs::remove_dir_all(&dst);
            let _ = fs::rename(staging, &dst);
        }
        err
    }

    fn quarantine_failure(&self, phase: Phase, err: &Error) {
        let qdir =
            self.config.identified_root.join("quarantine").join(format!("day={}", self.day));
        let report =
            FailureReport { day: self.day, phase, error: err.to_string() };
        let _ = write_json_atomic(&qdir, "failure.json", &report);
    }

    fn clear_quarantine(&self) {
        let qdir =
            self.config.identified_root.join("quarantine").join(format!("day={}", self.day));
        let _ = fs::remove_dir_all(&qdir);
    }

    fn run_phase(&mut self, phase: Phase) -> Result<String> {
        match phase {
            Phase::Verified => self.phase_verified(),
            Phase::Parsed => self.phase_parsed(),
            Phase::Linked => self.phase_linked(),
            Phase::Segmented => self.phase_segmented(),
            Phase::Written => self.phase_written(),
            Phase::Deidentified => self.phase_deidentified(),
            Phase::Published => self.phase_published(),
        }
    }
}

/// Runs one day end to end, resuming from the last completed phase.
/// `stop_after` ends the run cleanly after the named phase completes —
/// the fault-injection hook used to prove crash-rerun equivalence.
pub fn run_day_with_stop(
    config: &PipelineConfig,
    day: Day,
    stop_after: Option<Phase>,
) -> Result<DayRunState> {
    config.validate()?;
    for root in [&config.identified_root, &config.deid_root, &config.catalog_root] {
        fs::create_dir_all(root)?;
    }
    let mut state = DayRunState::load(config, day)?;
    let mut runner = DayRunner::new(config, day)?;

    for phase in Phase::ALL {
        if state.is_complete(phase) {
            runner.log_event(phase, "skipped", None);
        } else {
            runner.log_event(phase, "started", None);
            match runner.run_phase(phase) {
                Ok(digest) => {
                    runner.log_event(phase, "completed", Some(("digest", digest.clone())));
                    state.digests.insert(phase.as_str().to_string(), digest);
                    state.phase = Some(phase);
                    state.save(config)?;
                }
                Err(err) => {
                    runner.log_event(phase, "failed", Some(("error", err.to_string())));
                    runner.quarantine_failure(phase, &err);
                    return Err(Error::PhaseFailed {
                        phase: phase.as_str().to_string(),
                        day: day.to_string(),
                        msg: err.to_string(),
                    });
                }
            }
        }
        if stop_after == Some(phase) {
            return Ok(state);
        }
    }
    runner.clear_quarantine();
    Ok(state)
}

pub fn run_day(config: &PipelineConfig, day: Day) -> Result<DayRunState> {
    run_day_with_stop(config, day, None)
}

// ---------------------------------------------------------------------------
// Ranges
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Published,
    Failed,
    MissingBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayOutcome {
    pub day: Day,
    pub status: RunStatus,
    /// Highest completed phase (failures keep their last good phase).
    pub phase: Option<Phase>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RangeSummary {
    pub outcomes: Vec<DayOutcome>,
}

impl RangeSummary {
    pub fn published(&self) -> usize {
        self.outcomes.iter().filter(|o| o.status == RunStatus::Published).count()
    }

    pub fn failed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.status != RunStatus::Published).count()
    }

    /// Process exit code: 0 all published (or empty range), 1 nothing
    /// published, 2 mixed.
    pub fn exit_code(&self) -> i32 {
        match (self.published(), self.failed()) {
            (_, 0) => 0,
            (0, _) => 1,
            _ => 2,
        }
    }
}

/// Runs every day in `[from, to]` independently, at most `parallelism` days
/// at once. Missing bundles are reported and skipped; one day's failure
/// never aborts the others; the final archive is byte-identical for any
/// parallelism degree.
pub fn run_range(
    config: &PipelineConfig,
    from: Day,
    to: Day,
    parallelism: usize,
) -> Result<RangeSummary> {
    config.validate()?;
    let mut days = Vec::new();
    let mut day = from;
    while day <= to {
        days.push(day);
        day = day.succ();
    }

    let queue = Mutex::new(days.into_iter());
    let outcomes = Mutex::new(Vec::new());
    let workers = parallelism.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").next();
                let Some(day) = next else { break };
                let outcome = if !config.bundle_dir(day).is_dir() {
                    DayOutcome {
                        day,
                        status: RunStatus::MissingBundle,
                        phase: None,
                        error: Some("bundle directory not found".into()),
                    }
                } else {
                    match run_day(config, day) {
                        Ok(state) => DayOutcome {
                            day,
                            status: RunStatus::Published,
                            phase: state.phase,
                            error: None,
                        },
                        Err(err) => {
                            let phase = DayRunState::load(config, day)
                                .map(|s| s.phase)
                                .unwrap_or(None);
                            DayOutcome {
                                day,
                                status: RunStatus::Failed,
                                phase,
                                error: Some(err.to_string()),
                            }
                        }
                    }
                };
                outcomes.lock().expect("outcomes lock").push(outcome);
            });
        }
    });

    let mut outcomes = outcomes.into_inner().expect("threads joined");
    outcomes.sort_by_key(|o| o.day);
    Ok(RangeSummary { outcomes })
}

// ---------------------------------------------------------------------------
// Audit lookup
// ---------------------------------------------------------------------------

/// Loads the audit trail for one day.
pub fn load_audit(config: &PipelineConfig, day: Day) -> Result<Vec<AuditLine>> {
    let path = config.day_dir("segments", day).join("audit.jsonl");
    let mut lines = Vec::new();
    if path.is_file() {
        for line in fs::read_to_string(&path)?.lines() {
            if !line.trim().is_empty() {
                lines.push(serde_json::from_str(line)?);
            }
        }
    }
    Ok(lines)
}

/// Finds audit lines for a study id, searching one day or every processed
/// day under the identified root.
pub fn find_audit(
    config: &PipelineConfig,
    study_id: &str,
    day: Option<Day>,
) -> Result<Vec<AuditLine>> {
    let days: Vec<Day> = match day {
        Some(d) => vec![d],
        None => {
            let dir = config.identified_root.join("segments");
            let mut days = Vec::new();
            if dir.is_dir() {
                for entry in fs::read_dir(&dir)? {
                    let name = entry?.file_name();
                    if let Some(rest) = name.to_str().and_then(|s| s.strip_prefix("day=")) {
                        if let Ok(d) = Day::parse(rest) {
                            days.push(d);
                        }
                    }
                }
            }
            days.sort();
            days
        }
    };
    let mut hits = Vec::new();
    for d in days {
        for line in load_audit(config, d)? {
            if line.study_id == study_id {
                hits.push(line);
            }
        }
    }
    Ok(hits)
}

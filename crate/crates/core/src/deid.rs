//! Deterministic de-identification of study folders.
//!
//! Every patient identity (an MRN, or `monitor:<id>` for studies that
//! never got one) receives a stable pseudonym and a whole-day date shift
//! derived from a secret seed. Shifting by whole days preserves
//! time-of-day and the spacing between a patient's studies; sample bytes
//! are never touched. The identity → (pseudonym, shift) register lives
//! only under the identified root.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal_store::{
    parse_header, read_details, render_header, write_details, ALERTS_SIDECAR, NUMERICS_SIDECAR,
};
use crate::time::{compact_stamp, format_timestamp, parse_timestamp};

/// Smallest and largest allowed date shift, in whole days.
pub const MIN_SHIFT_DAYS: u32 = 30;
pub const MAX_SHIFT_DAYS: u32 = 365;
const SHIFT_SPAN: u64 = (MAX_SHIFT_DAYS - MIN_SHIFT_DAYS + 1) as u64;

/// Identity key used for studies without an MRN.
pub fn monitor_identity(monitor_patient_id: &str) -> String {
    format!("monitor:{monitor_patient_id}")
}

fn keyed_digest(domain: u8, identity: &str, seed: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.as_bytes());
    hasher.update([domain]);
    hasher.update(identity.as_bytes());
    hasher.finalize().into()
}

/// Derives the whole-day date shift for an identity: uniform over
/// `[30, 365]`, deterministic in (identity, seed).
pub fn derive_shift(identity: &str, seed: &str) -> u32 {
    let digest = keyed_digest(0x00, identity, seed);
    let x = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    MIN_SHIFT_DAYS + (x % SHIFT_SPAN) as u32
}

/// Derives the opaque pseudonym for an identity: `px` + 16 hex digits.
pub fn derive_pseudo(identity: &str, seed: &str) -> String {
    let digest = keyed_digest(0x01, identity, seed);
    format!("px{}", hex::encode(&digest[..8]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeidEntry {
    pub pseudo_id: String,
    pub shift_days: u32,
}

/// The identity → (pseudonym, shift) register.
///
/// Entries are derived deterministically, but the persisted map is
/// authoritative: once written, an entry never changes, even if the seed
/// rotates later.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeidMap {
    entries: BTreeMap<String, DeidEntry>,
}

pub const DEID_MAP_FILE: &str = "deid_map.csv";

impl DeidMap {
    pub fn get(&self, identity: &str) -> Option<&DeidEntry> {
        self.entries.get(identity)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DeidEntry)> {
        self.entries.iter()
    }

    /// Returns the entry for `identity`, deriving and inserting it first
    /// if absent. Rejects pseudonym collisions across identities.
    pub fn ensure(&mut self, identity: &str, seed: &str) -> Result<&DeidEntry> {
        if !self.entries.contains_key(identity) {
            let entry = DeidEntry {
                pseudo_id: derive_pseudo(identity, seed),
                shift_days: derive_shift(identity, seed),
            };
            if self.entries.values().any(|e| e.pseudo_id == entry.pseudo_id) {
                return Err(Error::ConfigInvalid(format!(
                    "pseudonym collision for {identity}: {}",
                    entry.pseudo_id
                )));
            }
            self.entries.insert(identity.to_string(), entry);
        }
        Ok(self.entries.get(identity).expect("just ensured"))
    }

    pub fn load(path: &Path) -> Result<DeidMap> {
        let mut map = DeidMap::default();
        if !path.exists() {
            return Ok(map);
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        {
            let headers = reader.headers()?;
            let got: Vec<&str> = headers.iter().collect();
            if got != ["mrn", "pseudo_id", "shift_days"] {
                return Err(Error::ConfigInvalid(format!("bad deid map header {got:?}")));
            }
        }
        for row in reader.records() {
            let row = row?;
            let shift_days: u32 = row[2]
                .parse()
                .map_err(|_| Error::ConfigInvalid(format!("bad shift_days {:?}", &row[2])))?;
            if !(MIN_SHIFT_DAYS..=MAX_SHIFT_DAYS).contains(&shift_days) {
                return Err(Error::ConfigInvalid(format!("shift_days {shift_days} out of range")));
            }
            map.entries.insert(
                row[0].to_string(),
                DeidEntry { pseudo_id: row[1].to_string(), shift_days },
            );
        }
        Ok(map)
    }

    /// Writes the register sorted by identity, so saves are byte-stable.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = String::from("mrn,pseudo_id,shift_days\n");
        for (identity, entry) in &self.entries {
            body.push_str(&format!("{identity},{},{}\n", entry.pseudo_id, entry.shift_days));
        }
        let tmp = path.with_extension("csv.tmp");
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Replaces every occurrence of a deny-listed name (case-insensitive)
/// with `[REDACTED]`.
pub fn scrub_text(text: &str, deny_names: &[String]) -> String {
    let mut out = text.to_string();
    for name in deny_names {
        if name.is_empty() {
            continue;
        }
        let lower_name = name.to_lowercase();
        loop {
            let lower_out = out.to_lowercase();
            match lower_out.find(&lower_name) {
                Some(pos) => {
                    // Find the byte span in the original via char counts;
                    // safe here because lowercasing ASCII keeps offsets.
                    out.replace_range(pos..pos + lower_name.len(), "[REDACTED]");
                }
                None => break,
            }
        }
    }
    out
}

fn shift_timestamp_field(value: &str, shift_days: u32) -> Result<String> {
    let t = parse_timestamp(value)?;
    Ok(format_timestamp(t - chrono::Duration::days(shift_days as i64)))
}

fn copy_dir_verbatim(src: &Path, dst: &Path) -> Result<()> {
    std::fs::create_dir_all(dst)?;
    for entry in std::fs::read_dir(src)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            std::fs::copy(entry.path(), dst.join(entry.file_name()))?;
        }
    }
    Ok(())
}

/// De-identifies one study folder into `dst_parent`.
///
/// `identity` is the study's MRN, or [`monitor_identity`] of its monitor
/// patient id when unmatched; it must already exist in the map. The new
/// folder is named `<pseudo>_<bed>_<shifted start stamp>`; sample files
/// are copied byte-identically; headers, sidecars, and details get their
/// timestamps shifted back; alert text is scrubbed against `deny_names`.
/// A folder already marked de-identified is copied verbatim, making the
/// operation idempotent. Returns the new folder path.
pub fn deidentify_study(
    src: &Path,
    dst_parent: &Path,
    identity: &str,
    map: &DeidMap,
    deny_names: &[String],
) -> Result<PathBuf> {
    let details = read_details(src)?;
    if details.deidentified {
        let dst = dst_parent.join(src.file_name().ok_or_else(|| {
            Error::ConfigInvalid(format!("bad study path {}", src.display()))
        })?);
        copy_dir_verbatim(src, &dst)?;
        return Ok(dst);
    }

    let entry = map
        .get(identity)
        .ok_or_else(|| Error::MapMissingEntry(identity.to_string()))?;
    let shift = chrono::Duration::days(entry.shift_days as i64);

    let start = parse_timestamp(&details.start)?;
    let end = parse_timestamp(&details.end)?;
    let new_start = start - shift;
    let new_study_id = format!("{}_{}_{}", entry.pseudo_id, details.bed, compact_stamp(new_start));
    let dst = dst_parent.join(&new_study_id);
    std::fs::create_dir_all(&dst)?;

    let mut new_details = details.clone();
    new_details.study_id = new_study_id.clone();
    new_details.start = format_timestamp(new_start);
    new_details.end = format_timestamp(end - shift);
    new_details.deidentified = true;
    new_details.waves.clear();

    for wave in &details.waves {
        let old_record = wave.file.trim_end_matches(".dat");
        let mut header = parse_header(&std::fs::read_to_string(
            src.join(format!("{old_record}.hea")),
        )?)?;
        let new_record = format!("{new_study_id}_{}", wave.symbol);
        header.record_name = new_record.clone();
        header.dat_file = format!("{new_record}.dat");
        header.base_time -= shift;
        std::fs::write(dst.join(format!("{new_record}.hea")), render_header(&header))?;
        // Sample bytes are copied untouched.
        std::fs::copy(src.join(&wave.file), dst.join(&header.dat_file))?;
        let mut new_wave = wave.clone();
        new_wave.file = header.dat_file.clone();
        new_details.waves.push(new_wave);
    }

    // numerics.csv: shift the timestamp column.
    {
        let text = std::fs::read_to_string(src.join(NUMERICS_SIDECAR))?;
        let mut out = String::with_capacity(text.len());
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.is_empty() {
                out.push_str(line);
            } else {
                let (ts, rest) = line.split_once(',').ok_or_else(|| {
                    Error::ConfigInvalid(format!("malformed numerics sidecar line {}", i + 1))
                })?;
                out.push_str(&shift_timestamp_field(ts, entry.shift_days)?);
                out.push(',');
                out.push_str(rest);
            }
            out.push('\n');
        }
        std::fs::write(dst.join(NUMERICS_SIDECAR), out)?;
    }

    // alerts.csv: shift timestamps and scrub free text.
    {
        let mut reader =
            csv::ReaderBuilder::new().has_headers(true).from_path(src.join(ALERTS_SIDECAR))?;
        let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
        writer.write_record(["at", "severity", "text"])?;
        for row in reader.records() {
            let row = row?;
            writer.write_record([
                shift_timestamp_field(&row[0], entry.shift_days)?.as_str(),
                &row[1],
                scrub_text(&row[2], deny_names).as_str(),
            ])?;
        }
        let body = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        std::fs::write(dst.join(ALERTS_SIDECAR), body)?;
    }

    write_details(&dst, &new_details)?;
    Ok(dst)
}

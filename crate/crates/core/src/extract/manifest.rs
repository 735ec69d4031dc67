//! Bundle manifest parsing and whole-bundle integrity verification.
//!
//! Every day directory ships a `manifest.csv` listing each delivered file
//! with its byte size and SHA-256 digest. Verification walks the manifest
//! in order and reports the first offender, then checks for unlisted
//! stray CSVs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use crate::error::{Error, IntegrityKind, Result};
use crate::extract::{MANIFEST_FILE, TABLE_FILES};
use crate::hash::{is_sha256_hex, sha256_file};
use crate::time::{parse_timestamp, Day};

pub const MANIFEST_HEADER: [&str; 4] = ["file_name", "created_at", "size_bytes", "sha256"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file_name: String,
    pub created_at: DateTime<Utc>,
    pub size_bytes: u64,
    pub sha256: String,
}

/// Parses `manifest.csv`, rejecting malformed rows, duplicate file names,
/// and path components that would escape the bundle directory.
pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    {
        let headers = reader.headers()?;
        if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::MalformedManifest(format!(
                "unexpected header {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
    }
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        let line = idx as u64 + 2;
        if row.len() != 4 {
            return Err(Error::MalformedManifest(format!(
                "line {line}: expected 4 columns, got {}",
                row.len()
            )));
        }
        let file_name = row[0].to_string();
        if file_name.is_empty()
            || file_name.contains('/')
            || file_name.contains('\\')
            || file_name.contains("..")
        {
            return Err(Error::MalformedManifest(format!(
                "line {line}: illegal file name {file_name:?}"
            )));
        }
        if !seen.insert(file_name.clone()) {
            return Err(Error::MalformedManifest(format!(
                "line {line}: duplicate entry for {file_name:?}"
            )));
        }
        let created_at = parse_timestamp(&row[1])
            .map_err(|e| Error::MalformedManifest(format!("line {line}: {e}")))?;
        let size_bytes: u64 = row[2]
            .parse()
            .map_err(|_| Error::MalformedManifest(format!("line {line}: bad size {:?}", &row[2])))?;
        let sha256 = row[3].to_string();
        if !is_sha256_hex(&sha256) {
            return Err(Error::MalformedManifest(format!(
                "line {line}: bad sha256 {sha256:?}"
            )));
        }
        entries.push(ManifestEntry { file_name, created_at, size_bytes, sha256 });
    }
    if entries.is_empty() {
        return Err(Error::MalformedManifest("manifest lists no files".into()));
    }
    Ok(entries)
}

/// A bundle directory whose contents passed size and checksum verification.
#[derive(Debug, Clone)]
pub struct VerifiedBundle {
    pub dir: PathBuf,
    pub day: Day,
    pub manifest: Vec<ManifestEntry>,
}

/// Verifies an extract day directory against its manifest.
///
/// The directory name must be the day (`YYYY-MM-DD`). Checks run in
/// manifest order — missing file, then size, then digest — so the first
/// offender is reported deterministically. All six required tables must be
/// listed, and any unlisted `*.csv` in the directory is an integrity error.
pub fn verify_bundle(dir: &Path) -> Result<VerifiedBundle> {
    let day_name = dir
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::MalformedManifest(format!("bad bundle path {}", dir.display())))?;
    let day = Day::parse(day_name)?;

    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::Integrity {
            file: MANIFEST_FILE.to_string(),
            kind: IntegrityKind::Missing,
        });
    }
    let manifest = parse_manifest(&manifest_path)?;

    let listed: BTreeSet<&str> = manifest.iter().map(|e| e.file_name.as_str()).collect();
    for required in TABLE_FILES {
        if !listed.contains(required) {
            return Err(Error::Integrity {
                file: required.to_string(),
                kind: IntegrityKind::Missing,
            });
        }
    }

    for entry in &manifest {
        let path = dir.join(&entry.file_name);
        if !path.is_file() {
            return Err(Error::Integrity {
                file: entry.file_name.clone(),
                kind: IntegrityKind::Missing,
            });
        }
        let actual_size = std::fs::metadata(&path)?.len();
        if actual_size != entry.size_bytes {
            return Err(Error::Integrity {
                file: entry.file_name.clone(),
                kind: IntegrityKind::SizeMismatch,
            });
        }
        let actual_digest = sha256_file(&path)?;
        if actual_digest != entry.sha256 {
            return Err(Error::Integrity {
                file: entry.file_name.clone(),
                kind: IntegrityKind::ChecksumMismatch,
            });
        }
    }

    // Stray CSVs are deliveries the manifest does not vouch for.
    let mut names: Vec<String> = Vec::new();
    for dirent in std::fs::read_dir(dir)? {
        let dirent = dirent?;
        if let Some(name) = dirent.file_name().to_str() {
            if name.ends_with(".csv") && name != MANIFEST_FILE && !listed.contains(name) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    if let Some(extra) = names.into_iter().next() {
        return Err(Error::Integrity { file: extra, kind: IntegrityKind::Extra });
    }

    Ok(VerifiedBundle { dir: dir.to_path_buf(), day, manifest })
}

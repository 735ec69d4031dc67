//! Python bindings for the wavevault archival toolkit.
//!
//! Thin wrappers over the core crate: corpus generation, bundle
//! verification, the day pipeline, catalog queries and statistics, record
//! reading, and the de-identification primitives. Structured results
//! cross the boundary as plain dicts/lists mirroring the crate's
//! serialized forms, so Python callers see the same shapes the on-disk
//! JSON artifacts use.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use wavevault::time::{parse_timestamp, Day, TimeRange, Timestamp};
use wavevault::{catalog, deid, extract, linkage, pipeline, signal_store, synthgen};

fn err(e: wavevault::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Converts any serializable core value into plain Python objects.
fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    use serde_json::Value;
    match v {
        Value::Null => Ok(py.None()),
        Value::Bool(b) => b.into_py_any(py),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py_any(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py_any(py)
            }
        }
        Value::String(s) => s.into_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py_any(py)
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_py_any(py)
        }
    }
}

fn parse_day(s: &str) -> PyResult<Day> {
    Day::parse(s).map_err(err)
}

// ---------------------------------------------------------------------------
// Bed labels and ADT
// ---------------------------------------------------------------------------

/// Normalizes a device-side bed label (e.g. "13ALPHA") to its EMR form
/// ("A13"). `overrides` take precedence over the standard rule; with
/// `strict=True` unparseable labels raise instead of passing through.
#[pyfunction]
#[pyo3(signature = (device_label, overrides = None, strict = false))]
fn normalize_bed_label(
    device_label: &str,
    overrides: Option<BTreeMap<String, String>>,
    strict: bool,
) -> PyResult<String> {
    let map = linkage::BedLabelMap::new(overrides.unwrap_or_default(), strict);
    linkage::normalize_bed_label(device_label, &map).map_err(err)
}

/// Collapses raw ADT events (CSV text with the standard
/// `event_id,patient_name,mrn,visit_id,event,bed,at` header) into clean
/// per-(mrn, visit, bed) stay intervals. `close_at` (RFC 3339) closes
/// stays whose outbound event is missing; without it they are dropped.
/// Returns the full sanitize report: stays plus noise counters.
#[pyfunction]
#[pyo3(signature = (csv_text, close_at = None))]
fn sanitize_adt(py: Python<'_>, csv_text: &str, close_at: Option<String>) -> PyResult<Py<PyAny>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
    let headers: Vec<String> =
        reader
            .headers()
            .map_err(|e| PyValueError::new_err(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
    if headers != extract::ADT_EVENTS_HEADER {
        return Err(PyValueError::new_err(format!(
            "expected header {:?}, got {headers:?}",
            extract::ADT_EVENTS_HEADER
        )));
    }
    let mut events = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| PyValueError::new_err(e.to_string()))?;
        events.push(extract::AdtEvent::from_row(&row, i as u64 + 2).map_err(err)?);
    }
    let close: Option<Timestamp> = match close_at {
        Some(s) => Some(parse_timestamp(&s).map_err(err)?),
        None => None,
    };
    to_py(py, &linkage::sanitize_adt(&events, close))
}

// ---------------------------------------------------------------------------
// De-identification primitives
// ---------------------------------------------------------------------------

/// Whole-day date shift for an identity: uniform over [30, 365] days,
/// deterministic in (identity, seed).
#[pyfunction]
fn derive_shift(identity: &str, seed: &str) -> u32 {
    deid::derive_shift(identity, seed)
}

/// Opaque pseudonym for an identity: "px" + 16 hex digits.
#[pyfunction]
fn derive_pseudo(identity: &str, seed: &str) -> String {
    deid::derive_pseudo(identity, seed)
}

/// Replaces every case-insensitive occurrence of a deny-listed name with
/// "[REDACTED]".
#[pyfunction]
fn scrub_text(text: &str, deny_names: Vec<String>) -> String {
    deid::scrub_text(text, &deny_names)
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

/// Generates a seeded synthetic corpus from scenario text (the same
/// `key = value` grammar the CLI's `synth --scenario` accepts). Returns
/// the layout: corpus root, extracts root, bed map paths, and the list of
/// generated days. Ground truth sits next to each bundle as
/// `<day>.truth.json`.
#[pyfunction]
fn generate_corpus(py: Python<'_>, scenario_text: &str, root: &str) -> PyResult<Py<PyAny>> {
    let config = synthgen::ScenarioConfig::from_key_values(scenario_text).map_err(err)?;
    let layout = synthgen::generate_corpus(&config, Path::new(root)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("root", layout.root.to_string_lossy())?;
    d.set_item("extracts_root", layout.extracts_root.to_string_lossy())?;
    d.set_item("bed_map", layout.bed_map.to_string_lossy())?;
    d.set_item("bed_units", layout.bed_units.to_string_lossy())?;
    let days: Vec<String> = layout.days.iter().map(|(day, _)| day.to_string()).collect();
    d.set_item("days", days)?;
    d.into_py_any(py)
}

/// Scores linkage quality for one bundle against its ground-truth file:
/// stream coverage and time-weighted accuracy over streams that lack a
/// lifetime id. Either value is None when its denominator is empty.
#[pyfunction]
fn score_day(py: Python<'_>, bundle_dir: &str, truth_path: &str) -> PyResult<Py<PyAny>> {
    let verified = extract::verify_bundle(Path::new(bundle_dir)).map_err(err)?;
    let bundle = extract::parse_extract_day(&verified).map_err(err)?;
    let map = linkage::BedLabelMap::new(BTreeMap::new(), false);
    let linked = linkage::link_day(&bundle, &map).map_err(err)?;
    let truth = synthgen::load_truth(Path::new(truth_path)).map_err(err)?;
    to_py(py, &synthgen::score_linkage(&linked, &truth))
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Verifies a bundle directory against its manifest (sizes and SHA-256
/// digests, day-field consistency). Returns the number of verified files;
/// raises on the first problem.
#[pyfunction]
fn verify_bundle(bundle_dir: &str) -> PyResult<usize> {
    let verified = extract::verify_bundle(Path::new(bundle_dir)).map_err(err)?;
    Ok(verified.manifest.len())
}

/// Runs (or resumes) one day through every pipeline phase using a
/// `key = value` pipeline config file. Returns the final checkpoint
/// state: last phase and per-phase digests.
#[pyfunction]
fn run_day(py: Python<'_>, config_path: &str, day: &str) -> PyResult<Py<PyAny>> {
    let config = pipeline::PipelineConfig::load(Path::new(config_path)).map_err(err)?;
    let state = pipeline::run_day(&config, parse_day(day)?).map_err(err)?;
    to_py(py, &state)
}

/// Runs every day in [from_day, to_day], at most `parallelism` at once.
/// Returns {"published", "failed", "exit_code", "outcomes"}; days that
/// fail are reported, never raised, matching the CLI's behavior.
#[pyfunction]
#[pyo3(signature = (config_path, from_day, to_day, parallelism = 1))]
fn run_range(
    py: Python<'_>,
    config_path: &str,
    from_day: &str,
    to_day: &str,
    parallelism: usize,
) -> PyResult<Py<PyAny>> {
    let config = pipeline::PipelineConfig::load(Path::new(config_path)).map_err(err)?;
    let summary =
        pipeline::run_range(&config, parse_day(from_day)?, parse_day(to_day)?, parallelism)
            .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("published", summary.published())?;
    d.set_item("failed", summary.failed())?;
    d.set_item("exit_code", summary.exit_code())?;
    d.set_item("outcomes", to_py(py, &summary.outcomes)?)?;
    d.into_py_any(py)
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

/// Conjunctive catalog query returning matching study_map rows as dicts,
/// ordered by start time. List filters are OR within a field, AND across
/// fields; `start`/`end` (RFC 3339) bound an overlap window; `waves`
/// joins through study_details and rejects unknown symbols.
#[pyfunction]
#[pyo3(signature = (catalog_root, mrns = None, beds = None, units = None, waves = None, start = None, end = None))]
#[allow(clippy::too_many_arguments)]
fn query_studies(
    py: Python<'_>,
    catalog_root: &str,
    mrns: Option<Vec<String>>,
    beds: Option<Vec<String>>,
    units: Option<Vec<String>>,
    waves: Option<Vec<String>>,
    start: Option<String>,
    end: Option<String>,
) -> PyResult<Py<PyAny>> {
    let time_range = match (&start, &end) {
        (None, None) => None,
        (s, e) => {
            let lo = match s {
                Some(s) => parse_timestamp(s).map_err(err)?,
                None => chrono::DateTime::<chrono::Utc>::MIN_UTC,
            };
            let hi = match e {
                Some(e) => parse_timestamp(e).map_err(err)?,
                None => chrono::DateTime::<chrono::Utc>::MAX_UTC,
            };
            Some(TimeRange::new(lo, hi))
        }
    };
    let filter = catalog::QueryFilter {
        mrns: mrns.unwrap_or_default(),
        beds: beds.unwrap_or_default(),
        units: units.unwrap_or_default(),
        time_range,
        wave_symbols: waves.unwrap_or_default(),
    };
    let rows = catalog::query_studies(Path::new(catalog_root), &filter).map_err(err)?;
    to_py(py, &rows)
}

/// Loads a whole catalog and returns its archive statistics.
#[pyfunction]
fn summarize(py: Python<'_>, catalog_root: &str) -> PyResult<Py<PyAny>> {
    let stats = catalog::summarize(Path::new(catalog_root), None).map_err(err)?;
    to_py(py, &stats)
}

/// Cross-checks the catalog tables against each other and the storage
/// tree under `storage_base`. Returns a list of problems; empty means
/// intact.
#[pyfunction]
fn check_referential_integrity(catalog_root: &str, storage_base: &str) -> PyResult<Vec<String>> {
    catalog::check_referential_integrity(Path::new(catalog_root), Path::new(storage_base))
        .map_err(err)
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// Reads a waveform record pair (`.hea` + `.dat`), re-verifying length,
/// checksum, and registry facts. Returns the header fields plus physical
/// samples; gaps read back as None.
#[pyfunction]
fn read_record(py: Python<'_>, hea_path: &str) -> PyResult<Py<PyAny>> {
    let rec = signal_store::read_record(Path::new(hea_path)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("record_name", &rec.header.record_name)?;
    d.set_item("rate", rec.header.rate)?;
    d.set_item("n_samples", rec.header.n_samples)?;
    d.set_item("base_time", wavevault::time::format_timestamp(rec.header.base_time))?;
    d.set_item("gain", rec.header.gain)?;
    d.set_item("baseline", rec.header.baseline)?;
    d.set_item("unit", &rec.header.unit)?;
    d.set_item("description", &rec.header.description)?;
    d.set_item("dat_file", &rec.header.dat_file)?;
    d.set_item("samples", &rec.samples)?;
    d.into_py_any(py)
}

/// Lists the study archive paths recorded for a day, resolved against
/// `storage_base`; a convenience for fetching packed studies after a
/// query.
#[pyfunction]
fn study_archive_paths(catalog_root: &str, storage_base: &str, day: &str) -> PyResult<Vec<String>> {
    let day = parse_day(day)?;
    let rows = catalog::load_waveform_manifest(Path::new(catalog_root)).map_err(err)?;
    Ok(rows
        .iter()
        .filter(|r| r.day == day)
        .map(|r| {
            PathBuf::from(storage_base)
                .join("studies")
                .join(format!("day={}", r.day))
                .join(&r.zip_name)
                .to_string_lossy()
                .into_owned()
        })
        .collect())
}

#[pymodule]
fn wavevault_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize_bed_label, m)?)?;
    m.add_function(wrap_pyfunction!(sanitize_adt, m)?)?;
    m.add_function(wrap_pyfunction!(derive_shift, m)?)?;
    m.add_function(wrap_pyfunction!(derive_pseudo, m)?)?;
    m.add_function(wrap_pyfunction!(scrub_text, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(score_day, m)?)?;
    m.add_function(wrap_pyfunction!(verify_bundle, m)?)?;
    m.add_function(wrap_pyfunction!(run_day, m)?)?;
    m.add_function(wrap_pyfunction!(run_range, m)?)?;
    m.add_function(wrap_pyfunction!(query_studies, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(check_referential_integrity, m)?)?;
    m.add_function(wrap_pyfunction!(read_record, m)?)?;
    m.add_function(wrap_pyfunction!(study_archive_paths, m)?)?;
    Ok(())
}

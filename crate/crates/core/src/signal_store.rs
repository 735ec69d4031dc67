//! WFDB-subset storage for study waveforms.
//!
//! Each wave of a study becomes one single-signal record: a text header
//! (`<study_id>_<symbol>.hea`) plus a little-endian 16-bit sample file
//! (`.dat`, format 16). Gaps inside the study span are filled with the
//! INVALID sentinel; numerics and alerts live in CSV sidecars next to the
//! records; `study_details.json` describes the folder; the folder packs
//! into a deterministic zip.

use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::WaveSampleRecord;
use crate::hash::sha256_file;
use crate::registry;
use crate::segmentation::Study;
use crate::time::Timestamp;

/// WFDB sample sentinel for "no data here".
pub const INVALID: i16 = i16::MIN;

/// Stored-value budget: quantization maps the physical range into
/// `[-QUANT_SPAN, QUANT_SPAN]` adu.
const QUANT_SPAN: f64 = 30_000.0;

/// Gain used for constant signals, where the range gives no scale.
const CONSTANT_GAIN: f64 = 200.0;

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

/// Picks an affine physical→adu map for a set of samples.
///
/// Non-constant signals map `[min, max]` onto `[-30000, 30000]`; constant
/// signals get gain 200 with the baseline centering the value at adu 0.
/// The gain is rounded to six significant digits because it is stored as
/// text in the header; the baseline is chosen after rounding so
/// dequantization uses exactly what the header says.
pub fn choose_quantization(samples: impl Iterator<Item = f64>) -> Result<(f64, i32)> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut any = false;
    for s in samples {
        if s.is_finite() {
            any = true;
            min = min.min(s);
            max = max.max(s);
        }
    }
    if !any {
        return Err(Error::NoFiniteSamples);
    }
    let mut gain = if max > min { round_six_sig(2.0 * QUANT_SPAN / (max - min)) } else { CONSTANT_GAIN };
    let center = (min + max) / 2.0;
    // Keep the baseline representable; absurdly small ranges would
    // otherwise explode it.
    while (gain * center).abs() > 2.0e9 {
        gain = round_six_sig(gain / 10.0);
    }
    let baseline = -(gain * center).round() as i32;
    Ok((gain, baseline))
}

fn round_six_sig(x: f64) -> f64 {
    // Text round trip through scientific notation with 5 fractional
    // digits = 6 significant digits.
    format!("{x:.5e}").parse().expect("formatted float reparses")
}

fn quantize(x: f64, gain: f64, baseline: i32) -> i16 {
    if !x.is_finite() {
        return INVALID;
    }
    let adu = (gain * x).round() as i64 + baseline as i64;
    let adu = adu.clamp(-32_000, 32_000);
    adu as i16
}

fn dequantize(adu: i16, gain: f64, baseline: i32) -> f64 {
    (adu as f64 - baseline as f64) / gain
}

// ---------------------------------------------------------------------------
// Header
// ---------------------------------------------------------------------------

/// Parsed form of a record header (`.hea`).
#[derive(Debug, Clone, PartialEq)]
pub struct RecordHeader {
    pub record_name: String,
    pub rate: u32,
    pub n_samples: u64,
    pub base_time: Timestamp,
    pub dat_file: String,
    pub gain: f64,
    pub baseline: i32,
    pub unit: String,
    pub init_value: i16,
    pub checksum: i16,
    pub description: String,
}

impl RecordHeader {
    /// Wave symbol, taken from the record name suffix.
    pub fn symbol(&self) -> Result<&str> {
        self.record_name
            .rsplit('_')
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::HeaderParse(format!("record name {:?} has no wave suffix", self.record_name)))
    }
}

fn render_base_time(t: Timestamp) -> String {
    if t.timestamp_subsec_micros() == 0 {
        format!("{} {}", t.format("%H:%M:%S"), t.format("%d/%m/%Y"))
    } else {
        format!("{} {}", t.format("%H:%M:%S%.6f"), t.format("%d/%m/%Y"))
    }
}

pub fn render_header(h: &RecordHeader) -> String {
    format!(
        "{} 1 {} {} {}\n{} 16 {}({})/{} 16 0 {} {} 0 {}\n",
        h.record_name,
        h.rate,
        h.n_samples,
        render_base_time(h.base_time),
        h.dat_file,
        h.gain,
        h.baseline,
        h.unit,
        h.init_value,
        h.checksum,
        h.description,
    )
}

pub fn parse_header(text: &str) -> Result<RecordHeader> {
    let bad = |msg: String| Error::HeaderParse(msg);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let record_line = lines.next().ok_or_else(|| bad("missing record line".into()))?;
    let signal_line = lines.next().ok_or_else(|| bad("missing signal line".into()))?;

    let rt: Vec<&str> = record_line.split_whitespace().collect();
    if rt.len() != 6 {
        return Err(bad(format!("record line must have 6 fields, got {}", rt.len())));
    }
    if rt[1] != "1" {
        return Err(bad(format!("expected a single-signal record, got {} signals", rt[1])));
    }
    let rate: u32 = rt[2].parse().map_err(|_| bad(format!("bad rate {:?}", rt[2])))?;
    let n_samples: u64 = rt[3].parse().map_err(|_| bad(format!("bad sample count {:?}", rt[3])))?;
    let time_part = rt[4];
    let date_part = rt[5];
    let date = chrono::NaiveDate::parse_from_str(date_part, "%d/%m/%Y")
        .map_err(|e| bad(format!("bad base date {date_part:?}: {e}")))?;
    let time = chrono::NaiveTime::parse_from_str(time_part, "%H:%M:%S%.f")
        .map_err(|e| bad(format!("bad base time {time_part:?}: {e}")))?;
    let base_time = date.and_time(time).and_utc();

    let st: Vec<&str> = signal_line.splitn(9, ' ').collect();
    if st.len() != 9 {
        return Err(bad(format!("signal line must have 9 fields, got {}", st.len())));
    }
    if st[1] != "16" {
        return Err(bad(format!("unsupported format {:?}, only 16 supported", st[1])));
    }
    if st[3] != "16" {
        return Err(bad(format!("unsupported adc resolution {:?}", st[3])));
    }
    let spec = st[2];
    let open = spec.find('(').ok_or_else(|| bad(format!("gain spec {spec:?} missing '('")))?;
    let close = spec.find(')').ok_or_else(|| bad(format!("gain spec {spec:?} missing ')'")))?;
    let slash = spec.find('/').ok_or_else(|| bad(format!("gain spec {spec:?} missing '/'")))?;
    if !(open < close && close < slash) {
        return Err(bad(format!("gain spec {spec:?} malformed")));
    }
    let gain: f64 = spec[..open].parse().map_err(|_| bad(format!("bad gain in {spec:?}")))?;
    let baseline: i32 =
        spec[open + 1..close].parse().map_err(|_| bad(format!("bad baseline in {spec:?}")))?;
    let unit = spec[slash + 1..].to_string();
    if gain <= 0.0 || !gain.is_finite() {
        return Err(bad(format!("non-positive gain {gain}")));
    }
    let init_value: i16 = st[5].parse().map_err(|_| bad(format!("bad initial value {:?}", st[5])))?;
    let checksum: i16 = st[6].parse().map_err(|_| bad(format!("bad checksum {:?}", st[6])))?;

    Ok(RecordHeader {
        record_name: rt[0].to_string(),
        rate,
        n_samples,
        base_time,
        dat_file: st[0].to_string(),
        gain,
        baseline,
        unit,
        init_value,
        checksum,
        description: st[8].to_string(),
    })
}

// ---------------------------------------------------------------------------
// Write
// ---------------------------------------------------------------------------

/// Catalog-facing facts about one written wave record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveFileMeta {
    pub symbol: String,
    pub unit: String,
    pub rate: u32,
    pub n_samples: u64,
    /// Sample file name within the study folder.
    pub file: String,
    /// Size of the sample file in bytes (always `2 × n_samples`).
    pub size_bytes: u64,
}

pub fn checksum16(samples: &[i16]) -> i16 {
    samples.iter().fold(0i16, |acc, &s| acc.wrapping_add(s))
}

/// Lays blocks onto a uniform sample grid anchored at the first block.
///
/// Returns the grid and its anchor. Gaps become INVALID; overlapping
/// blocks are an error.
fn grid_samples(blocks: &[&WaveSampleRecord]) -> Result<(Vec<f64>, Timestamp)> {
    let anchor = blocks[0].block_start;
    let rate = blocks[0].sample_rate as i64;
    let mut grid: Vec<f64> = Vec::new();
    for block in blocks {
        let offset_us = (block.block_start - anchor)
            .num_microseconds()
            .ok_or_else(|| Error::HeaderParse("block offset overflow".into()))?;
        // Round to the nearest grid slot; block starts are produced on
        // (sub)sample boundaries so this is exact in practice.
        let idx = ((offset_us * rate) + 500_000).div_euclid(1_000_000);
        if idx < grid.len() as i64 {
            return Err(Error::OverlappingBlocks(format!(
                "{} block at {}",
                blocks[0].wave,
                block.block_start.to_rfc3339()
            )));
        }
        grid.resize(idx as usize, f64::NAN);
        grid.extend_from_slice(&block.samples);
    }
    Ok((grid, anchor))
}

/// Writes one wave of a study as a WFDB-subset record pair.
///
/// Returns `None` (and writes nothing) when `blocks` is empty. All blocks
/// must share the wave symbol; gaps between blocks are stored as INVALID.
pub fn write_record(
    study_id: &str,
    symbol: &str,
    blocks: &[&WaveSampleRecord],
    out_dir: &Path,
) -> Result<Option<WaveFileMeta>> {
    if blocks.is_empty() {
        return Ok(None);
    }
    let spec = registry::wave_spec(symbol)?;
    debug_assert!(blocks.iter().all(|b| b.wave == symbol && b.sample_rate == spec.rate));

    let (grid, anchor) = grid_samples(blocks)?;
    let (gain, baseline) = choose_quantization(grid.iter().copied())?;
    let adus: Vec<i16> = grid.iter().map(|&x| quantize(x, gain, baseline)).collect();

    let record_name = format!("{study_id}_{symbol}");
    let dat_file = format!("{record_name}.dat");
    let mut bytes = Vec::with_capacity(adus.len() * 2);
    for adu in &adus {
        bytes.extend_from_slice(&adu.to_le_bytes());
    }
    std::fs::write(out_dir.join(&dat_file), &bytes)?;

    let header = RecordHeader {
        record_name: record_name.clone(),
        rate: spec.rate,
        n_samples: adus.len() as u64,
        base_time: anchor,
        dat_file: dat_file.clone(),
        gain,
        baseline,
        unit: spec.unit.to_string(),
        init_value: adus[0],
        checksum: checksum16(&adus),
        description: spec.name.to_string(),
    };
    std::fs::write(out_dir.join(format!("{record_name}.hea")), render_header(&header))?;

    Ok(Some(WaveFileMeta {
        symbol: symbol.to_string(),
        unit: spec.unit.to_string(),
        rate: spec.rate,
        n_samples: adus.len() as u64,
        file: dat_file,
        size_bytes: bytes.len() as u64,
    }))
}

// ---------------------------------------------------------------------------
// Read
// ---------------------------------------------------------------------------

/// A record read back from disk: physical samples with a gap mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadRecord {
    pub header: RecordHeader,
    /// `None` marks an INVALID (gap) sample.
    pub samples: Vec<Option<f64>>,
}

/// Reads and verifies a record pair.
///
/// Errors when the sample file length disagrees with the header, the
/// recomputed checksum disagrees, or the header's rate or description
/// contradicts the wave registry for the record's symbol.
pub fn read_record(hea_path: &Path) -> Result<ReadRecord> {
    let text = std::fs::read_to_string(hea_path)?;
    let header = parse_header(&text)?;

    let symbol = header.symbol()?.to_string();
    let spec = registry::wave_spec(&symbol)?;
    if spec.rate != header.rate {
        return Err(Error::HeaderParse(format!(
            "rate {} contradicts {} for wave {}: duration would be inconsistent",
            header.rate, spec.rate, symbol
        )));
    }
    if spec.name != header.description {
        return Err(Error::HeaderParse(format!(
            "description {:?} contradicts registry name {:?} for wave {}",
            header.description, spec.name, symbol
        )));
    }

    let dat_path = hea_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.dat_file);
    let bytes = std::fs::read(&dat_path)?;
    let expected_bytes = header.n_samples * 2;
    if bytes.len() as u64 != expected_bytes {
        return Err(Error::RecordLength {
            record: header.record_name.clone(),
            expected_bytes,
            actual_bytes: bytes.len() as u64,
        });
    }
    let adus: Vec<i16> = bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    let actual = checksum16(&adus);
    if actual != header.checksum {
        return Err(Error::ChecksumMismatch {
            record: header.record_name.clone(),
            expected: header.checksum,
            actual,
        });
    }

    let samples = adus
        .iter()
        .map(|&adu| (adu != INVALID).then(|| dequantize(adu, header.gain, header.baseline)))
        .collect();
    Ok(ReadRecord { header, samples })
}

// ---------------------------------------------------------------------------
// Study folders
// ---------------------------------------------------------------------------

pub const STUDY_DETAILS_FILE: &str = "study_details.json";
pub const NUMERICS_SIDECAR: &str = "numerics.csv";
pub const ALERTS_SIDECAR: &str = "alerts.csv";

/// `study_details.json` schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDetails {
    pub study_id: String,
    pub mrn_present: bool,
    pub bed: String,
    pub start: String,
    pub end: String,
    pub waves: Vec<WaveFileMeta>,
    pub numerics_rows: u64,
    pub alert_rows: u64,
    pub deidentified: bool,
}

/// Writes a complete study folder: per-wave records, numerics/alerts
/// sidecars, and `study_details.json`. Sidecars deliberately omit monitor
/// patient ids and bed labels — folder identity lives in the study id.
pub fn write_study(study: &Study, dir: &Path) -> Result<StudyDetails> {
    std::fs::create_dir_all(dir)?;

    let mut by_symbol: BTreeMap<&str, Vec<&WaveSampleRecord>> = BTreeMap::new();
    for w in &study.waves {
        by_symbol.entry(&w.wave).or_default().push(w);
    }
    let mut waves = Vec::new();
    for (symbol, blocks) in by_symbol {
        if let Some(meta) = write_record(&study.skeleton.study_id, symbol, &blocks, dir)? {
            waves.push(meta);
        }
    }

    let mut numerics = String::from("observed_at,metric,value,unit\n");
    for n in &study.numerics {
        let row = n.to_row();
        numerics.push_str(&format!("{},{},{},{}\n", row[2], row[3], row[4], row[5]));
    }
    std::fs::write(dir.join(NUMERICS_SIDECAR), numerics)?;

    let mut alerts = String::from("at,severity,text\n");
    {
        let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
        for a in &study.alerts {
            writer.write_record([
                crate::time::format_timestamp(a.at).as_str(),
                a.severity.as_str(),
                a.text.as_str(),
            ])?;
        }
        let body = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let mut file = std::fs::File::create(dir.join(ALERTS_SIDECAR))?;
        file.write_all(alerts.as_bytes())?;
        file.write_all(&body)?;
        alerts.clear();
    }

    let details = StudyDetails {
        study_id: study.skeleton.study_id.clone(),
        mrn_present: study.skeleton.mrn.is_some(),
        bed: study.skeleton.normalized_bed.clone(),
        start: crate::time::format_timestamp(study.skeleton.range.start),
        end: crate::time::format_timestamp(study.skeleton.range.end),
        waves,
        numerics_rows: study.numerics.len() as u64,
        alert_rows: study.alerts.len() as u64,
        deidentified: false,
    };
    write_details(dir, &details)?;
    Ok(details)
}

pub fn write_details(dir: &Path, details: &StudyDetails) -> Result<()> {
    let mut text = serde_json::to_string_pretty(details)?;
    text.push('\n');
    std::fs::write(dir.join(STUDY_DETAILS_FILE), text)?;
    Ok(())
}

pub fn read_details(dir: &Path) -> Result<StudyDetails> {
    let text = std::fs::read_to_string(dir.join(STUDY_DETAILS_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// A packed study archive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedStudy {
    pub zip_name: String,
    pub size_bytes: u64,
    pub sha256: String,
}

/// Packs a study folder into `<study_id>.zip` next to it.
///
/// Entry order, timestamps, and permissions are fixed so identical
/// folders always produce byte-identical archives. Refuses folders
/// without `study_details.json`.
pub fn pack_study(dir: &Path) -> Result<PathBuf> {
    if !dir.join(STUDY_DETAILS_FILE).is_file() {
        return Err(Error::MapMissingEntry(format!(
            "{} has no {STUDY_DETAILS_FILE}; refusing to pack an incomplete study",
            dir.display()
        )));
    }
    let study_name = dir
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::ConfigInvalid(format!("bad study dir {}", dir.display())))?;
    let zip_path = dir
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(format!("{study_name}.zip"));

    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            if let Some(name) = entry.file_name().to_str() {
                names.push(name.to_string());
            }
        }
    }
    names.sort();

    let file = std::fs::File::create(&zip_path)?;
    let mut zip = zip::ZipWriter::new(file);
    let options = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default())
        .unix_permissions(0o644);
    for name in &names {
        zip.start_file(name.as_str(), options)?;
        let data = std::fs::read(dir.join(name))?;
        zip.write_all(&data)?;
    }
    zip.finish()?;
    Ok(zip_path)
}

/// Manifest triple for a packed study.
pub fn describe_zip(zip_path: &Path) -> Result<PackedStudy> {
    Ok(PackedStudy {
        zip_name: zip_path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string(),
        size_bytes: std::fs::metadata(zip_path)?.len(),
        sha256: sha256_file(zip_path)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linkage::LinkMethod;
    use crate::segmentation::StudySkeleton;
    use crate::time::{parse_timestamp, TimeRange};

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s).unwrap()
    }

    fn block(symbol: &str, start: &str, rate: u32, samples: Vec<f64>) -> WaveSampleRecord {
        WaveSampleRecord {
            monitor_patient_id: "p1".to_string(),
            bed_label: "13ALPHA".to_string(),
            wave: symbol.to_string(),
            block_start: ts(start),
            sample_rate: rate,
            samples,
        }
    }

    #[test]
    fn constant_zero_signal_dequantizes_exactly() {
        let (gain, baseline) = choose_quantization([0.0, 0.0, 0.0].into_iter()).unwrap();
        assert_eq!(gain, CONSTANT_GAIN);
        assert_eq!(baseline, 0);
        let adu = quantize(0.0, gain, baseline);
        assert_eq!(dequantize(adu, gain, baseline), 0.0);
    }

    #[test]
    fn quantization_error_bounded_by_half_adu() {
        let samples: Vec<f64> = (0..1000).map(|i| -1.5 + 3.0 * (i as f64) / 999.0).collect();
        let (gain, baseline) = choose_quantization(samples.iter().copied()).unwrap();
        let bound = 0.5 / gain;
        for &x in &samples {
            let y = dequantize(quantize(x, gain, baseline), gain, baseline);
            assert!((x - y).abs() <= bound, "error {} exceeds {bound}", (x - y).abs());
        }
    }

    #[test]
    fn no_finite_samples_is_an_error() {
        assert!(matches!(
            choose_quantization([f64::NAN, f64::INFINITY].into_iter()),
            Err(Error::NoFiniteSamples)
        ));
    }

    #[test]
    fn ten_seconds_of_lead_ii_writes_5000_samples() {
        let tmp = tempfile::tempdir().unwrap();
        let samples: Vec<f64> = (0..5000).map(|i| ((i % 500) as f64) / 500.0 - 0.5).collect();
        let b = block("II", "2021-03-01T10:00:00Z", 500, samples);
        let meta = write_record("p1_A13_20210301T100000Z", "II", &[&b], tmp.path())
            .unwrap()
            .unwrap();
        assert_eq!(meta.n_samples, 5000);
        assert_eq!(meta.rate, 500);
        assert_eq!(meta.size_bytes, 10_000);
        let hea = tmp.path().join("p1_A13_20210301T100000Z_II.hea");
        let text = std::fs::read_to_string(&hea).unwrap();
        assert!(text.contains(" 500 5000 "));
        assert!(text.trim_end().ends_with("Lead II - ECG Wave Label"));
        // Header-declared sample count × 2 equals the dat size on disk.
        let dat = std::fs::metadata(tmp.path().join(&meta.file)).unwrap().len();
        assert_eq!(dat, meta.n_samples * 2);
    }

    #[test]
    fn two_second_gap_in_resp_embeds_126_invalids() {
        let tmp = tempfile::tempdir().unwrap();
        let b1 = block("Resp", "2021-03-01T10:00:00Z", 63, vec![0.25; 63]);
        let b2 = block("Resp", "2021-03-01T10:00:03Z", 63, vec![0.75; 63]);
        write_record("s", "Resp", &[&b1, &b2], tmp.path()).unwrap().unwrap();
        let rec = read_record(&tmp.path().join("s_Resp.hea")).unwrap();
        let gaps = rec.samples.iter().filter(|s| s.is_none()).count();
        assert_eq!(gaps, 126);
        assert_eq!(rec.samples.len(), 63 * 4);
        // The mask sits exactly between the blocks.
        assert!(rec.samples[..63].iter().all(|s| s.is_some()));
        assert!(rec.samples[63..189].iter().all(|s| s.is_none()));
        assert!(rec.samples[189..].iter().all(|s| s.is_some()));
    }

    #[test]
    fn round_trip_within_half_adu_with_exact_gap_mask() {
        let tmp = tempfile::tempdir().unwrap();
        let vals: Vec<f64> = (0..250).map(|i| (i as f64 * 0.017).sin()).collect();
        let b1 = block("Pleth", "2021-03-01T10:00:00Z", 125, vals[..125].to_vec());
        let b2 = block("Pleth", "2021-03-01T10:00:02Z", 125, vals[125..].to_vec());
        write_record("s", "Pleth", &[&b1, &b2], tmp.path()).unwrap().unwrap();
        let rec = read_record(&tmp.path().join("s_Pleth.hea")).unwrap();
        let bound = 0.5 / rec.header.gain;
        let originals: Vec<Option<f64>> = vals[..125]
            .iter()
            .map(|&v| Some(v))
            .chain(std::iter::repeat(None).take(125))
            .chain(vals[125..].iter().map(|&v| Some(v)))
            .collect();
        assert_eq!(rec.samples.len(), originals.len());
        for (got, want) in rec.samples.iter().zip(&originals) {
            match (got, want) {
                (None, None) => {}
                (Some(g), Some(w)) => assert!((g - w).abs() <= bound),
                other => panic!("mask mismatch: {other:?}"),
            }
        }
    }

    #[test]
    fn overlapping_blocks_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let b1 = block("II", "2021-03-01T10:00:00Z", 500, vec![0.0; 1000]);
        let b2 = block("II", "2021-03-01T10:00:01Z", 500, vec![0.0; 1000]);
        assert!(matches!(
            write_record("s", "II", &[&b1, &b2], tmp.path()),
            Err(Error::OverlappingBlocks(_))
        ));
    }

    #[test]
    fn empty_block_list_writes_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(write_record("s", "II", &[], tmp.path()).unwrap().is_none());
        assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
    }

    #[test]
    fn corrupted_dat_fails_checksum() {
        let tmp = tempfile::tempdir().unwrap();
        let b = block("II", "2021-03-01T10:00:00Z", 500, (0..500).map(|i| i as f64 / 500.0).collect());
        write_record("s", "II", &[&b], tmp.path()).unwrap().unwrap();
        let dat = tmp.path().join("s_II.dat");
        let mut bytes = std::fs::read(&dat).unwrap();
        bytes[100] ^= 0x40;
        std::fs::write(&dat, &bytes).unwrap();
        assert!(matches!(
            read_record(&tmp.path().join("s_II.hea")),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn truncated_dat_fails_length_check() {
        let tmp = tempfile::tempdir().unwrap();
        let b = block("II", "2021-03-01T10:00:00Z", 500, vec![0.5; 500]);
        write_record("s", "II", &[&b], tmp.path()).unwrap().unwrap();
        let dat = tmp.path().join("s_II.dat");
        let bytes = std::fs::read(&dat).unwrap();
        std::fs::write(&dat, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(
            read_record(&tmp.path().join("s_II.hea")),
            Err(Error::RecordLength { .. })
        ));
    }

    #[test]
    fn edited_header_rate_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let b = block("II", "2021-03-01T10:00:00Z", 500, vec![0.5; 500]);
        write_record("s", "II", &[&b], tmp.path()).unwrap().unwrap();
        let hea = tmp.path().join("s_II.hea");
        let text = std::fs::read_to_string(&hea).unwrap();
        std::fs::write(&hea, text.replacen(" 500 ", " 125 ", 1)).unwrap();
        assert!(matches!(read_record(&hea), Err(Error::HeaderParse(_))));
    }

    #[test]
    fn header_renders_and_reparses_identically() {
        let h = RecordHeader {
            record_name: "p1_A13_20210301T101530Z_II".to_string(),
            rate: 500,
            n_samples: 12_345,
            base_time: ts("2021-03-01T10:15:30.500Z"),
            dat_file: "p1_A13_20210301T101530Z_II.dat".to_string(),
            gain: 199.998,
            baseline: -42,
            unit: "mV".to_string(),
            init_value: -7,
            checksum: 1234,
            description: "Lead II - ECG Wave Label".to_string(),
        };
        let text = render_header(&h);
        assert_eq!(parse_header(&text).unwrap(), h);
    }

    fn tiny_study(dir_day: &str) -> Study {
        let start = ts(&format!("{dir_day}T10:00:00Z"));
        Study {
            skeleton: StudySkeleton {
                study_id: format!("p1_A13_{}", crate::time::compact_stamp(start)),
                monitor_patient_id: "p1".to_string(),
                bed_label: "13ALPHA".to_string(),
                normalized_bed: "A13".to_string(),
                mrn: Some("M1001".to_string()),
                method: LinkMethod::DeviceLog,
                range: TimeRange::new(start, ts(&format!("{dir_day}T10:10:00Z"))),
                overlap_seconds: 600.0,
            },
            waves: vec![block("II", &format!("{dir_day}T10:00:00Z"), 500, vec![0.1; 1500])],
            numerics: vec![crate::extract::NumericRecord {
                monitor_patient_id: "p1".to_string(),
                bed_label: "13ALPHA".to_string(),
                observed_at: start,
                metric: crate::extract::Metric::Hr,
                value: 82.0,
                unit: "bpm".to_string(),
                lifetime_id: None,
            }],
            alerts: vec![crate::extract::AlertRecord {
                monitor_patient_id: "p1".to_string(),
                bed_label: "13ALPHA".to_string(),
                at: start,
                severity: crate::extract::AlertSeverity::Yellow,
                text: "HR high".to_string(),
            }],
        }
    }

    #[test]
    fn study_folder_contains_records_sidecars_and_details_without_ids() {
        let tmp = tempfile::tempdir().unwrap();
        let study = tiny_study("2021-03-01");
        let dir = tmp.path().join(&study.skeleton.study_id);
        let details = write_study(&study, &dir).unwrap();
        assert_eq!(details.waves.len(), 1);
        assert_eq!(details.numerics_rows, 1);
        assert_eq!(details.alert_rows, 1);
        assert!(details.mrn_present);
        assert!(!details.deidentified);
        // Neither the monitor patient id... wait, it is in the study id.
        // The *sidecars* must not carry row-level ids or bed labels.
        let numerics = std::fs::read_to_string(dir.join(NUMERICS_SIDECAR)).unwrap();
        assert_eq!(numerics, "observed_at,metric,value,unit\n2021-03-01T10:00:00Z,HR,82,bpm\n");
        let alerts = std::fs::read_to_string(dir.join(ALERTS_SIDECAR)).unwrap();
        assert_eq!(alerts, "at,severity,text\n2021-03-01T10:00:00Z,yellow,HR high\n");
        // MRN appears nowhere in the folder.
        for entry in std::fs::read_dir(&dir).unwrap() {
            let data = std::fs::read(entry.unwrap().path()).unwrap();
            assert!(!contains_bytes(&data, b"M1001"));
        }
    }

    fn contains_bytes(haystack: &[u8], needle: &[u8]) -> bool {
        haystack.windows(needle.len()).any(|w| w == needle)
    }

    #[test]
    fn packing_is_deterministic_and_requires_details() {
        let tmp = tempfile::tempdir().unwrap();
        let study = tiny_study("2021-03-01");
        let dir = tmp.path().join(&study.skeleton.study_id);
        write_study(&study, &dir).unwrap();
        let zip1 = pack_study(&dir).unwrap();
        let digest1 = sha256_file(&zip1).unwrap();
        std::fs::remove_file(&zip1).unwrap();
        let zip2 = pack_study(&dir).unwrap();
        assert_eq!(digest1, sha256_file(&zip2).unwrap());

        std::fs::remove_file(dir.join(STUDY_DETAILS_FILE)).unwrap();
        assert!(pack_study(&dir).is_err());
    }
}

//! Acceptance gate: ten end-to-end criteria, one test each, every test
//! printing a single `criterion NN ...: PASS (...)` line on success.
//!
//! Oracles are independent of the code under test wherever a value is
//! derived: golden intervals and bed labels are transcribed constants,
//! linkage scores come from generator ground truth, signal grids are
//! rebuilt from raw bundle blocks, and statistics are predicted from the
//! generator's plan rather than read back from the archive.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{Days, Duration, NaiveDate, NaiveDateTime};
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use wavevault::catalog::{
    check_referential_integrity, load_study_map, load_waveform_manifest, summarize,
};
use wavevault::deid::{derive_pseudo, derive_shift};
use wavevault::extract::{
    parse_extract_day, verify_bundle, AdtEvent, AdtEventKind, ExtractBundle, WaveSampleRecord,
};
use wavevault::hash::sha256_file;
use wavevault::linkage::{
    link_day, normalize_bed_label, sanitize_adt, BedLabelMap, DayLinkage, LinkMethod,
};
use wavevault::pipeline::{
    archive_digests, run_day, run_day_with_stop, run_range, Phase, PipelineConfig,
};
use wavevault::segmentation::{segment_day, DaySegmentation, Study, StudySkeleton};
use wavevault::signal_store::{read_record, write_study};
use wavevault::synthgen::{
    expected_stats, generate_corpus, generate_day, load_truth, score_linkage, truth_path,
    AdtNoise, CorpusLayout, GroundTruth, ScenarioConfig,
};
use wavevault::time::{Day, TimeRange, Timestamp};

const DEID_SEED: &str = "acceptance-deid-seed";

fn pass(n: u32, what: &str, detail: String) {
    println!("criterion {n:02} {what}: PASS ({detail})");
}

fn ts(text: &str) -> Timestamp {
    NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S")
        .expect("fixture timestamp")
        .and_utc()
}

fn plain_bed_map() -> BedLabelMap {
    BedLabelMap::new(BTreeMap::new(), false)
}

/// Verify + parse + link + segment one bundle directory.
fn parse_and_segment(bundle_dir: &Path) -> (ExtractBundle, DayLinkage, DaySegmentation) {
    let map = plain_bed_map();
    let verified = verify_bundle(bundle_dir).expect("bundle verifies");
    let bundle = parse_extract_day(&verified).expect("bundle parses");
    let linkage = link_day(&bundle, &map).expect("linkage");
    let seg = segment_day(&linkage, &bundle, &map).expect("segmentation");
    (bundle, linkage, seg)
}

fn corpus_pipeline(layout: &CorpusLayout) -> PipelineConfig {
    PipelineConfig::conventional(&layout.root, DEID_SEED)
}

fn corpus_truths(layout: &CorpusLayout) -> Vec<GroundTruth> {
    layout
        .days
        .iter()
        .map(|(day, _)| load_truth(&truth_path(&layout.extracts_root, *day)).expect("truth file"))
        .collect()
}

fn corpus_span(layout: &CorpusLayout) -> (Day, Day) {
    (layout.days.first().expect("days").0, layout.days.last().expect("days").0)
}

// ---------------------------------------------------------------------------
// 1. ADT sanitization goldens
// ---------------------------------------------------------------------------

/// Three canonical noisy-feed cases, transcribed with their expected
/// intervals: a zero-length in/out pair (no interval), a duplicated
/// admission (one interval), and a same-bed discharge/readmit chain with
/// zero gaps (one merged interval). Exact match, zero tolerance.
#[test]
fn criterion_01_adt_sanitization_goldens() {
    let ev = |event_id: u64, event: AdtEventKind, bed: &str, at: &str| AdtEvent {
        event_id,
        patient_name: "John Doe".into(),
        mrn: "JD".into(),
        visit_id: "1".into(),
        event,
        bed: bed.into(),
        at: ts(at),
    };

    // (a) transfer in + transfer out at the same instant: no interval.
    let a = vec![
        ev(1, AdtEventKind::TransferIn, "B09", "2019-03-02 04:19:00"),
        ev(2, AdtEventKind::TransferOut, "B09", "2019-03-02 04:19:00"),
    ];
    let report = sanitize_adt(&a, None);
    assert_eq!(report.stays.len(), 0, "zero-length pair must leave no interval");
    assert_eq!(report.zero_length_dropped, 1);

    // (b) duplicated admission row: exactly one interval, admit -> out.
    let b = vec![
        ev(1, AdtEventKind::Admission, "A17", "2020-08-23 11:29:00"),
        ev(2, AdtEventKind::Admission, "A17", "2020-08-23 11:29:00"),
        ev(3, AdtEventKind::TransferOut, "A17", "2020-09-23 20:24:00"),
    ];
    let report = sanitize_adt(&b, None);
    assert_eq!(report.stays.len(), 1, "duplicate admission must collapse to one interval");
    assert_eq!(report.duplicates_removed, 1);
    assert_eq!(
        report.stays[0].range,
        TimeRange::new(ts("2020-08-23 11:29:00"), ts("2020-09-23 20:24:00"))
    );
    assert!(!report.stays[0].open_ended);

    // (c) zero-gap discharge/readmit chain on one bed: one merged interval
    // keeping the first admit and the last discharge.
    let c = vec![
        ev(1, AdtEventKind::Admission, "A03", "2020-07-02 15:59:00"),
        ev(2, AdtEventKind::TransferOut, "A03", "2020-07-02 16:00:00"),
        ev(3, AdtEventKind::TransferIn, "A03", "2020-07-02 16:00:00"),
        ev(4, AdtEventKind::TransferOut, "A03", "2020-07-02 16:16:00"),
        ev(5, AdtEventKind::TransferIn, "A03", "2020-07-02 16:16:00"),
        ev(6, AdtEventKind::Discharge, "A03", "2020-07-02 21:03:00"),
    ];
    let report = sanitize_adt(&c, None);
    assert_eq!(report.stays.len(), 1, "readmit chain must merge to one interval");
    assert_eq!(report.chains_merged, 2);
    assert_eq!(
        report.stays[0].range,
        TimeRange::new(ts("2020-07-02 15:59:00"), ts("2020-07-02 21:03:00"))
    );
    assert_eq!(report.stays[0].bed, "A03");

    pass(1, "adt sanitization goldens", "3 golden tables produce exact intervals".into());
}

// ---------------------------------------------------------------------------
// 2. Bed-label goldens
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_bed_label_goldens() {
    let map = plain_bed_map();
    assert_eq!(normalize_bed_label("13ALPHA", &map).expect("13ALPHA"), "A13");
    assert_eq!(normalize_bed_label("01CHARLIE", &map).expect("01CHARLIE"), "C01");
    pass(2, "bed label goldens", "13ALPHA -> A13, 01CHARLIE -> C01".into());
}

// ---------------------------------------------------------------------------
// 3. Linkage coverage / accuracy at desk scale
// ---------------------------------------------------------------------------

/// Twenty seeded days with the realistic noise profile and half the
/// streams missing their lifetime id. Mean stream coverage must reach
/// 0.75 and mean time-weighted accuracy 0.92, measured against generator
/// ground truth, in under 60 seconds total.
#[test]
fn criterion_03_linkage_coverage_and_accuracy() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut coverages = Vec::new();
    let mut accuracies = Vec::new();

    for seed in 1..=20u64 {
        let mut config = ScenarioConfig::realistic(seed);
        config.missing_lifetime_id_fraction = 0.5;
        // Linkage consumes numerics extents only; skipping waves keeps the
        // twenty-day loop well inside the time budget.
        config.wave_symbols = Vec::new();
        config.validate().expect("scenario validates");

        let out = tmp.path().join(format!("seed{seed}"));
        fs::create_dir_all(&out).expect("seed dir");
        let (bundle_dir, truth) =
            generate_day(&config, config.start_day, &out).expect("generate day");
        let (_, linkage, _) = parse_and_segment(&bundle_dir);

        let score = score_linkage(&linkage, &truth);
        coverages.push(score.coverage.expect("missing-id streams exist under this profile"));
        if let Some(acc) = score.accuracy {
            accuracies.push(acc);
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cov = mean(&coverages);
    let acc = mean(&accuracies);
    let secs = started.elapsed().as_secs_f64();
    assert_eq!(coverages.len(), 20);
    assert!(cov >= 0.75, "mean coverage {cov:.4} below 0.75");
    assert!(acc >= 0.92, "mean accuracy {acc:.4} below 0.92");
    assert!(secs < 60.0, "linkage benchmark took {secs:.1}s, budget 60s");

    pass(
        3,
        "linkage targets",
        format!("mean coverage {cov:.3} >= 0.75, mean accuracy {acc:.3} >= 0.92, {secs:.1}s < 60s"),
    );
}

// ---------------------------------------------------------------------------
// 4. Segmentation properties over 500 randomized scenarios
// ---------------------------------------------------------------------------

/// Every study must fit inside one calendar day and inside one ground-truth
/// occupancy segment (so no study spans a transfer or an occupant
/// handover); per-wave sample counts must be conserved exactly between the
/// bundle and the studies; and the generator's independently planned
/// study list must match the derived one scenario-for-scenario.
#[test]
fn criterion_04_segmentation_properties() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut total_studies = 0usize;
    let mut agreements = 0usize;
    const SCENARIOS: u64 = 500;

    for i in 0..SCENARIOS {
        let mut config = ScenarioConfig::default();
        config.seed = 1000 + i;
        config.patients_per_day = 2 + (i % 4) as u32;
        config.beds = 2 + (i % 3) as u32;
        config.wave_symbols = vec!["Resp".into()];
        config.transfer_rate = [0.0, 0.3, 0.7, 1.0][(i % 4) as usize];
        config.missing_lifetime_id_fraction = [0.0, 0.5, 1.0][(i % 3) as usize];
        config.or_shared_stream_fraction = [0.0, 0.4][(i % 2) as usize];
        config.evidence_withheld_rate = [0.0, 0.3][((i / 2) % 2) as usize];
        config.evidence_mislabel_rate = [0.0, 0.2][((i / 4) % 2) as usize];
        config.adt_only_rate = [0.25, 0.4][((i / 8) % 2) as usize];
        config.adt_noise = AdtNoise {
            zero_length_pairs: [0.0, 1.0][((i / 3) % 2) as usize],
            duplicates: [0.0, 1.0][((i / 5) % 2) as usize],
            readmit_chains: [0.0, 1.0][((i / 7) % 2) as usize],
        };
        config.stay_seconds_min = 60 + (i % 30) as u32;
        config.stay_seconds_max = 150 + (i % 60) as u32;
        config.start_day = Day(NaiveDate::from_ymd_opt(2021, 1, 1)
            .expect("date")
            .checked_add_days(Days::new(i % 90))
            .expect("date"));
        config.validate().expect("scenario validates");

        let out = tmp.path().join(format!("scenario{i}"));
        fs::create_dir_all(&out).expect("scenario dir");
        let (bundle_dir, truth) =
            generate_day(&config, config.start_day, &out).expect("generate day");
        let (bundle, _, seg) = parse_and_segment(&bundle_dir);

        for study in &seg.studies {
            let sk = &study.skeleton;
            assert!(
                sk.range.duration_seconds() <= 86_400.0,
                "scenario {i}: study {} exceeds 24h",
                sk.study_id
            );
            let stream = truth
                .streams
                .iter()
                .find(|s| {
                    s.monitor_patient_id == sk.monitor_patient_id
                        && s.bed_label == sk.bed_label
                        && s.range.covers(&sk.range)
                })
                .unwrap_or_else(|| {
                    panic!("scenario {i}: no truth stream covers study {}", sk.study_id)
                });
            assert!(
                stream.segments.iter().any(|t| t.range.covers(&sk.range)),
                "scenario {i}: study {} spans an occupancy boundary",
                sk.study_id
            );
        }

        // Sample conservation: what went in comes out, nothing orphaned.
        assert!(seg.orphans.is_empty(), "scenario {i}: orphans present");
        let mut in_counts: BTreeMap<&str, u64> = BTreeMap::new();
        for w in &bundle.wave_samples {
            *in_counts.entry(w.wave.as_str()).or_default() += w.samples.len() as u64;
        }
        let mut out_counts: BTreeMap<&str, u64> = BTreeMap::new();
        for study in &seg.studies {
            for w in &study.waves {
                *out_counts.entry(w.wave.as_str()).or_default() += w.samples.len() as u64;
            }
        }
        assert_eq!(in_counts, out_counts, "scenario {i}: sample counts not conserved");

        // Boundary oracle: the generator predicts every study id and range
        // from its visit plan, before any pipeline code runs.
        let expected: BTreeSet<(String, Timestamp, Timestamp)> = truth
            .studies
            .iter()
            .map(|t| (t.study_id.clone(), t.range.start, t.range.end))
            .collect();
        let actual: BTreeSet<(String, Timestamp, Timestamp)> = seg
            .studies
            .iter()
            .map(|s| (s.skeleton.study_id.clone(), s.skeleton.range.start, s.skeleton.range.end))
            .collect();
        assert_eq!(expected, actual, "scenario {i}: boundary oracle disagrees");
        agreements += 1;
        total_studies += seg.studies.len();
    }

    assert_eq!(agreements as u64, SCENARIOS);
    assert!(total_studies > 500, "scenarios produced too few studies to be meaningful");
    pass(
        4,
        "segmentation properties",
        format!(
            "{SCENARIOS}/{SCENARIOS} scenarios agree with the boundary oracle, \
             {total_studies} studies, 0 over 24h, 0 spanning a boundary, samples conserved"
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Signal round trip
// ---------------------------------------------------------------------------

/// Rebuilds each record's sample grid directly from the raw bundle blocks
/// and compares it against the written-and-read-back record: quantization
/// error at most 0.5/gain per sample, gap masks exact, checksum verified
/// on read, and `.dat` exactly 2 bytes per sample. Covers all three
/// registry rates (500, 125, 63) across every study of a 5-day corpus,
/// plus a hand-built record with an interior gap.
#[test]
fn criterion_05_signal_round_trip() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut config = ScenarioConfig::default();
    config.seed = 505;
    config.days = 5;
    config.patients_per_day = 4;
    config.beds = 4;
    config.wave_symbols = vec!["II".into(), "Pleth".into(), "Resp".into()];
    config.transfer_rate = 0.3;
    config.or_shared_stream_fraction = 0.2;
    config.stay_seconds_min = 120;
    config.stay_seconds_max = 300;
    config.validate().expect("scenario validates");

    let corpus = generate_corpus(&config, tmp.path()).expect("corpus");
    let records_root = tmp.path().join("records");
    let mut studies_checked = 0u64;
    let mut records_checked = 0u64;
    let mut samples_checked = 0u64;
    let mut rates_seen: BTreeSet<u32> = BTreeSet::new();

    for (_, bundle_dir) in &corpus.days {
        let (_, _, seg) = parse_and_segment(bundle_dir);
        for study in &seg.studies {
            let dir = records_root.join(&study.skeleton.study_id);
            fs::create_dir_all(&dir).expect("study dir");
            let details = write_study(study, &dir).expect("write study");
            for meta in &details.waves {
                let blocks: Vec<&WaveSampleRecord> =
                    study.waves.iter().filter(|w| w.wave == meta.symbol).collect();
                check_record(&dir, &meta.file, &blocks);
                rates_seen.insert(meta.rate);
                records_checked += 1;
                samples_checked += meta.n_samples;
            }
            studies_checked += 1;
        }
    }

    assert!(studies_checked > 0);
    assert_eq!(
        rates_seen,
        BTreeSet::from([63u32, 125, 500]),
        "corpus must exercise all three registry rates"
    );

    // Interior gap: two 10-second blocks separated by a 10-second hole.
    let day = corpus.days[0].0;
    let start = day.start() + Duration::seconds(1000);
    let gap_block = |offset: i64| WaveSampleRecord {
        monitor_patient_id: "gapcase".into(),
        bed_label: "01ALPHA".into(),
        wave: "Resp".into(),
        block_start: start + Duration::seconds(offset),
        sample_rate: 63,
        samples: (0..630).map(|k| f64::from(k % 40) / 40.0 - 0.5).collect(),
    };
    let study = Study {
        skeleton: StudySkeleton {
            study_id: "gapcase_A01_20210301T001640".into(),
            monitor_patient_id: "gapcase".into(),
            bed_label: "01ALPHA".into(),
            normalized_bed: "A01".into(),
            mrn: None,
            method: LinkMethod::Unmatched,
            range: TimeRange::new(start, start + Duration::seconds(30)),
            overlap_seconds: 0.0,
        },
        waves: vec![gap_block(0), gap_block(20)],
        numerics: Vec::new(),
        alerts: Vec::new(),
    };
    let dir = records_root.join("gapcase");
    fs::create_dir_all(&dir).expect("gapcase dir");
    let details = write_study(&study, &dir).expect("write gapcase");
    assert_eq!(details.waves.len(), 1);
    let meta = &details.waves[0];
    assert_eq!(meta.n_samples, 1890, "630 + 630 gap slots + 630");
    let blocks: Vec<&WaveSampleRecord> = study.waves.iter().collect();
    check_record(&dir, &meta.file, &blocks);
    let rec = read_record(&dir.join(&meta.file).with_extension("hea")).expect("gapcase read");
    assert!(rec.samples[630..1260].iter().all(Option::is_none), "gap must read back INVALID");

    pass(
        5,
        "signal round trip",
        format!(
            "{records_checked} records across {studies_checked} studies, \
             {samples_checked} samples within 0.5/gain, gap masks exact, \
             checksums verified, dat sizes exact, rates 63/125/500"
        ),
    );
}

/// Compares one written record against a grid rebuilt from raw blocks:
/// per-sample error bound, exact gap mask, exact dat size. `read_record`
/// itself re-verifies the header checksum and registry facts.
fn check_record(dir: &Path, dat_file: &str, blocks: &[&WaveSampleRecord]) {
    let rec = read_record(&dir.join(dat_file).with_extension("hea")).expect("record reads");

    // Independent grid: whole-second block offsets times the rate.
    let anchor = blocks[0].block_start;
    let rate = i64::from(blocks[0].sample_rate);
    let mut expected: Vec<Option<f64>> = Vec::new();
    for block in blocks {
        let offset = block.block_start - anchor;
        let secs = offset.num_seconds();
        assert_eq!(
            offset.num_milliseconds(),
            secs * 1000,
            "generated blocks start on whole seconds"
        );
        let idx = usize::try_from(secs * rate).expect("non-negative slot");
        assert!(idx >= expected.len(), "blocks must not overlap");
        expected.resize(idx, None);
        expected.extend(block.samples.iter().map(|&v| Some(v)));
    }

    assert_eq!(rec.samples.len(), expected.len(), "grid length");
    assert_eq!(rec.header.n_samples, expected.len() as u64);
    let tolerance = 0.5 / rec.header.gain + 1e-9;
    for (i, (got, want)) in rec.samples.iter().zip(&expected).enumerate() {
        match (got, want) {
            (Some(g), Some(w)) => {
                assert!(
                    (g - w).abs() <= tolerance,
                    "sample {i}: |{g} - {w}| > {tolerance}"
                );
            }
            (None, None) => {}
            (got, want) => panic!("gap mask mismatch at {i}: read {got:?}, expected {want:?}"),
        }
    }

    let dat_len = fs::metadata(dir.join(dat_file)).expect("dat metadata").len();
    assert_eq!(dat_len, 2 * rec.header.n_samples, "dat must be 2 bytes per sample");
}

// ---------------------------------------------------------------------------
// 6. Single-byte corruption detection
// ---------------------------------------------------------------------------

/// Flips one random bit in a random byte, 50 times inside bundle files and
/// 50 times inside packed study archives. Every bundle corruption must
/// fail `verify_bundle`; every archive corruption must be caught by the
/// recorded SHA-256 digest.
#[test]
fn criterion_06_single_byte_corruption_detected() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut config = ScenarioConfig::default();
    config.seed = 606;
    config.patients_per_day = 3;
    config.beds = 2;
    config.wave_symbols = vec!["II".into(), "Resp".into()];
    config.stay_seconds_min = 120;
    config.stay_seconds_max = 240;
    config.validate().expect("scenario validates");

    let corpus = generate_corpus(&config, tmp.path()).expect("corpus");
    let pcfg = corpus_pipeline(&corpus);
    let day = corpus.days[0].0;
    run_day(&pcfg, day).expect("pipeline run");

    let bundle_dir = pcfg.bundle_dir(day);
    verify_bundle(&bundle_dir).expect("pristine bundle verifies");
    let bundle_files: Vec<PathBuf> = fs::read_dir(&bundle_dir)
        .expect("bundle dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.is_file())
        .collect();
    assert_eq!(bundle_files.len(), 8, "six tables + counts + manifest");

    let manifest_rows = load_waveform_manifest(&pcfg.catalog_root).expect("manifest rows");
    assert!(!manifest_rows.is_empty());
    for row in &manifest_rows {
        let zip = pcfg
            .identified_root
            .join("studies")
            .join(format!("day={}", row.day))
            .join(&row.zip_name);
        assert_eq!(sha256_file(&zip).expect("zip digest"), row.sha256, "pristine zip matches");
    }

    let mut rng = StdRng::seed_from_u64(6);
    let mut corrupt_one = |path: &Path| -> (Vec<u8>, usize, u8) {
        let mut bytes = fs::read(path).expect("read target");
        let pos = rng.random_range(0..bytes.len());
        let orig = bytes[pos];
        bytes[pos] = orig ^ (1u8 << rng.random_range(0..8u32));
        fs::write(path, &bytes).expect("write corrupted");
        (bytes, pos, orig)
    };
    let restore = |path: &Path, mut bytes: Vec<u8>, pos: usize, orig: u8| {
        bytes[pos] = orig;
        fs::write(path, &bytes).expect("restore");
    };

    let mut detected = 0usize;
    for k in 0..50 {
        let target = &bundle_files[k % bundle_files.len()];
        let (bytes, pos, orig) = corrupt_one(target);
        if verify_bundle(&bundle_dir).is_err() {
            detected += 1;
        }
        restore(target, bytes, pos, orig);
    }
    verify_bundle(&bundle_dir).expect("bundle restored");

    for k in 0..50 {
        let row = &manifest_rows[k % manifest_rows.len()];
        let zip = pcfg
            .identified_root
            .join("studies")
            .join(format!("day={}", row.day))
            .join(&row.zip_name);
        let (bytes, pos, orig) = corrupt_one(&zip);
        if sha256_file(&zip).expect("digest") != row.sha256 {
            detected += 1;
        }
        restore(&zip, bytes, pos, orig);
    }

    assert_eq!(detected, 100, "every corruption must be detected");
    pass(6, "integrity", "100/100 single-byte corruptions detected".into());
}

// ---------------------------------------------------------------------------
// 7. Determinism, idempotency, crash-resume
// ---------------------------------------------------------------------------

fn resume_scenario(seed: u64, days: u32) -> ScenarioConfig {
    let mut config = ScenarioConfig::default();
    config.seed = seed;
    config.days = days;
    config.patients_per_day = 3;
    config.beds = 2;
    config.wave_symbols = vec!["Resp".into()];
    config.transfer_rate = 0.5;
    config.stay_seconds_min = 90;
    config.stay_seconds_max = 180;
    config.validate().expect("scenario validates");
    config
}

#[test]
fn criterion_07_determinism_and_resume() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let config = resume_scenario(707, 3);

    let make = |name: &str| -> (CorpusLayout, PipelineConfig) {
        let dir = tmp.path().join(name);
        fs::create_dir_all(&dir).expect("corpus dir");
        let layout = generate_corpus(&config, &dir).expect("corpus");
        let pcfg = corpus_pipeline(&layout);
        (layout, pcfg)
    };

    // Parallelism 1 vs 4 over the same 3 days: byte-identical archives.
    let (a, ca) = make("a");
    let (first, last) = corpus_span(&a);
    let summary = run_range(&ca, first, last, 1).expect("range p1");
    assert_eq!(summary.exit_code(), 0);
    let digests_a = archive_digests(&ca).expect("digests a");
    let map_a = fs::read(ca.deid_map_path()).expect("deid map a");

    let (_b, cb) = make("b");
    let summary = run_range(&cb, first, last, 4).expect("range p4");
    assert_eq!(summary.exit_code(), 0);
    assert_eq!(archive_digests(&cb).expect("digests b"), digests_a, "parallelism changed bytes");
    assert_eq!(fs::read(cb.deid_map_path()).expect("deid map b"), map_a);

    // Rerunning a published day is a no-op: state and archive unchanged.
    let midday = a.days[1].0;
    let state_path =
        ca.identified_root.join("state").join(format!("day={midday}")).join("state.json");
    let state_before = fs::read(&state_path).expect("state before");
    run_day(&ca, midday).expect("rerun");
    assert_eq!(fs::read(&state_path).expect("state after"), state_before, "state changed");
    assert_eq!(archive_digests(&ca).expect("digests rerun"), digests_a, "rerun changed bytes");

    // Interrupt after every phase, resume, and compare against an
    // uninterrupted single-day baseline.
    let (c, cc) = make("baseline");
    run_day(&cc, c.days[0].0).expect("baseline day");
    let digests_c = archive_digests(&cc).expect("digests baseline");
    for phase in Phase::ALL {
        let name = format!("stop-{phase}");
        let (f, cf) = make(&name);
        run_day_with_stop(&cf, f.days[0].0, Some(phase)).expect("interrupted run");
        run_day(&cf, f.days[0].0).expect("resumed run");
        assert_eq!(
            archive_digests(&cf).expect("digests resumed"),
            digests_c,
            "resume after {phase} diverged"
        );
    }

    pass(
        7,
        "determinism and resume",
        "parallelism 1 == 4, rerun is a no-op, resume after each of 7 phases matches".into(),
    );
}

// ---------------------------------------------------------------------------
// 8. De-identification
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_deidentification() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut config = ScenarioConfig::clean(808);
    config.days = 2;
    config.patients_per_day = 5;
    config.beds = 4;
    config.wave_symbols = vec!["Resp".into()];
    // Every visit transfers, so every patient owns at least two studies and
    // the spacing check below always has material.
    config.transfer_rate = 1.0;
    config.validate().expect("scenario validates");

    let corpus = generate_corpus(&config, tmp.path()).expect("corpus");
    let pcfg = corpus_pipeline(&corpus);
    let (first, last) = corpus_span(&corpus);
    let summary = run_range(&pcfg, first, last, 2).expect("range");
    assert_eq!(summary.exit_code(), 0);

    // Corpus-wide byte scan: no MRN, patient name (or name token), or
    // visit id anywhere under the de-identified root — contents or paths.
    let truths = corpus_truths(&corpus);
    let mut needles: BTreeSet<Vec<u8>> = BTreeSet::new();
    for truth in &truths {
        for s in truth
            .identifiers
            .mrns
            .iter()
            .chain(&truth.identifiers.visit_ids)
            .chain(&truth.identifiers.patient_names)
        {
            needles.insert(s.to_lowercase().into_bytes());
            for token in s.split_whitespace() {
                needles.insert(token.to_lowercase().into_bytes());
            }
        }
    }
    assert!(needles.len() >= 30, "identifier set unexpectedly small");
    let mut files_scanned = 0u64;
    let mut bytes_scanned = 0u64;
    for entry in walkdir::WalkDir::new(&pcfg.deid_root).sort_by_file_name() {
        let entry = entry.expect("walk deid root");
        let path_l = entry.path().to_string_lossy().to_lowercase();
        for needle in &needles {
            let needle_s = std::str::from_utf8(needle).expect("ascii needle");
            assert!(
                !path_l.contains(needle_s),
                "identifier {needle_s:?} leaked into path {path_l}"
            );
        }
        if !entry.file_type().is_file() {
            continue;
        }
        let hay = fs::read(entry.path()).expect("read deid file").to_ascii_lowercase();
        for needle in &needles {
            assert!(
                !hay.windows(needle.len()).any(|w| w == &needle[..]),
                "identifier {:?} leaked into {}",
                String::from_utf8_lossy(needle),
                entry.path().display()
            );
        }
        files_scanned += 1;
        bytes_scanned += hay.len() as u64;
    }
    assert!(files_scanned > 0);

    // Intra-patient spacing is invariant under the per-patient shift, and
    // each de-identified study sits exactly shift days before its twin.
    let id_rows = load_study_map(&pcfg.catalog_root).expect("identified map");
    let deid_rows = load_study_map(&pcfg.deid_catalog_root()).expect("deid map");
    assert_eq!(id_rows.len(), deid_rows.len());
    let deid_index: BTreeSet<(String, Timestamp)> = deid_rows
        .iter()
        .map(|r| (r.subject_id.clone().expect("deid subject"), r.start))
        .collect();
    let mut id_starts: BTreeMap<String, Vec<Timestamp>> = BTreeMap::new();
    let mut deid_starts: BTreeMap<String, Vec<Timestamp>> = BTreeMap::new();
    for row in &id_rows {
        let mrn = row.subject_id.clone().expect("clean corpus links every study");
        let pseudo = derive_pseudo(&mrn, DEID_SEED);
        let shift = i64::from(derive_shift(&mrn, DEID_SEED));
        assert!(
            deid_index.contains(&(pseudo.clone(), row.start - Duration::days(shift))),
            "study {} lacks a twin shifted back {shift} days",
            row.study_id
        );
        id_starts.entry(mrn).or_default().push(row.start);
    }
    for row in &deid_rows {
        deid_starts
            .entry(row.subject_id.clone().expect("deid subject"))
            .or_default()
            .push(row.start);
    }
    let deltas = |starts: &mut Vec<Timestamp>| -> Vec<i64> {
        starts.sort();
        starts.windows(2).map(|w| (w[1] - w[0]).num_seconds()).collect()
    };
    let mut multi_study_patients = 0usize;
    for (mrn, mut starts) in id_starts {
        let pseudo = derive_pseudo(&mrn, DEID_SEED);
        let mut twin = deid_starts.remove(&pseudo).expect("pseudo present in deid catalog");
        assert_eq!(deltas(&mut starts), deltas(&mut twin), "spacing changed for one patient");
        if starts.len() >= 2 {
            multi_study_patients += 1;
        }
    }
    assert!(multi_study_patients >= 5, "transfer_rate 1.0 should yield multi-study patients");

    // Shift distribution: uniform over [30, 365] by chi-square at p > 0.01.
    let mut counts = [0u64; 336];
    for i in 0..10_000u32 {
        let shift = derive_shift(&format!("MRN{i:05}"), "distribution-probe-seed");
        assert!((30..=365).contains(&shift), "shift {shift} outside [30, 365]");
        counts[(shift - 30) as usize] += 1;
    }
    let expected = 10_000.0 / 336.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let p = 1.0 - ChiSquared::new(335.0).expect("chi-squared dof").cdf(chi2);
    assert!(p > 0.01, "shift uniformity rejected: chi2 {chi2:.1}, p {p:.5}");

    pass(
        8,
        "de-identification",
        format!(
            "0 identifier leaks in {files_scanned} files / {bytes_scanned} bytes, \
             spacing invariant for {multi_study_patients} multi-study patients, \
             shift uniformity p {p:.3} > 0.01"
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Catalog integrity and exact statistics
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_catalog_integrity_and_stats() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut config = ScenarioConfig::realistic(909);
    config.days = 3;
    config.patients_per_day = 6;
    config.stay_seconds_min = 240;
    config.stay_seconds_max = 420;
    config.validate().expect("scenario validates");

    let corpus = generate_corpus(&config, tmp.path()).expect("corpus");
    let pcfg = corpus_pipeline(&corpus);
    let (first, last) = corpus_span(&corpus);
    let summary = run_range(&pcfg, first, last, 2).expect("range");
    assert_eq!(summary.exit_code(), 0);

    let problems =
        check_referential_integrity(&pcfg.catalog_root, &pcfg.identified_root).expect("check");
    assert!(problems.is_empty(), "identified catalog problems: {problems:?}");
    let problems = check_referential_integrity(&pcfg.deid_catalog_root(), &pcfg.deid_root)
        .expect("check deid");
    assert!(problems.is_empty(), "deid catalog problems: {problems:?}");

    // The generator predicts the day's catalog rows from its visit plan;
    // the summary of the published archive must equal the prediction
    // exactly (compressed sizes excluded: nothing can predict those).
    let truths = corpus_truths(&corpus);
    let expected = expected_stats(&truths);
    let actual = summarize(&pcfg.catalog_root, None).expect("summarize");
    assert_eq!(actual.content_projection(), expected.content_projection(), "stats differ");

    for (symbol, rate, unit) in [("II", 500u32, "mV"), ("Pleth", 125, "N/A"), ("Resp", 63, "Ohm")]
    {
        let w = actual
            .per_wave
            .iter()
            .find(|w| w.symbol == symbol)
            .unwrap_or_else(|| panic!("wave {symbol} missing from stats"));
        assert_eq!((w.rate, w.unit.as_str()), (rate, unit), "registry echo for {symbol}");
        assert!(w.studies > 0 && w.total_samples > 0);
    }

    pass(
        9,
        "catalog integrity and stats",
        format!(
            "0 integrity problems in both catalogs, summary equals prediction exactly \
             ({} studies, {} patients, {} samples), registry echo II/Pleth/Resp",
            actual.total_studies, actual.total_patients, actual.total_wave_samples
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. Throughput smoke
// ---------------------------------------------------------------------------

/// One synthetic day sized to 40 studies with three waves each must clear
/// the whole pipeline in under five minutes. A wall-clock figure, printed
/// for the record; generous because hardware varies.
#[test]
fn criterion_10_throughput_smoke() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut config = ScenarioConfig::clean(1010);
    config.patients_per_day = 20;
    config.beds = 6;
    config.transfer_rate = 1.0;
    config.or_shared_stream_fraction = 0.0;
    config.stay_seconds_min = 480;
    config.stay_seconds_max = 600;
    config.validate().expect("scenario validates");

    let corpus = generate_corpus(&config, tmp.path()).expect("corpus");
    let mut pcfg = corpus_pipeline(&corpus);
    pcfg.worker_count = 4;
    let day = corpus.days[0].0;

    let started = Instant::now();
    run_day(&pcfg, day).expect("pipeline run");
    let secs = started.elapsed().as_secs_f64();

    let rows = load_study_map(&pcfg.catalog_root).expect("study map");
    assert_eq!(rows.len(), 40, "20 patients, all transferring once, is 40 studies");
    let stats = summarize(&pcfg.catalog_root, None).expect("stats");
    assert_eq!(stats.per_wave.iter().filter(|w| w.studies > 0).count(), 3);
    assert!(secs < 300.0, "pipeline took {secs:.1}s, budget 300s");

    pass(
        10,
        "throughput smoke",
        format!(
            "40 studies x 3 waves ({} samples) end-to-end in {secs:.1}s < 300s",
            stats.total_wave_samples
        ),
    );
}

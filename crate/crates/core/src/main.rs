//! `wavevault` — command-line front end for the archival pipeline.
//!
//! Exit codes: 0 success, 1 failure, 2 partial (some days in a range
//! succeeded while others failed or were missing). Usage errors print to
//! stderr and exit non-zero.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wavevault::catalog::{query_studies, summarize, QueryFilter, StudyMapRow, STUDY_MAP_HEADER};
use wavevault::extract::verify_bundle;
use wavevault::pipeline::{
    find_audit, run_day, run_range, PipelineConfig, RangeSummary, RunStatus,
};
use wavevault::synthgen::{generate_corpus, ScenarioConfig};
use wavevault::time::{format_timestamp, parse_timestamp, Day, TimeRange};
use wavevault::{Error, Result};

#[derive(Parser)]
#[command(
    name = "wavevault",
    version,
    about = "Archive bedside-monitor extract bundles as de-identified, per-study waveform records"
)]
struct Cli {
    /// Pipeline config file (key=value grammar; see README).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Day to operate on, as YYYY-MM-DD.
    #[arg(long, global = true, value_name = "DAY")]
    day: Option<String>,

    /// Emit machine-readable JSON instead of human-readable text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a scenario file.
    Synth {
        /// Scenario file (key=value grammar; see README).
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        /// Corpus root; bundles land under <OUT>/extracts/.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Verify a day's extract bundle against its manifest.
    Verify,
    /// Run one day end to end (resumes from the last completed phase).
    RunDay,
    /// Run every day in an inclusive range, up to --parallelism at once.
    RunRange {
        #[arg(long, value_name = "DAY")]
        from: String,
        #[arg(long, value_name = "DAY")]
        to: String,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Query the catalog; filters combine conjunctively.
    Query {
        /// Subject MRN (repeatable).
        #[arg(long = "mrn", value_name = "MRN")]
        mrns: Vec<String>,
        /// Bed label (repeatable).
        #[arg(long = "bed", value_name = "BED")]
        beds: Vec<String>,
        /// Clinical unit (repeatable).
        #[arg(long = "unit", value_name = "UNIT")]
        units: Vec<String>,
        /// Wave symbol the study must contain (repeatable).
        #[arg(long = "wave", value_name = "SYMBOL")]
        waves: Vec<String>,
        /// Only studies overlapping [FROM, TO); RFC 3339 timestamps.
        #[arg(long, value_name = "TIMESTAMP")]
        from: Option<String>,
        #[arg(long, value_name = "TIMESTAMP")]
        to: Option<String>,
        /// Write CSV here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Query the de-identified catalog instead of the identified one.
        #[arg(long)]
        deid: bool,
    },
    /// Print archive statistics from the catalog.
    Stats {
        /// Report on the de-identified catalog instead.
        #[arg(long)]
        deid: bool,
    },
    /// Print the linkage audit trail for one study.
    Audit {
        #[arg(long, value_name = "STUDY_ID")]
        study: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid("this command requires --config".into()))?;
    PipelineConfig::load(path)
}

fn required_day(cli: &Cli) -> Result<Day> {
    let text = cli
        .day
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid("this command requires --day YYYY-MM-DD".into()))?;
    Day::parse(text)
}

fn optional_day(cli: &Cli) -> Result<Option<Day>> {
    cli.day.as_ref().map(|t| Day::parse(t)).transpose()
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Synth { scenario, out } => cmd_synth(cli, scenario, out),
        Command::Verify => cmd_verify(cli),
        Command::RunDay => cmd_run_day(cli),
        Command::RunRange { from, to, parallelism } => {
            cmd_run_range(cli, from, to, *parallelism)
        }
        Command::Query { mrns, beds, units, waves, from, to, out, deid } => {
            cmd_query(cli, mrns, beds, units, waves, from, to, out, *deid)
        }
        Command::Stats { deid } => cmd_stats(cli, *deid),
        Command::Audit { study } => cmd_audit(cli, study),
    }
}

fn cmd_synth(cli: &Cli, scenario: &PathBuf, out: &PathBuf) -> Result<ExitCode> {
    let text = std::fs::read_to_string(scenario)?;
    let config = ScenarioConfig::from_key_values(&text)?;
    let layout = generate_corpus(&config, out)?;
    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({
                "root": layout.root,
                "extracts_root": layout.extracts_root,
                "bed_map": layout.bed_map,
                "bed_units": layout.bed_units,
                "days": layout.days.iter().map(|(d, _)| d.to_string()).collect::<Vec<_>>(),
            }))?
        );
    } else {
        println!("generated {} day(s) under {}", layout.days.len(), layout.extracts_root.display());
        for (day, dir) in &layout.days {
            println!("  {day}  {}", dir.display());
        }
        println!("bed map:   {}", layout.bed_map.display());
        println!("bed units: {}", layout.bed_units.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(cli: &Cli) -> Result<ExitCode> {
    let config = load_config(cli)?;
    let day = required_day(cli)?;
    let dir = config.bundle_dir(day);
    match verify_bundle(&dir) {
        Ok(verified) => {
            if cli.json {
                println!(
                    "{}",
                    serde_json::json!({
                        "day": day.to_string(),
                        "bundle": dir,
                        "files_verified": verified.manifest.len(),
                        "ok": true,
                    })
                );
            } else {
                println!("{day}: {} files verified, bundle ok", verified.manifest.len());
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(err) => {
            eprintln!("verification failed for {}: {err}", dir.display());
            Ok(ExitCode::from(1))
        }
    }
}

fn cmd_run_day(cli: &Cli) -> Result<ExitCode> {
    let config = load_config(cli)?;
    let day = required_day(cli)?;
    match run_day(&config, day) {
        Ok(state) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&state)?);
            } else {
                println!(
                    "{day}: {}",
                    state.phase.map(|p| p.to_string()).unwrap_or_else(|| "nothing run".into())
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(err) => {
            eprintln!("run-day {day} failed: {err}");
            Ok(ExitCode::from(1))
        }
    }
}

fn print_summary(cli: &Cli, summary: &RangeSummary) -> Result<()> {
    if cli.json {
        println!("{}", serde_json::to_string_pretty(summary)?);
    } else {
        for outcome in &summary.outcomes {
            let status = match outcome.status {
                RunStatus::Published => "published",
                RunStatus::Failed => "FAILED",
                RunStatus::MissingBundle => "missing bundle",
            };
            let detail = outcome.error.as_deref().unwrap_or("");
            println!("{}  {status}  {detail}", outcome.day);
        }
        println!("{} published, {} not", summary.published(), summary.failed());
    }
    Ok(())
}

fn cmd_run_range(cli: &Cli, from: &str, to: &str, parallelism: usize) -> Result<ExitCode> {
    let config = load_config(cli)?;
    let summary = run_range(&config, Day::parse(from)?, Day::parse(to)?, parallelism)?;
    print_summary(cli, &summary)?;
    Ok(ExitCode::from(summary.exit_code() as u8))
}

fn map_row_record(row: &StudyMapRow) -> Vec<String> {
    vec![
        row.study_id.clone(),
        row.subject_id.clone().unwrap_or_default(),
        row.lifetime_id_source.to_string(),
        row.bed.clone(),
        row.clinical_unit.clone(),
        format_timestamp(row.start),
        format_timestamp(row.end),
        row.storage_path.clone(),
        row.linkage_method.clone(),
    ]
}

#[allow(clippy::too_many_arguments)]
fn cmd_query(
    cli: &Cli,
    mrns: &[String],
    beds: &[String],
    units: &[String],
    waves: &[String],
    from: &Option<String>,
    to: &Option<String>,
    out: &Option<PathBuf>,
    deid: bool,
) -> Result<ExitCode> {
    let config = load_config(cli)?;
    let root = if deid { config.deid_catalog_root() } else { config.catalog_root.clone() };

    let time_range = match (from, to) {
        (None, None) => None,
        (f, t) => {
            let start = f
                .as_ref()
                .map(|s| parse_timestamp(s))
                .transpose()?
                .unwrap_or(chrono::DateTime::<chrono::Utc>::MIN_UTC);
            let end = t
                .as_ref()
                .map(|s| parse_timestamp(s))
                .transpose()?
                .unwrap_or(chrono::DateTime::<chrono::Utc>::MAX_UTC);
            Some(TimeRange::new(start, end))
        }
    };
    let filter = QueryFilter {
        mrns: mrns.to_vec(),
        beds: beds.to_vec(),
        units: units.to_vec(),
        time_range,
        wave_symbols: waves.to_vec(),
    };
    let rows = query_studies(&root, &filter)?;

    if cli.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(ExitCode::SUCCESS);
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(STUDY_MAP_HEADER)?;
    for row in &rows {
        writer.write_record(map_row_record(row))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    match out {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_stats(cli: &Cli, deid: bool) -> Result<ExitCode> {
    let config = load_config(cli)?;
    let root = if deid { config.deid_catalog_root() } else { config.catalog_root.clone() };
    let stats = summarize(&root, None)?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        println!("days:               {}", stats.days);
        println!("studies:            {}", stats.total_studies);
        println!("patients:           {}", stats.total_patients);
        println!("unmatched studies:  {}", stats.unmatched_studies);
        println!("wave samples:       {}", stats.total_wave_samples);
        println!("wave bytes:         {}", stats.total_wave_bytes);
        println!("zip bytes:          {}", stats.total_zip_bytes);
        println!("avg daily studies:  {:.2}", stats.avg_daily_studies);
        println!("avg daily patients: {:.2}", stats.avg_daily_patients);
        println!("avg daily bytes:    {:.1}", stats.avg_daily_wave_bytes);
        println!("per-wave:");
        println!("  {:<10} {:>5} {:<8} {:>8} {:>9} {:>14} {:>14}",
            "symbol", "rate", "unit", "studies", "patients", "samples", "bytes");
        for w in &stats.per_wave {
            if w.studies == 0 {
                continue;
            }
            println!(
                "  {:<10} {:>5} {:<8} {:>8} {:>9} {:>14} {:>14}",
                w.symbol, w.rate, w.unit, w.studies, w.patients, w.total_samples,
                w.total_size_bytes
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_audit(cli: &Cli, study: &str) -> Result<ExitCode> {
    let config = load_config(cli)?;
    let day = optional_day(cli)?;
    let lines = find_audit(&config, study, day)?;
    if lines.is_empty() {
        eprintln!("no audit record for study {study}");
        return Ok(ExitCode::from(1));
    }
    for line in &lines {
        if cli.json {
            println!("{}", serde_json::to_string(line)?);
        } else {
            println!("study:        {}", line.study_id);
            println!("  monitor id: {}", line.monitor_patient_id);
            println!("  bed:        {} (device {})", line.normalized_bed, line.bed_label);
            println!("  window:     {} .. {}", line.start, line.end);
            println!("  method:     {}", line.method);
            println!("  mrn:        {}", line.mrn.as_deref().unwrap_or("(unmatched)"));
            println!("  lifetime id:{}", line.lifetime_id.as_deref().unwrap_or(" (none)"));
            println!("  overlap:    {:.1}s", line.overlap_seconds);
            println!("  stream:     {} .. {}", line.stream_start, line.stream_end);
            println!("  candidates: {}", line.candidates_considered);
        }
    }
    Ok(ExitCode::SUCCESS)
}

//! Post-hoc log analysis: everything here is recomputed from the
//! simulation log alone.

use anyhow::{Context, Result};
use dispatch_core::finetune::{DesignInput, Phase, SimulationRecord};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Default)]
pub struct LogReport {
    pub total_records: usize,
    pub simulations: usize,
    pub cache_hits: usize,
    pub invalid: usize,
    pub corrupt_lines: usize,
    pub by_phase: BTreeMap<&'static str, usize>,
    pub trials: usize,
    /// (seq, deviation) of the least-deviation record.
    pub best_deviation: Option<(u64, f64)>,
    /// Per-trial minimum deviation, indexed by trial number.
    pub trial_best: BTreeMap<usize, f64>,
    pub best_record: Option<SimulationRecord>,
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Ga => "ga",
        Phase::Init => "init",
        Phase::MilpProposed => "milp_proposed",
        Phase::RandomFallback => "random_fallback",
    }
}

/// Parse the log, skipping corrupt lines with a warning count.
pub fn analyze(log_path: &Path) -> Result<(LogReport, Vec<SimulationRecord>)> {
    let text = std::fs::read_to_string(log_path)
        .with_context(|| format!("reading log {}", log_path.display()))?;
    let mut report = LogReport::default();
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        report.total_records += 1;
        let record: SimulationRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(_) => {
                report.corrupt_lines += 1;
                continue;
            }
        };
        if record.cache_hit {
            report.cache_hits += 1;
        } else {
            report.simulations += 1;
            *report.by_phase.entry(phase_name(record.phase)).or_insert(0) += 1;
        }
        if !record.valid {
            report.invalid += 1;
        }
        report.trials = report.trials.max(record.trial);
        if let Some(dev) = record.deviation {
            let entry = report.trial_best.entry(record.trial).or_insert(f64::INFINITY);
            *entry = entry.min(dev);
            if report.best_deviation.map_or(true, |(_, d)| dev < d) {
                report.best_deviation = Some((record.seq, dev));
                report.best_record = Some(record.clone());
            }
        }
        records.push(record);
    }
    Ok((report, records))
}

/// Summary text plus a deviation-trajectory CSV written next to the log.
pub fn report(log_path: &Path) -> Result<(LogReport, String)> {
    let (report, records) = analyze(log_path)?;
    let mut text = String::new();
    writeln!(text, "log: {}", log_path.display())?;
    writeln!(text, "records: {}", report.total_records)?;
    if report.corrupt_lines > 0 {
        writeln!(text, "corrupt_lines_skipped: {}", report.corrupt_lines)?;
    }
    let phases = ["ga", "init", "milp_proposed", "random_fallback"];
    let line = phases
        .iter()
        .map(|p| format!("{p}={}", report.by_phase.get(p).copied().unwrap_or(0)))
        .collect::<Vec<_>>()
        .join(" ");
    writeln!(text, "samples_by_phase: {line} (cache_hits={})", report.cache_hits)?;
    writeln!(text, "total_simulations: {}", report.simulations)?;
    writeln!(text, "invalid_simulations: {}", report.invalid)?;
    if let Some((seq, dev)) = report.best_deviation {
        writeln!(text, "best_fractional_deviation: {dev} (seq {seq})")?;
    }
    for (trial, dev) in &report.trial_best {
        writeln!(text, "trial_{trial}_best_deviation: {dev}")?;
    }
    if let Some(best) = &report.best_record {
        if let DesignInput::Values(v) = &best.input {
            let cells: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(text, "best_input: [{}]", cells.join(", "))?;
        }
        if let Some(outputs) = &best.outputs {
            let cells: Vec<String> = outputs.iter().map(|x| x.to_string()).collect();
            writeln!(text, "best_outputs: [{}]", cells.join(", "))?;
        }
    }

    // deviation trajectory export
    let csv_path = log_path.with_file_name("report_deviation.csv");
    let mut csv = String::from("seq,trial,phase,deviation\n");
    for r in &records {
        if let Some(dev) = r.deviation {
            writeln!(csv, "{},{},{},{dev}", r.seq, r.trial, phase_name(r.phase))?;
        }
    }
    std::fs::write(&csv_path, csv)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    writeln!(text, "deviation_csv: {}", csv_path.display())?;
    Ok((report, text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use dispatch_core::finetune::RECORD_SCHEMA;
    use std::io::Write;

    fn record(seq: u64, trial: usize, phase: Phase, deviation: Option<f64>) -> String {
        let r = SimulationRecord {
            schema: RECORD_SCHEMA,
            seq,
            phase,
            trial,
            generation: None,
            input: DesignInput::Values(vec![1.0, 2.0]),
            outputs: Some(vec![0.5]),
            objectives: None,
            valid: true,
            cache_hit: false,
            predicted: None,
            deviation,
        };
        serde_json::to_string(&r).unwrap()
    }

    #[test]
    fn empty_log_reports_zero_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "").unwrap();
        let (report, text) = report(&path).unwrap();
        assert_eq!(report.total_records, 0);
        assert!(text.contains("total_simulations: 0"));
    }

    #[test]
    fn single_record_summary_matches_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, record(0, 1, Phase::Init, Some(0.25)) + "\n").unwrap();
        let (report, _) = report(&path).unwrap();
        assert_eq!(report.simulations, 1);
        assert_eq!(report.best_deviation, Some((0, 0.25)));
    }

    #[test]
    fn corrupt_lines_are_counted_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "{}", record(0, 1, Phase::Init, Some(0.5))).unwrap();
        writeln!(f, "this is not json").unwrap();
        writeln!(f, "{}", record(1, 1, Phase::MilpProposed, Some(0.1))).unwrap();
        drop(f);
        let (report, text) = report(&path).unwrap();
        assert_eq!(report.corrupt_lines, 1);
        assert_eq!(report.simulations, 2);
        assert_eq!(report.best_deviation, Some((1, 0.1)));
        assert!(text.contains("corrupt_lines_skipped: 1"));
        // deviation CSV sits next to the log
        let csv =
            std::fs::read_to_string(dir.path().join("report_deviation.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3); // header + 2 rows
    }

    #[test]
    fn report_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, record(0, 1, Phase::Init, Some(0.5)) + "\n").unwrap();
        let (_, t1) = report(&path).unwrap();
        let (_, t2) = report(&path).unwrap();
        assert_eq!(t1, t2);
    }
}

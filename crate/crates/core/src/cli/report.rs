//! The report command: rebuild summaries from trace files alone and emit
//! the comparison table plus per-frame deviation data for plotting.

use std::path::{Path, PathBuf};

use crate::cli::run::{level_label, parse_level_label, ONE_STEP_LEVEL};
use crate::error::{Error, Result};
use crate::metrics::{summarize, MethodLabel, MethodSummary, TraceEntry};
use crate::rate_control::SequenceTrace;

pub struct ReportOutput {
    pub summary_file: PathBuf,
    pub table_file: PathBuf,
    pub per_frame_file: PathBuf,
    pub summaries: Vec<MethodSummary>,
}

/// Parse `trace__{sequence}__{method}__{target}__s{seed}.csv`.
pub fn parse_trace_filename(name: &str) -> Result<(String, MethodLabel, f64, u64)> {
    let stem = name
        .strip_prefix("trace__")
        .and_then(|s| s.strip_suffix(".csv"))
        .ok_or_else(|| Error::Parse(format!("not a trace file: `{name}`")))?;
    let parts: Vec<&str> = stem.split("__").collect();
    if parts.len() != 4 {
        return Err(Error::Parse(format!("bad trace filename `{name}`")));
    }
    let method = MethodLabel::parse(parts[1])?;
    let level = parse_level_label(parts[2])?;
    let seed: u64 = parts[3]
        .strip_prefix('s')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad seed in `{name}`")))?;
    Ok((parts[0].to_string(), method, level, seed))
}

/// Load every trace CSV under `trace_dir` into labeled entries, sorted by
/// filename for stable output.
pub fn load_traces(trace_dir: &Path) -> Result<Vec<TraceEntry>> {
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(trace_dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("trace__") && name.ends_with(".csv") {
            names.push(name);
        }
    }
    if names.is_empty() {
        return Err(Error::Domain(format!(
            "no trace files found in {}",
            trace_dir.display()
        )));
    }
    names.sort();
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let (sequence, method, target_level, seed) = parse_trace_filename(&name)?;
        let text = std::fs::read_to_string(trace_dir.join(&name))?;
        entries.push(TraceEntry {
            sequence,
            method,
            target_level,
            seed,
            trace: SequenceTrace::from_csv(&text)?,
        });
    }
    Ok(entries)
}

/// Summary CSV: one row per (sequence, method, target). The delta-rate
/// column repeats the per-(sequence, method) value on each target row and is
/// empty when no anchor curve exists.
pub fn summary_csv(summaries: &[MethodSummary]) -> String {
    let mut out = String::from("sequence,method,target,mean_deviation_pct,bd_rate_pct\n");
    for method in summaries {
        for seq in &method.per_sequence {
            for (target, dev) in &seq.per_target_deviation {
                let bd = seq
                    .bd_rate_pct
                    .map(|b| format!("{b:.6}"))
                    .unwrap_or_default();
                let label = target
                    .parse::<f64>()
                    .map(level_label)
                    .unwrap_or_else(|_| target.clone());
                out.push_str(&format!(
                    "{},{},{},{:.6},{}\n",
                    seq.sequence,
                    method.method.as_str(),
                    label,
                    dev,
                    bd
                ));
            }
        }
    }
    out
}

/// Aligned text table, methods by sequences, `deviation / bd-rate` cells.
pub fn render_table(summaries: &[MethodSummary]) -> String {
    let mut sequences: Vec<String> = summaries
        .iter()
        .flat_map(|m| m.per_sequence.iter().map(|s| s.sequence.clone()))
        .collect();
    sequences.sort();
    sequences.dedup();

    let cell = |dev: f64, bd: Option<f64>| -> String {
        match bd {
            Some(b) => format!("{dev:.2} / {b:+.1}"),
            None => format!("{dev:.2} / --"),
        }
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["method".to_string()];
    header.extend(sequences.iter().cloned());
    header.push("average".to_string());
    rows.push(header);
    for m in summaries {
        let mut row = vec![m.method.as_str().to_string()];
        for seq in &sequences {
            match m.per_sequence.iter().find(|s| &s.sequence == seq) {
                Some(s) => row.push(cell(s.mean_deviation_pct, s.bd_rate_pct)),
                None => row.push("--".to_string()),
            }
        }
        row.push(cell(m.mean_deviation_pct, m.bd_rate_pct));
        rows.push(row);
    }

    let ncols = rows[0].len();
    let widths: Vec<usize> = (0..ncols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    out.push_str("bitrate deviation (%) / bd-rate vs constant-quality anchor (%)\n\n");
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| format!("{v:<width$}", width = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Per-frame deviation CSV for plotting: every frame of every trace.
pub fn per_frame_csv(entries: &[TraceEntry]) -> String {
    let mut out = String::from("sequence,method,target,seed,t,deviation_pct\n");
    for e in entries {
        if e.method == MethodLabel::Anchor {
            continue;
        }
        let label = if e.target_level == ONE_STEP_LEVEL {
            "onestep".to_string()
        } else {
            level_label(e.target_level)
        };
        for f in &e.trace.frames {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6}\n",
                e.sequence,
                e.method.as_str(),
                label,
                e.seed,
                f.t,
                f.deviation_pct
            ));
        }
    }
    out
}

/// Rebuild every report artifact from the trace directory alone.
pub fn cmd_report(trace_dir: &Path, out_dir: &Path) -> Result<ReportOutput> {
    let entries = load_traces(trace_dir)?;
    let summaries = summarize(&entries)?;
    std::fs::create_dir_all(out_dir)?;

    let summary_file = out_dir.join("report_summary.csv");
    std::fs::write(&summary_file, summary_csv(&summaries))?;
    let table_file = out_dir.join("table.txt");
    std::fs::write(&table_file, render_table(&summaries))?;
    let per_frame_file = out_dir.join("per_frame_deviation.csv");
    std::fs::write(&per_frame_file, per_frame_csv(&entries))?;

    Ok(ReportOutput {
        summary_file,
        table_file,
        per_frame_file,
        summaries,
    })
}

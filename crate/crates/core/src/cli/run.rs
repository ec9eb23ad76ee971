//! The run command: execute every (sequence, method, target, seed) cell of
//! an experiment, write per-cell trace CSVs, and emit summary files.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cli::config::{ExperimentConfig, PredictorSpec, Protocol};
use crate::cli::report::{render_table, summary_csv};
use crate::codec_sim::{multi_pass_probe, SequenceProfile};
use crate::error::{Error, Result};
use crate::estimation::{initial_params, EstimatorVariant};
use crate::metrics::{summarize, MethodLabel, MethodSummary, TraceEntry};
use crate::predictor::{
    OraclePredictor, QualityGrid, RatePredictor, RegressorPredictor, SyntheticNoisyPredictor,
};
use crate::rate_control::{
    run_closed_loop, run_constant_quality, run_one_step_eval, FrameRecord, RateControlConfig,
    SequenceTrace,
};
use crate::rq_model::{fit_least_squares, ModelKind, QualityLevel, RQParams};

/// Sentinel target level for one-step cells, which have no anchor level.
pub const ONE_STEP_LEVEL: f64 = -1.0;

/// Everything a run produced, before and after writing to disk.
pub struct ExperimentResult {
    pub entries: Vec<TraceEntry>,
    pub summaries: Vec<MethodSummary>,
    pub initial: RQParams,
}

pub struct RunOutput {
    pub trace_files: Vec<PathBuf>,
    pub summary_file: PathBuf,
    pub table_file: PathBuf,
    pub result: ExperimentResult,
}

/// FNV-1a over the label parts; the base of all per-cell seed derivation.
fn fnv1a(parts: &[&str]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for p in parts {
        for b in p.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn cell_rng(parts: &[&str], seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fnv1a(parts) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Compact label for a target level: `q25`, `q25.5`, or `onestep`.
pub fn level_label(level: f64) -> String {
    if level == ONE_STEP_LEVEL {
        "onestep".to_string()
    } else if level.fract() == 0.0 {
        format!("q{}", level as i64)
    } else {
        format!("q{level}")
    }
}

pub fn parse_level_label(label: &str) -> Result<f64> {
    if label == "onestep" {
        return Ok(ONE_STEP_LEVEL);
    }
    label
        .strip_prefix('q')
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| Error::Parse(format!("bad target label `{label}`")))
}

fn build_predictor(spec: &PredictorSpec) -> Result<Box<dyn RatePredictor + Sync>> {
    Ok(match spec {
        PredictorSpec::Oracle => Box::new(OraclePredictor),
        PredictorSpec::Synthetic { sigmas } => Box::new(SyntheticNoisyPredictor::new(*sigmas)?),
        PredictorSpec::Calibrated { mean_abs_dev } => {
            Box::new(SyntheticNoisyPredictor::calibrated(*mean_abs_dev)?)
        }
        PredictorSpec::Regressor { path } => {
            let text = std::fs::read_to_string(path)?;
            Box::new(RegressorPredictor::from_json(&text)?)
        }
    })
}

fn rc_config(
    cfg: &ExperimentConfig,
    variant: EstimatorVariant,
    initial: RQParams,
) -> Result<RateControlConfig> {
    let rc = &cfg.rate_control;
    let out = RateControlConfig {
        sliding_window: rc.sliding_window,
        minigop_len: rc.minigop_len,
        weights: rc.weights.clone(),
        gop_length: rc.gop_length,
        q_num: rc.q_num,
        variant,
        grid: QualityGrid::new(rc.grid_levels, rc.q_num)?,
        predictor_weight: rc.predictor_weight,
        initial,
    };
    out.validate()?;
    Ok(out)
}

/// Shared initial parameters: probe each sequence's first frame at the grid
/// levels, fit, and average across sequences.
fn calibrate_initial(sequences: &[SequenceProfile], grid: &QualityGrid) -> Result<RQParams> {
    let mut pseudo_traces = Vec::new();
    for seq in sequences {
        let mut rng = cell_rng(&["calibrate", &seq.name], 0);
        let pts = multi_pass_probe(&seq.frames[0], &grid.levels(), &mut rng);
        let fit = fit_least_squares(&pts, ModelKind::Logarithmic)?;
        pseudo_traces.push(SequenceTrace::from_frames(vec![FrameRecord {
            t: 0,
            r_target: 1.0,
            q_pred: 0.0,
            r_enc: 1.0,
            distortion: 1.0,
            psnr_db: 0.0,
            alpha: fit.alpha,
            beta: fit.beta,
            deviation_pct: 0.0,
            fell_back: false,
        }]));
    }
    initial_params(&pseudo_traces)
}

/// One work unit of the run.
struct Cell {
    sequence_idx: usize,
    method: MethodLabel,
    target_level: f64,
    r_s: f64,
    seed: u64,
}

/// Execute the whole experiment in memory. Cells are independent and may be
/// computed in parallel; the output order is fixed regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let sequences = cfg.resolve_sequences(cfg.frames)?;
    let grid = QualityGrid::new(cfg.rate_control.grid_levels, cfg.rate_control.q_num)?;
    let predictor = build_predictor(&cfg.predictor)?;
    let initial = calibrate_initial(&sequences, &grid)?;

    let mut entries: Vec<TraceEntry> = Vec::new();
    let mut cells: Vec<Cell> = Vec::new();

    match cfg.protocol {
        Protocol::ClosedLoop => {
            // Anchor pass: constant-quality encodes define both the target
            // bitrates and the delta-rate reference curves.
            let mut r_s_table = vec![vec![0.0; cfg.anchor_levels.len()]; sequences.len()];
            for (si, seq) in sequences.iter().enumerate() {
                for (li, &level) in cfg.anchor_levels.iter().enumerate() {
                    let mut rng = cell_rng(&["anchor", &seq.name, &level_label(level)], 0);
                    let q = QualityLevel::clamped(level, cfg.rate_control.q_num);
                    let trace = run_constant_quality(seq, q, &mut rng)?;
                    r_s_table[si][li] = trace.total_bits / trace.frames.len() as f64;
                    entries.push(TraceEntry {
                        sequence: seq.name.clone(),
                        method: MethodLabel::Anchor,
                        target_level: level,
                        seed: 0,
                        trace,
                    });
                }
            }
            for (si, _) in sequences.iter().enumerate() {
                for &method in &cfg.methods {
                    for (li, &level) in cfg.anchor_levels.iter().enumerate() {
                        for &seed in &cfg.seeds {
                            cells.push(Cell {
                                sequence_idx: si,
                                method: MethodLabel::Variant(method),
                                target_level: level,
                                r_s: r_s_table[si][li],
                                seed,
                            });
                        }
                    }
                }
            }
        }
        Protocol::OneStep { .. } => {
            for (si, _) in sequences.iter().enumerate() {
                for &method in &cfg.methods {
                    for &seed in &cfg.seeds {
                        cells.push(Cell {
                            sequence_idx: si,
                            method: MethodLabel::Variant(method),
                            target_level: ONE_STEP_LEVEL,
                            r_s: 0.0,
                            seed,
                        });
                    }
                }
            }
        }
    }

    let run_cell = |cell: &Cell| -> Result<TraceEntry> {
        let seq = &sequences[cell.sequence_idx];
        let MethodLabel::Variant(variant) = cell.method else {
            unreachable!("anchor cells are run inline");
        };
        let rc = rc_config(cfg, variant, initial)?;
        let mut rng = cell_rng(
            &[
                &seq.name,
                cell.method.as_str(),
                &level_label(cell.target_level),
            ],
            cell.seed,
        );
        let trace = match cfg.protocol {
            Protocol::ClosedLoop => {
                run_closed_loop(seq, cell.r_s, &rc, predictor.as_ref(), &mut rng)?
            }
            Protocol::OneStep { q_lo, q_hi } => {
                run_one_step_eval(seq, &rc, predictor.as_ref(), &mut rng, (q_lo, q_hi))?
            }
        };
        Ok(TraceEntry {
            sequence: seq.name.clone(),
            method: cell.method,
            target_level: cell.target_level,
            seed: cell.seed,
            trace,
        })
    };

    let jobs = jobs.max(1);
    if jobs == 1 || cells.len() < 2 {
        for cell in &cells {
            entries.push(run_cell(cell)?);
        }
    } else {
        let results: Mutex<Vec<Option<Result<TraceEntry>>>> =
            Mutex::new((0..cells.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(cells.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= cells.len() {
                        break;
                    }
                    let out = run_cell(&cells[i]);
                    results.lock().unwrap()[i] = Some(out);
                });
            }
        });
        for slot in results.into_inner().unwrap() {
            entries.push(slot.expect("all cells executed")?);
        }
    }

    let summaries = summarize(&entries)?;
    Ok(ExperimentResult {
        entries,
        summaries,
        initial,
    })
}

pub fn trace_filename(entry: &TraceEntry) -> String {
    format!(
        "trace__{}__{}__{}__s{}.csv",
        entry.sequence,
        entry.method.as_str(),
        level_label(entry.target_level),
        entry.seed
    )
}

/// Run and write: one trace CSV per cell, a summary CSV, and an aligned
/// text table.
///
/// Summaries are computed from the CSV-serialized traces, so every reported
/// number is recomputable from the written files alone and the report
/// command reproduces the summary byte for byte.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<RunOutput> {
    let mut result = run_experiment(cfg, jobs)?;
    let traces_dir = out_dir.join("traces");
    std::fs::create_dir_all(&traces_dir)?;

    let mut trace_files = Vec::with_capacity(result.entries.len());
    let mut written = Vec::with_capacity(result.entries.len());
    for entry in &result.entries {
        let path = traces_dir.join(trace_filename(entry));
        let csv = entry.trace.to_csv();
        std::fs::write(&path, &csv)?;
        trace_files.push(path);
        written.push(TraceEntry {
            trace: crate::rate_control::SequenceTrace::from_csv(&csv)?,
            ..entry.clone()
        });
    }
    written.sort_by_key(trace_filename);
    result.summaries = summarize(&written)?;

    let summary_file = out_dir.join("summary.csv");
    std::fs::write(&summary_file, summary_csv(&result.summaries))?;
    let table_file = out_dir.join("table.txt");
    std::fs::write(&table_file, render_table(&result.summaries))?;

    Ok(RunOutput {
        trace_files,
        summary_file,
        table_file,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::SequenceSource;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default_benchmark();
        cfg.sequences = vec![
            SequenceSource::Generated {
                name: "a".into(),
                seed: 11,
                drift: 0.05,
                alpha: 6.0,
                beta: -20.0,
                noise_sigma: 0.03,
                curvature: 0.0,
            },
            SequenceSource::Generated {
                name: "b".into(),
                seed: 12,
                drift: 0.05,
                alpha: 5.0,
                beta: -16.0,
                noise_sigma: 0.03,
                curvature: 0.0,
            },
        ];
        cfg.methods = vec![EstimatorVariant::Fusion, EstimatorVariant::AdaptiveLms];
        cfg.seeds = vec![1, 2];
        cfg.frames = 24;
        cfg
    }

    #[test]
    fn run_produces_expected_cells() {
        let cfg = tiny_config();
        let result = run_experiment(&cfg, 1).unwrap();
        // 2 sequences x 4 anchor levels + 2 sequences x 2 methods x 4 levels x 2 seeds.
        assert_eq!(result.entries.len(), 8 + 32);
        assert_eq!(result.summaries.len(), 2);
    }

    #[test]
    fn parallel_run_matches_serial() {
        let cfg = tiny_config();
        let serial = run_experiment(&cfg, 1).unwrap();
        let parallel = run_experiment(&cfg, 4).unwrap();
        assert_eq!(serial.entries, parallel.entries);
    }

    #[test]
    fn level_labels_round_trip() {
        for level in [10.0, 25.0, 40.0, 55.0, 12.5, ONE_STEP_LEVEL] {
            let label = level_label(level);
            assert_eq!(parse_level_label(&label).unwrap(), level);
        }
        assert!(parse_level_label("bogus").is_err());
    }

    #[test]
    fn one_step_protocol_runs() {
        let mut cfg = tiny_config();
        cfg.protocol = Protocol::OneStep {
            q_lo: 10.0,
            q_hi: 30.0,
        };
        let result = run_experiment(&cfg, 1).unwrap();
        // No anchors: 2 sequences x 2 methods x 2 seeds.
        assert_eq!(result.entries.len(), 8);
        for e in &result.entries {
            assert_eq!(e.target_level, ONE_STEP_LEVEL);
        }
    }
}

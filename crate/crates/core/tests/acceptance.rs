//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! The comparison-table criteria run the default benchmark once (shared via
//! `OnceLock`) and check orderings on the aggregate.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rqsim::cli::config::ExperimentConfig;
use rqsim::cli::run::run_experiment;
use rqsim::codec_sim::{generate_sequence, multi_pass_probe, FrameProfile};
use rqsim::estimation::{lms_step, EstimatorVariant, LmsState};
use rqsim::metrics::{
    bd_rate, predictor_accuracy_pct, rate_deviation_pct, MethodLabel, RdCurvePoint, TraceEntry,
};
use rqsim::predictor::OraclePredictor;
use rqsim::rate_control::{
    allocate_frame, allocate_minigop, run_closed_loop, BudgetState, RateControlConfig,
};
use rqsim::rq_model::{fit_least_squares, r_squared, ModelKind, QualityLevel, RQPoint, Rate};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn q(v: f64) -> QualityLevel {
    QualityLevel::new(v).unwrap()
}

struct Benchmark {
    entries: Vec<TraceEntry>,
    wall: Duration,
}

fn benchmark() -> &'static Benchmark {
    static CELL: OnceLock<Benchmark> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = ExperimentConfig::default_benchmark();
        let start = Instant::now();
        let result = run_experiment(&cfg, 4).expect("benchmark runs");
        Benchmark {
            entries: result.entries,
            wall: start.elapsed(),
        }
    })
}

/// Aggregate mean deviation for a method over every (sequence, target, seed).
fn aggregate_deviation(entries: &[TraceEntry], variant: EstimatorVariant) -> f64 {
    let cells: Vec<&TraceEntry> = entries
        .iter()
        .filter(|e| e.method == MethodLabel::Variant(variant))
        .collect();
    assert!(!cells.is_empty());
    cells
        .iter()
        .map(|e| e.trace.mean_deviation_pct)
        .sum::<f64>()
        / cells.len() as f64
}

/// Aggregate mean deviation restricted to a set of target levels.
fn deviation_at_targets(entries: &[TraceEntry], variant: EstimatorVariant, levels: &[f64]) -> f64 {
    let cells: Vec<&TraceEntry> = entries
        .iter()
        .filter(|e| e.method == MethodLabel::Variant(variant) && levels.contains(&e.target_level))
        .collect();
    assert!(!cells.is_empty());
    cells
        .iter()
        .map(|e| e.trace.mean_deviation_pct)
        .sum::<f64>()
        / cells.len() as f64
}

#[test]
fn criterion_1_model_family_ordering() {
    let start = Instant::now();
    let bases: [(f64, f64); 6] = [
        (4.5, -14.0),
        (5.2, -18.0),
        (6.0, -20.0),
        (6.6, -23.0),
        (7.2, -24.0),
        (8.0, -28.0),
    ];
    let levels: Vec<QualityLevel> = (1..=12).map(|i| q(5.0 * i as f64)).collect();
    for seed in 0..20u64 {
        let mut means = [0.0f64; 3]; // linear, exponential, logarithmic
        for (si, &(alpha, beta)) in bases.iter().enumerate() {
            let profile = FrameProfile::log_law(alpha, beta, 0.05);
            let mut r = rng(1000 + seed * 31 + si as u64);
            let points = multi_pass_probe(&profile, &levels, &mut r);
            for (ki, kind) in [
                ModelKind::Linear,
                ModelKind::Exponential,
                ModelKind::Logarithmic,
            ]
            .iter()
            .enumerate()
            {
                let fit = fit_least_squares(&points, *kind).unwrap();
                means[ki] += r_squared(&points, &fit).unwrap() / bases.len() as f64;
            }
        }
        let (lin, exp, log) = (means[0], means[1], means[2]);
        assert!(
            log > lin && lin > exp,
            "seed {seed}: R^2 ordering violated: log={log:.4} lin={lin:.4} exp={exp:.4}"
        );
    }
    let wall = start.elapsed();
    assert!(wall < Duration::from_secs(5), "took {wall:?}");
    println!("acceptance 1 (model-family ordering, 20 seeds x 6 sequences, {wall:?}): PASS");
}

#[test]
fn criterion_2_fit_recovery() {
    let mut r = rng(42);
    use rand::Rng;
    let mut tested = 0;
    while tested < 1000 {
        let alpha = r.gen_range(1.0..10.0);
        let beta = r.gen_range(-30.0..10.0);
        let n = r.gen_range(4..9usize);
        let r0 = r.gen_range(10.0..100.0f64);
        let step = r.gen_range(1.5..4.0f64);
        let rates: Vec<f64> = (0..n).map(|k| r0 * step.powi(k as i32)).collect();
        // Redraw instances whose law leaves the valid quality range.
        if rates.iter().any(|rate| alpha * rate.ln() + beta < 0.0) {
            continue;
        }
        tested += 1;
        let points: Vec<RQPoint> = rates
            .iter()
            .map(|&rate| RQPoint {
                rate: Rate::from_bits(rate).unwrap(),
                quality: q(alpha * rate.ln() + beta),
            })
            .collect();
        let fit = fit_least_squares(&points, ModelKind::Logarithmic).unwrap();
        assert!(
            (fit.alpha - alpha).abs() < 1e-9,
            "instance {tested}: alpha {} vs {}",
            fit.alpha,
            alpha
        );
        assert!(
            (fit.beta - beta).abs() < 1e-9,
            "instance {tested}: beta {} vs {}",
            fit.beta,
            beta
        );
    }
    println!("acceptance 2 (noiseless fit recovery, 1000 instances, |err| < 1e-9): PASS");
}

#[test]
fn criterion_3_lms_fixed_point_and_convergence() {
    // Exact fixed point: the encoder returns exactly the target rate.
    let state = LmsState::new(3.1, -4.2);
    let target = Rate::from_bits(777.0).unwrap();
    let (next, _) = lms_step(&state, target, 64, |ql| rqsim::codec_sim::EncodeResult {
        rate: target,
        distortion: 10.0,
        quality_used: ql,
        psnr_db: 30.0,
    });
    assert_eq!(next, state, "zero-error step must not update the state");

    // Convergence from a mis-initialized model on a stationary noiseless
    // frame with true law Q = 2 ln R.
    let truth = |ql: QualityLevel| rqsim::codec_sim::EncodeResult {
        rate: Rate::from_bits((ql.value() / 2.0).exp()).unwrap(),
        distortion: 10.0,
        quality_used: ql,
        psnr_db: 30.0,
    };
    let mut lms = LmsState::new(1.0, 0.0);
    let targets: Vec<f64> = (0..8).map(|i| (2.0 + 2.0 * i as f64 / 7.0).exp()).collect();
    let mut reached_at = None;
    for step in 0..200 {
        let t = Rate::from_bits(targets[step % targets.len()]).unwrap();
        let q_real = QualityLevel::clamped(lms.alpha * t.ln() + lms.beta, 64);
        let (next, enc) = lms_step(&lms, t, 64, truth);
        let q_est = lms.alpha * enc.rate.ln() + lms.beta;
        if (q_real.value() - q_est).abs() < 0.1 && reached_at.is_none() {
            reached_at = Some(step);
        }
        lms = next;
    }
    let reached = reached_at.expect("LMS must reach |Q_real - Q_est| < 0.1 within 200 steps");
    println!("acceptance 3 (LMS fixed point exact; converged at step {reached} < 200): PASS");
}

#[test]
fn criterion_4_allocation_identities() {
    let cfg = RateControlConfig::new(EstimatorVariant::Fusion);

    // On budget: exactly N_m * R_s.
    let state = BudgetState {
        n_coded: 17,
        consumed_bits: 17.0 * 2500.0,
        ..Default::default()
    };
    assert_eq!(allocate_minigop(2500.0, &state, &cfg), 4.0 * 2500.0);

    // Worked example: R_s=1000, N_coded=8, consumed=9000, SW=40, N_m=4.
    let state = BudgetState {
        n_coded: 8,
        consumed_bits: 9000.0,
        ..Default::default()
    };
    let got = allocate_minigop(1000.0, &state, &cfg);
    assert!((got - 3900.0).abs() < 1e-9, "worked example: {got}");

    // Last miniGOP frame absorbs the remaining budget exactly.
    let last = BudgetState {
        minigop_pos: 3,
        minigop_consumed: 3100.0,
        ..Default::default()
    };
    assert_eq!(allocate_frame(5800.0, &last, &cfg), 5800.0 - 3100.0);

    // Weight-scale invariance, exact.
    let mut scaled = cfg.clone();
    scaled.weights = cfg.weights.iter().map(|w| w * 13.7).collect();
    for pos in 0..4 {
        let st = BudgetState {
            minigop_pos: pos,
            minigop_consumed: 321.0 * pos as f64,
            ..Default::default()
        };
        let a = allocate_frame(4444.0, &st, &cfg);
        let b = allocate_frame(4444.0, &st, &scaled);
        assert!(
            (a - b).abs() < 1e-9 * a.abs().max(1.0),
            "pos {pos}: {a} vs {b}"
        );
    }
    println!("acceptance 4 (allocation identities exact, worked example 3900): PASS");
}

#[test]
fn criterion_5_closed_loop_conservation() {
    let base = FrameProfile::log_law(6.0, -20.0, 0.0);
    let seq = generate_sequence(7, 96, 0.0, &base);
    let mut cfg = RateControlConfig::new(EstimatorVariant::Fusion);
    // A deliberately wrong starting model: the oracle prior must carry the
    // loop on its own.
    cfg.initial = rqsim::rq_model::RQParams::logarithmic(4.4, -12.0);
    for level in [10.0, 25.0, 40.0, 55.0] {
        // sigma = 0: the anchor rate at this level is exact.
        let r_s = base.rate_for_quality(level);
        let trace = run_closed_loop(&seq, r_s, &cfg, &OraclePredictor, &mut rng(5)).unwrap();
        let want = 96.0 * r_s;
        let rel = (trace.total_bits - want).abs() / want;
        assert!(
            rel < 0.005,
            "level {level}: consumed {} vs {want} ({:.4}%)",
            trace.total_bits,
            rel * 100.0
        );
    }
    println!("acceptance 5 (closed-loop conservation within 0.5% at 4 targets): PASS");
}

#[test]
fn criterion_6_method_ordering() {
    let bench = benchmark();
    assert!(
        bench.wall < Duration::from_secs(60),
        "benchmark took {:?}",
        bench.wall
    );
    let fusion = aggregate_deviation(&bench.entries, EstimatorVariant::Fusion);
    let lms = aggregate_deviation(&bench.entries, EstimatorVariant::AdaptiveLms);
    let predictor_only = aggregate_deviation(&bench.entries, EstimatorVariant::PredictorOnly);
    let history_only = aggregate_deviation(&bench.entries, EstimatorVariant::HistoryOnly);
    let four_pass = aggregate_deviation(&bench.entries, EstimatorVariant::FourPassOracle);

    assert!(fusion < lms, "fusion {fusion:.3} !< adaptive_lms {lms:.3}");
    assert!(
        fusion < predictor_only,
        "fusion {fusion:.3} !< predictor_only {predictor_only:.3}"
    );
    assert!(
        fusion <= history_only,
        "fusion {fusion:.3} !<= history_only {history_only:.3}"
    );
    assert!(
        four_pass <= fusion,
        "four_pass {four_pass:.3} !<= fusion {fusion:.3}"
    );
    println!(
        "acceptance 6 (method ordering, {:?}): PASS — four_pass {four_pass:.2} <= fusion {fusion:.2} < lms {lms:.2}, predictor_only {predictor_only:.2}; fusion <= history_only {history_only:.2}",
        bench.wall
    );
}

#[test]
fn criterion_7_predictor_degradation_robustness() {
    let bench = benchmark();
    let low = [10.0, 25.0];
    let high = [40.0, 55.0];
    let po_low = deviation_at_targets(&bench.entries, EstimatorVariant::PredictorOnly, &low);
    let po_high = deviation_at_targets(&bench.entries, EstimatorVariant::PredictorOnly, &high);
    let fu_low = deviation_at_targets(&bench.entries, EstimatorVariant::Fusion, &low);
    let fu_high = deviation_at_targets(&bench.entries, EstimatorVariant::Fusion, &high);

    let po_gap = po_high - po_low;
    let fu_gap = fu_high - fu_low;
    assert!(
        po_gap > 0.0,
        "predictor_only high-target deviation must exceed low-target: {po_high:.3} vs {po_low:.3}"
    );
    assert!(
        fu_gap < po_gap,
        "fusion gap {fu_gap:.3} must be strictly smaller than predictor_only gap {po_gap:.3}"
    );
    println!(
        "acceptance 7 (high-rate degradation: predictor_only gap {po_gap:.2}pp > fusion gap {fu_gap:.2}pp): PASS"
    );
}

#[test]
fn criterion_8_metric_identities() {
    // Rate-deviation worked examples to 1e-12.
    assert!((rate_deviation_pct(1000.0, 900.0).unwrap() - 10.0).abs() < 1e-12);
    assert!((rate_deviation_pct(1000.0, 1100.0).unwrap() - 10.0).abs() < 1e-12);
    assert!(rate_deviation_pct(1000.0, 1000.0).unwrap().abs() < 1e-12);

    // Predictor-accuracy worked example to 1e-12.
    let acc = predictor_accuracy_pct(&[(120.0, 100.0), (90.0, 100.0)]).unwrap();
    assert!((acc - 15.0).abs() < 1e-12);

    // Delta-rate identities.
    let curve: Vec<RdCurvePoint> = [
        (1000.0, 30.0),
        (2500.0, 33.5),
        (6000.0, 36.8),
        (14000.0, 39.6),
    ]
    .iter()
    .map(|&(rate, psnr_db)| RdCurvePoint { rate, psnr_db })
    .collect();
    assert!(bd_rate(&curve, &curve).unwrap().abs() < 1e-9);
    let shifted: Vec<RdCurvePoint> = curve
        .iter()
        .map(|p| RdCurvePoint {
            rate: p.rate * 1.10,
            psnr_db: p.psnr_db,
        })
        .collect();
    let bd = bd_rate(&curve, &shifted).unwrap();
    assert!((bd - 10.0).abs() < 1e-6, "uniform +10% shift: {bd}");
    println!("acceptance 8 (metric identities: deviation/accuracy to 1e-12, bd identity 1e-9, shift 1e-6): PASS");
}

#[test]
fn criterion_9_run_determinism() {
    let bin = env!("CARGO_BIN_EXE_rqsim");
    let root = std::env::temp_dir().join("rqsim-acceptance-determinism");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();

    let config = r#"{
        "schema_version": 1,
        "sequences": [
            {"kind": "generated", "name": "detA", "seed": 3, "drift": 0.02},
            {"kind": "generated", "name": "detB", "seed": 4, "drift": 0.02, "alpha": 5.6, "beta": -18.5}
        ],
        "methods": ["fusion", "adaptive_lms", "four_pass_oracle"],
        "anchor_levels": [10.0, 25.0, 40.0, 55.0],
        "seeds": [1, 2],
        "frames": 24
    }"#;
    let cfg_path = root.join("config.json");
    std::fs::write(&cfg_path, config).unwrap();

    let run = |out: &std::path::Path, jobs: &str| {
        let status = std::process::Command::new(bin)
            .args(["run", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(out)
            .args(["--jobs", jobs])
            .status()
            .expect("spawn rqsim");
        assert!(status.success(), "rqsim run failed");
    };
    let out_a = root.join("a");
    let out_b = root.join("b");
    run(&out_a, "1");
    run(&out_b, "3");

    let collect = |dir: &std::path::Path| -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in std::fs::read_dir(&d).unwrap() {
                let entry = entry.unwrap();
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path
                        .strip_prefix(dir)
                        .unwrap()
                        .to_string_lossy()
                        .into_owned();
                    files.push((rel, std::fs::read(&path).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    let a = collect(&out_a);
    let b = collect(&out_b);
    assert_eq!(a.len(), b.len(), "file counts differ");
    assert!(
        a.len() > 8,
        "expected traces plus summaries, got {}",
        a.len()
    );
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "file {name_a} differs between runs");
    }
    let _ = std::fs::remove_dir_all(&root);
    println!(
        "acceptance 9 (byte-identical outputs across reruns and job counts, {} files): PASS",
        a.len()
    );
}

//! Closed-loop rate control: sliding-window sequence budgeting, miniGOP and
//! per-frame bit allocation, quality decision through the current R-Q model,
//! encode, observe, update — plus the 1-step evaluation protocol.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec_sim::{encode_frame, multi_pass_probe, uniform_quality, SequenceProfile};
use crate::error::{Error, Result};
use crate::estimation::{
    estimate_batch, lms_step, predict_quality_for_target, EstimatorVariant, LmsState,
    ObservationWindow,
};
use crate::metrics::rate_deviation_pct;
use crate::predictor::{PredictorContext, QualityGrid, RatePredictor};
use crate::rq_model::{
    fit_least_squares, ModelKind, QualityLevel, RQParams, RQPoint, Rate, DEFAULT_Q_NUM,
};

/// Allocation floor keeping `ln(rate)` defined after severe overshoot.
pub const MIN_ALLOCATION_BITS: f64 = 1.0;

/// Default per-frame weights within a miniGOP, front-loaded.
pub const DEFAULT_MINIGOP_WEIGHTS: [f64; 4] = [1.9, 1.6, 1.3, 1.0];

/// Controller configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateControlConfig {
    /// Horizon (frames) over which sequence-level budget drift is amortized.
    pub sliding_window: usize,
    pub minigop_len: usize,
    pub weights: Vec<f64>,
    /// Observation-window reset period, independent of miniGOP boundaries.
    pub gop_length: usize,
    pub q_num: u32,
    pub variant: EstimatorVariant,
    pub grid: QualityGrid,
    /// Relative weight of predictor prior points in the batch fit.
    pub predictor_weight: f64,
    /// Shared starting parameters; the frame-1 fallback.
    pub initial: RQParams,
}

impl RateControlConfig {
    pub fn new(variant: EstimatorVariant) -> Self {
        Self {
            sliding_window: 40,
            minigop_len: 4,
            weights: DEFAULT_MINIGOP_WEIGHTS.to_vec(),
            gop_length: 32,
            q_num: DEFAULT_Q_NUM,
            variant,
            grid: QualityGrid::default(),
            predictor_weight: 1.0,
            initial: RQParams::logarithmic(6.0, -20.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sliding_window == 0 {
            return Err(Error::Domain("sliding_window must be >= 1".into()));
        }
        if self.minigop_len == 0 {
            return Err(Error::Domain("minigop_len must be >= 1".into()));
        }
        if self.weights.len() != self.minigop_len {
            return Err(Error::Domain(format!(
                "weights length {} != minigop_len {}",
                self.weights.len(),
                self.minigop_len
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Domain("weights must be positive".into()));
        }
        if self.gop_length == 0 {
            return Err(Error::Domain("gop_length must be >= 1".into()));
        }
        if self.q_num < 2 {
            return Err(Error::Domain("q_num must be >= 2".into()));
        }
        if !(self.predictor_weight.is_finite() && self.predictor_weight >= 0.0) {
            return Err(Error::Domain("predictor_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Sliding-window accounting for bit allocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetState {
    /// Frames encoded so far in the sequence.
    pub n_coded: usize,
    /// Total bits consumed by the sequence.
    pub consumed_bits: f64,
    /// Budget allocated to the current miniGOP.
    pub minigop_budget: f64,
    /// Bits consumed within the current miniGOP.
    pub minigop_consumed: f64,
    /// Position of the next frame within its miniGOP.
    pub minigop_pos: usize,
}

/// MiniGOP budget per the sliding-window rule: amortize the sequence-level
/// surplus or deficit over `SW` frames, scaled to the miniGOP size.
pub fn allocate_minigop(r_s: f64, state: &BudgetState, cfg: &RateControlConfig) -> f64 {
    allocate_minigop_sized(r_s, state, cfg.sliding_window, cfg.minigop_len)
}

pub(crate) fn allocate_minigop_sized(
    r_s: f64,
    state: &BudgetState,
    sliding_window: usize,
    n_frames: usize,
) -> f64 {
    let sw = sliding_window as f64;
    let raw = (r_s * (state.n_coded as f64 + sw) - state.consumed_bits) / sw * n_frames as f64;
    raw.max(MIN_ALLOCATION_BITS)
}

/// Per-frame budget: remaining miniGOP bits shared over the remaining
/// frames' weights.
pub fn allocate_frame(r_mg: f64, state: &BudgetState, cfg: &RateControlConfig) -> f64 {
    allocate_frame_weighted(
        r_mg,
        state.minigop_consumed,
        &cfg.weights[state.minigop_pos..],
    )
}

pub(crate) fn allocate_frame_weighted(
    r_mg: f64,
    minigop_consumed: f64,
    remaining_weights: &[f64],
) -> f64 {
    debug_assert!(!remaining_weights.is_empty());
    let wsum: f64 = remaining_weights.iter().sum();
    let raw = (r_mg - minigop_consumed) / wsum * remaining_weights[0];
    raw.max(MIN_ALLOCATION_BITS)
}

/// Per-frame log entry of a controlled encode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: usize,
    pub r_target: f64,
    pub q_pred: f64,
    pub r_enc: f64,
    pub distortion: f64,
    pub psnr_db: f64,
    pub alpha: f64,
    pub beta: f64,
    pub deviation_pct: f64,
    /// Whether the estimator fell back to the previous/initial parameters.
    pub fell_back: bool,
}

/// Full per-frame log of one controlled sequence run plus totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTrace {
    pub frames: Vec<FrameRecord>,
    pub total_bits: f64,
    pub mean_deviation_pct: f64,
    pub mean_psnr_db: f64,
}

pub const TRACE_CSV_HEADER: &str = "t,r_target,q_pred,r_enc,psnr_db,alpha,beta,deviation_pct";

impl SequenceTrace {
    pub fn from_frames(frames: Vec<FrameRecord>) -> Self {
        let n = frames.len().max(1) as f64;
        let total_bits = frames.iter().map(|f| f.r_enc).sum();
        let mean_deviation_pct = frames.iter().map(|f| f.deviation_pct).sum::<f64>() / n;
        let mean_psnr_db = frames.iter().map(|f| f.psnr_db).sum::<f64>() / n;
        Self {
            frames,
            total_bits,
            mean_deviation_pct,
            mean_psnr_db,
        }
    }

    /// Stable-column CSV, one row per frame.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.frames.len() + 1));
        out.push_str(TRACE_CSV_HEADER);
        out.push('\n');
        for f in &self.frames {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.9},{:.9},{:.6}\n",
                f.t, f.r_target, f.q_pred, f.r_enc, f.psnr_db, f.alpha, f.beta, f.deviation_pct
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trace CSV".into()))?;
        if header.trim() != TRACE_CSV_HEADER {
            return Err(Error::Parse(format!("unexpected trace header `{header}`")));
        }
        let mut frames = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 8 {
                return Err(Error::Parse(format!(
                    "row {i}: expected 8 columns, got {}",
                    cols.len()
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {i}: {e}")))
            };
            let psnr_db = num(cols[4])?;
            frames.push(FrameRecord {
                t: cols[0]
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("row {i}: {e}")))?,
                r_target: num(cols[1])?,
                q_pred: num(cols[2])?,
                r_enc: num(cols[3])?,
                psnr_db,
                // Distortion is recoverable from PSNR; the CSV omits it.
                distortion: 255.0 * 255.0 * 10f64.powf(-psnr_db / 10.0),
                alpha: num(cols[5])?,
                beta: num(cols[6])?,
                deviation_pct: num(cols[7])?,
                fell_back: false,
            });
        }
        Ok(Self::from_frames(frames))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// MiniGOP bookkeeping internal to a run.
struct MinigopCursor {
    len: usize,
}

/// Parameter estimate for one frame under the batch variants; the LMS
/// variant has its own flow and never reaches here. Returns the params to
/// use and whether the estimator fell back.
fn estimate_for_frame(
    cfg: &RateControlConfig,
    frame: &crate::codec_sim::FrameProfile,
    ctx: &PredictorContext,
    window: &ObservationWindow,
    fallback: RQParams,
    predictor: &dyn RatePredictor,
    rng: &mut ChaCha8Rng,
) -> Result<(RQParams, bool)> {
    Ok(match cfg.variant {
        EstimatorVariant::FourPassOracle => {
            let pts = multi_pass_probe(frame, &cfg.grid.levels(), rng);
            match fit_least_squares(&pts, ModelKind::Logarithmic) {
                Ok(p) => (p, false),
                Err(_) => (fallback, true),
            }
        }
        EstimatorVariant::Fusion => {
            let pred = predictor.predict(frame, ctx, &cfg.grid, rng);
            let est = estimate_batch(Some(&pred), window, fallback, cfg.predictor_weight)?;
            (est.params, est.fell_back)
        }
        EstimatorVariant::PredictorOnly => {
            let pred = predictor.predict(frame, ctx, &cfg.grid, rng);
            let est = estimate_batch(
                Some(&pred),
                &ObservationWindow::new(),
                fallback,
                cfg.predictor_weight,
            )?;
            (est.params, est.fell_back)
        }
        EstimatorVariant::HistoryOnly => {
            if window.is_empty() {
                (fallback, true)
            } else {
                let est = estimate_batch(None, window, fallback, 1.0)?;
                (est.params, est.fell_back)
            }
        }
        EstimatorVariant::AdaptiveLms => unreachable!("LMS does not use batch estimation"),
    })
}

/// Run the closed loop over a sequence at a per-frame target of `r_s` bits.
///
/// Per frame: allocate (sequence -> miniGOP -> frame), estimate parameters
/// per the configured variant, pick the quality for the frame budget,
/// encode, record the observation, and update the budget state. The
/// predictor sees the previous frame's encode as context; the first frame
/// uses configured priors (rate `r_s`, the frame's base distortion, the
/// grid midpoint).
pub fn run_closed_loop(
    profile: &SequenceProfile,
    r_s: f64,
    cfg: &RateControlConfig,
    predictor: &dyn RatePredictor,
    rng: &mut ChaCha8Rng,
) -> Result<SequenceTrace> {
    profile.validate()?;
    cfg.validate()?;
    if !(r_s.is_finite() && r_s > 0.0) {
        return Err(Error::Domain(format!(
            "per-frame target must be > 0, got {r_s}"
        )));
    }

    let n = profile.frames.len();
    let mut state = BudgetState::default();
    let mut window = ObservationWindow::new();
    let mut params_prev = cfg.initial;
    let mut lms = LmsState::new(cfg.initial.alpha, cfg.initial.beta);
    let mut minigop = MinigopCursor { len: 0 };

    let mut prev_rate = Rate::from_bits(r_s)?;
    let mut prev_distortion = profile.frames[0].d0;
    let mut prev_quality = cfg.grid.midpoint();

    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let frame = &profile.frames[t];
        if t % cfg.gop_length == 0 {
            window.clear();
        }
        if state.minigop_pos == 0 {
            minigop.len = cfg.minigop_len.min(n - t);
            state.minigop_budget =
                allocate_minigop_sized(r_s, &state, cfg.sliding_window, minigop.len);
            state.minigop_consumed = 0.0;
        }
        let r_t = allocate_frame_weighted(
            state.minigop_budget,
            state.minigop_consumed,
            &cfg.weights[state.minigop_pos..minigop.len],
        );
        let r_target = Rate::from_bits(r_t)?;

        let ctx = PredictorContext {
            prev_rate,
            prev_distortion,
            prev_quality,
            content_scalar: frame.content_scalar(),
        };

        let (enc, alpha, beta, fell_back) = if cfg.variant == EstimatorVariant::AdaptiveLms {
            let (alpha, beta) = (lms.alpha, lms.beta);
            let (next, enc) = lms_step(&lms, r_target, cfg.q_num, |q| encode_frame(frame, q, rng));
            lms = next;
            (enc, alpha, beta, false)
        } else {
            let (params, fell_back) =
                estimate_for_frame(cfg, frame, &ctx, &window, params_prev, predictor, rng)?;
            let q_pred = predict_quality_for_target(&params, r_target, cfg.q_num);
            let enc = encode_frame(frame, q_pred, rng);
            params_prev = params;
            (enc, params.alpha, params.beta, fell_back)
        };

        let deviation_pct = rate_deviation_pct(r_t, enc.rate.bits())
            .expect("allocation floor keeps target positive");
        frames.push(FrameRecord {
            t,
            r_target: r_t,
            q_pred: enc.quality_used.value(),
            r_enc: enc.rate.bits(),
            distortion: enc.distortion,
            psnr_db: enc.psnr_db,
            alpha,
            beta,
            deviation_pct,
            fell_back,
        });

        window.push(RQPoint {
            rate: enc.rate,
            quality: enc.quality_used,
        });
        state.consumed_bits += enc.rate.bits();
        state.minigop_consumed += enc.rate.bits();
        state.n_coded += 1;
        state.minigop_pos += 1;
        if state.minigop_pos >= minigop.len {
            state.minigop_pos = 0;
        }
        prev_rate = enc.rate;
        prev_distortion = enc.distortion;
        prev_quality = enc.quality_used;
    }
    Ok(SequenceTrace::from_frames(frames))
}

/// Encode every frame at a fixed quality level (no rate control); the
/// constant-quality anchor. Targets in the trace equal the encoded rates, so
/// recorded deviations are zero.
pub fn run_constant_quality(
    profile: &SequenceProfile,
    level: QualityLevel,
    rng: &mut ChaCha8Rng,
) -> Result<SequenceTrace> {
    profile.validate()?;
    let mut frames = Vec::with_capacity(profile.frames.len());
    for (t, frame) in profile.frames.iter().enumerate() {
        let enc = encode_frame(frame, level, rng);
        frames.push(FrameRecord {
            t,
            r_target: enc.rate.bits(),
            q_pred: level.value(),
            r_enc: enc.rate.bits(),
            distortion: enc.distortion,
            psnr_db: enc.psnr_db,
            alpha: 0.0,
            beta: 0.0,
            deviation_pct: 0.0,
            fell_back: false,
        });
    }
    Ok(SequenceTrace::from_frames(frames))
}

/// The 1-step evaluation protocol: per frame, draw a target quality, derive
/// the target rate from a pre-encode, estimate the model, predict the
/// quality for that rate, and re-encode with it. Context comes from the
/// previous frame's pre-encode, mirroring a pre-processing pass.
pub fn run_one_step_eval(
    profile: &SequenceProfile,
    cfg: &RateControlConfig,
    predictor: &dyn RatePredictor,
    rng: &mut ChaCha8Rng,
    q_range: (f64, f64),
) -> Result<SequenceTrace> {
    profile.validate()?;
    cfg.validate()?;
    if !(q_range.0 >= 0.0 && q_range.1 > q_range.0 && q_range.1 <= (cfg.q_num - 1) as f64) {
        return Err(Error::Domain(format!("invalid quality range {q_range:?}")));
    }

    let n = profile.frames.len();
    let mut window = ObservationWindow::new();
    let mut params_prev = cfg.initial;
    let mut lms = LmsState::new(cfg.initial.alpha, cfg.initial.beta);
    let mut prev_pre: Option<crate::codec_sim::EncodeResult> = None;

    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let frame = &profile.frames[t];
        if t % cfg.gop_length == 0 {
            window.clear();
        }
        let q_target = uniform_quality(q_range.0, q_range.1, rng);
        let pre = encode_frame(frame, q_target, rng);
        let r_target = pre.rate;

        let ctx = match prev_pre {
            Some(p) => PredictorContext {
                prev_rate: p.rate,
                prev_distortion: p.distortion,
                prev_quality: p.quality_used,
                content_scalar: frame.content_scalar(),
            },
            None => PredictorContext {
                prev_rate: pre.rate,
                prev_distortion: pre.distortion,
                prev_quality: pre.quality_used,
                content_scalar: frame.content_scalar(),
            },
        };

        let (enc, alpha, beta, fell_back) = if cfg.variant == EstimatorVariant::AdaptiveLms {
            let (alpha, beta) = (lms.alpha, lms.beta);
            let (next, enc) = lms_step(&lms, r_target, cfg.q_num, |q| encode_frame(frame, q, rng));
            lms = next;
            (enc, alpha, beta, false)
        } else {
            let (params, fell_back) =
                estimate_for_frame(cfg, frame, &ctx, &window, params_prev, predictor, rng)?;
            let q_pred = predict_quality_for_target(&params, r_target, cfg.q_num);
            let enc = encode_frame(frame, q_pred, rng);
            params_prev = params;
            (enc, params.alpha, params.beta, fell_back)
        };

        let deviation_pct = rate_deviation_pct(r_target.bits(), enc.rate.bits())
            .expect("pre-encode rate is positive");
        frames.push(FrameRecord {
            t,
            r_target: r_target.bits(),
            q_pred: enc.quality_used.value(),
            r_enc: enc.rate.bits(),
            distortion: enc.distortion,
            psnr_db: enc.psnr_db,
            alpha,
            beta,
            deviation_pct,
            fell_back,
        });
        window.push(RQPoint {
            rate: enc.rate,
            quality: enc.quality_used,
        });
        prev_pre = Some(pre);
    }
    Ok(SequenceTrace::from_frames(frames))
}

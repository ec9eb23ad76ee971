//! Online estimation of the logarithmic R-Q parameters.
//!
//! The batch path fuses predictor prior points with the observed encodes of
//! the current GOP in one least-squares solve; the iterative path is the
//! adaptive-LMS baseline that nudges `(alpha, beta)` from the sign and size
//! of each frame's quality-prediction error.

use serde::{Deserialize, Serialize};

use crate::codec_sim::EncodeResult;
use crate::error::{Error, Result};
use crate::predictor::PredictedPoints;
use crate::rate_control::SequenceTrace;
use crate::rq_model::{eval_quality, weighted_line_fit, QualityLevel, RQParams, RQPoint, Rate};

/// Observed (R, Q) points of the current GOP, ordered by coding time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationWindow {
    points: Vec<RQPoint>,
    /// Whether the owner resets this window at GOP boundaries.
    pub gop_scoped: bool,
}

impl ObservationWindow {
    pub fn new() -> Self {
        Self {
            points: Vec::new(),
            gop_scoped: true,
        }
    }

    pub fn push(&mut self, point: RQPoint) {
        self.points.push(point);
    }

    /// Drop all observations (GOP boundary).
    pub fn clear(&mut self) {
        self.points.clear();
    }

    pub fn points(&self) -> &[RQPoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

/// State of the adaptive-LMS baseline estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmsState {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub eta: f64,
}

impl LmsState {
    /// Default learning rates of 0.01 for both parameters.
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            mu: 0.01,
            eta: 0.01,
        }
    }

    pub fn with_learning_rates(alpha: f64, beta: f64, mu: f64, eta: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0 && eta.is_finite() && eta > 0.0) {
            return Err(Error::Domain(format!(
                "learning rates must be finite and positive, got mu={mu}, eta={eta}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            mu,
            eta,
        })
    }
}

/// The competing estimation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorVariant {
    /// Predictor prior points fused with GOP observations.
    Fusion,
    /// Predictor prior points only.
    PredictorOnly,
    /// GOP observations only.
    HistoryOnly,
    /// Iterative LMS update of (alpha, beta).
    AdaptiveLms,
    /// Per-frame multi-pass probing; the accuracy ceiling.
    FourPassOracle,
}

impl EstimatorVariant {
    pub const ALL: [EstimatorVariant; 5] = [
        EstimatorVariant::Fusion,
        EstimatorVariant::PredictorOnly,
        EstimatorVariant::HistoryOnly,
        EstimatorVariant::AdaptiveLms,
        EstimatorVariant::FourPassOracle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorVariant::Fusion => "fusion",
            EstimatorVariant::PredictorOnly => "predictor_only",
            EstimatorVariant::HistoryOnly => "history_only",
            EstimatorVariant::AdaptiveLms => "adaptive_lms",
            EstimatorVariant::FourPassOracle => "four_pass_oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown estimator variant `{s}`")))
    }
}

impl std::fmt::Display for EstimatorVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result of a batch estimate: the parameters to use and whether the fit was
/// degenerate and fell back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEstimate {
    pub params: RQParams,
    pub fell_back: bool,
}

/// Minimum ln-rate spread for a slope to be identifiable. Below this the
/// abscissae are indistinguishable from a single rate under encode noise and
/// a fit degenerates into an arbitrary line through the cluster.
pub const MIN_LN_RATE_SPREAD: f64 = 0.5;

/// Plausibility range for a fitted slope. Points clustered within encode
/// noise can produce arbitrarily steep or flat lines; such fits carry no
/// usable rate-quality information and trigger the fallback instead.
pub const FIT_ALPHA_RANGE: (f64, f64) = (0.5, 60.0);

/// Logarithmic least-squares fit over the union of predictor prior points
/// and observed points, with uniform weights by default (`predictor_weight`
/// scales only the prior set). Falls back unchanged when the union has fewer
/// than two distinct rates or the fit is non-physical.
pub fn estimate_batch(
    predicted: Option<&PredictedPoints>,
    observed: &ObservationWindow,
    fallback: RQParams,
    predictor_weight: f64,
) -> Result<BatchEstimate> {
    if predicted.is_none() && observed.is_empty() {
        return Err(Error::Contract(
            "estimate_batch requires at least one nonempty point set".into(),
        ));
    }
    let mut xy = Vec::new();
    let mut weights = Vec::new();
    if let Some(pred) = predicted {
        for p in pred.points() {
            xy.push((p.rate.ln(), p.quality.value()));
            weights.push(predictor_weight);
        }
    }
    for p in observed.points() {
        xy.push((p.rate.ln(), p.quality.value()));
        weights.push(1.0);
    }
    let fell_back = Ok(BatchEstimate {
        params: fallback,
        fell_back: true,
    });
    let (x_min, x_max) = xy.iter().zip(&weights).filter(|(_, w)| **w > 0.0).fold(
        (f64::INFINITY, f64::NEG_INFINITY),
        |(lo, hi), ((x, _), _)| (lo.min(*x), hi.max(*x)),
    );
    if x_max - x_min < MIN_LN_RATE_SPREAD {
        return fell_back;
    }
    match weighted_line_fit(&xy, &weights) {
        Ok((alpha, beta)) if alpha >= FIT_ALPHA_RANGE.0 && alpha <= FIT_ALPHA_RANGE.1 => {
            Ok(BatchEstimate {
                params: RQParams::logarithmic(alpha, beta),
                fell_back: false,
            })
        }
        _ => fell_back,
    }
}

/// Quality level the current model assigns to a target rate, clamped into
/// the valid range.
pub fn predict_quality_for_target(params: &RQParams, r_target: Rate, q_num: u32) -> QualityLevel {
    QualityLevel::clamped(eval_quality(params, r_target), q_num)
}

/// One adaptive-LMS control step: derive the quality for the target rate,
/// encode, re-estimate the quality the real rate maps to, and update
/// `(alpha, beta)` from the difference.
///
/// The derived quality is clamped into `[0, q_num - 1]` before encoding and
/// the clamped value feeds the update, so an out-of-range target does not
/// destabilize a correct model.
pub fn lms_step(
    state: &LmsState,
    r_target: Rate,
    q_num: u32,
    encode: impl FnOnce(QualityLevel) -> EncodeResult,
) -> (LmsState, EncodeResult) {
    let q_real = QualityLevel::clamped(state.alpha * r_target.ln() + state.beta, q_num);
    let enc = encode(q_real);
    let ln_real = enc.rate.ln();
    let q_est = state.alpha * ln_real + state.beta;
    let err = q_real.value() - q_est;
    let next = LmsState {
        alpha: state.alpha + state.mu * err * ln_real,
        beta: state.beta + state.eta * err,
        ..*state
    };
    (next, enc)
}

/// Shared initial parameters: the arithmetic mean of the first-frame
/// `(alpha, beta)` across calibration traces.
pub fn initial_params(calibration: &[SequenceTrace]) -> Result<RQParams> {
    if calibration.is_empty() {
        return Err(Error::Contract(
            "initial_params requires at least one trace".into(),
        ));
    }
    let mut alpha = 0.0;
    let mut beta = 0.0;
    for trace in calibration {
        let first = trace
            .frames
            .first()
            .ok_or_else(|| Error::Contract("calibration trace has no frames".into()))?;
        alpha += first.alpha;
        beta += first.beta;
    }
    let n = calibration.len() as f64;
    Ok(RQParams::logarithmic(alpha / n, beta / n))
}

/// Sum of squared quality residuals of a logarithmic model over a weighted
/// point union; the objective the batch estimate minimizes.
pub fn batch_objective(
    params: &RQParams,
    predicted: Option<&PredictedPoints>,
    observed: &ObservationWindow,
    predictor_weight: f64,
) -> f64 {
    let mut acc = 0.0;
    if let Some(pred) = predicted {
        for p in pred.points() {
            let r = p.quality.value() - eval_quality(params, p.rate);
            acc += predictor_weight * r * r;
        }
    }
    for p in observed.points() {
        let r = p.quality.value() - eval_quality(params, p.rate);
        acc += r * r;
    }
    acc
}

//! Pluggable rate predictors: given the current frame's content descriptor
//! and the previous frame's coding statistics, emit four prior (R, Q) points
//! at a fixed quality grid.
//!
//! Three implementations ship: an oracle that inverts the frame's true law,
//! a noisy synthetic predictor whose per-level error profile is calibrated
//! analytically, and a linear-feature regressor trained to minimize mean
//! absolute rate deviation.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec_sim::FrameProfile;
use crate::error::{Error, Result};
use crate::linalg::solve4;
use crate::rq_model::{QualityLevel, RQPoint, Rate, DEFAULT_Q_NUM};

/// Default grid levels at which priors are emitted.
pub const DEFAULT_GRID_LEVELS: [f64; 4] = [10.0, 17.0, 43.0, 60.0];

/// Default per-level log-noise widths; the top two levels degrade harder.
pub const DEFAULT_NOISE_SIGMAS: [f64; 4] = [0.10, 0.10, 0.18, 0.20];

const N_LEVELS: usize = 4;
const N_FEATURES: usize = 4;
const MIN_PREDICTED_RATE: f64 = 1e-6;

pub const FEATURE_NAMES: [&str; N_FEATURES] =
    ["ln_prev_rate", "prev_quality", "content_scalar", "bias"];

/// The four predefined quality levels, strictly increasing and within range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityGrid {
    levels: [QualityLevel; N_LEVELS],
}

impl QualityGrid {
    pub fn new(levels: [f64; N_LEVELS], q_num: u32) -> Result<Self> {
        let max = (q_num - 1) as f64;
        for w in levels.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Domain(format!(
                    "grid levels must be strictly increasing, got {levels:?}"
                )));
            }
        }
        if levels[0] < 0.0 || levels[N_LEVELS - 1] > max {
            return Err(Error::QualityOutOfRange {
                q: levels[N_LEVELS - 1],
                max,
            });
        }
        let mut out = [QualityLevel::new(0.0)?; N_LEVELS];
        for (slot, &v) in out.iter_mut().zip(&levels) {
            *slot = QualityLevel::new(v)?;
        }
        Ok(Self { levels: out })
    }

    pub fn levels(&self) -> [QualityLevel; N_LEVELS] {
        self.levels
    }

    /// Midpoint of the grid span; used as the first-frame quality prior.
    pub fn midpoint(&self) -> QualityLevel {
        let mid = (self.levels[0].value() + self.levels[N_LEVELS - 1].value()) / 2.0;
        QualityLevel::new(mid).expect("midpoint of valid levels is valid")
    }
}

impl Default for QualityGrid {
    fn default() -> Self {
        Self::new(DEFAULT_GRID_LEVELS, DEFAULT_Q_NUM).expect("default grid is valid")
    }
}

/// Coding context available when predicting for the current frame: the
/// previous frame's rate/distortion/quality plus a scalar content
/// descriptor of the current frame supplied by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorContext {
    pub prev_rate: Rate,
    pub prev_distortion: f64,
    pub prev_quality: QualityLevel,
    pub content_scalar: f64,
}

impl PredictorContext {
    fn features(&self) -> [f64; N_FEATURES] {
        [
            self.prev_rate.ln(),
            self.prev_quality.value(),
            self.content_scalar,
            1.0,
        ]
    }
}

/// Four prior (R, Q) points with rates strictly increasing in quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedPoints {
    points: [RQPoint; N_LEVELS],
}

impl PredictedPoints {
    /// Build from raw per-level rates, repairing any monotonicity violations
    /// by isotonic regression followed by strictification.
    pub fn from_rates(raw: [f64; N_LEVELS], grid: &QualityGrid) -> Self {
        let mut rates = pava(raw.map(|r| r.max(MIN_PREDICTED_RATE)));
        for i in 1..N_LEVELS {
            if rates[i] <= rates[i - 1] {
                rates[i] = rates[i - 1] * (1.0 + 1e-9);
            }
        }
        let levels = grid.levels();
        let mut points = [RQPoint {
            rate: Rate::from_bits(1.0).unwrap(),
            quality: levels[0],
        }; N_LEVELS];
        for i in 0..N_LEVELS {
            points[i] = RQPoint {
                rate: Rate::from_bits(rates[i]).expect("repaired rate is positive"),
                quality: levels[i],
            };
        }
        Self { points }
    }

    pub fn points(&self) -> &[RQPoint; N_LEVELS] {
        &self.points
    }

    pub fn rates(&self) -> [f64; N_LEVELS] {
        [
            self.points[0].rate.bits(),
            self.points[1].rate.bits(),
            self.points[2].rate.bits(),
            self.points[3].rate.bits(),
        ]
    }
}

/// Unweighted pool-adjacent-violators pass producing a non-decreasing vector.
fn pava(v: [f64; N_LEVELS]) -> [f64; N_LEVELS] {
    let mut blocks: Vec<(f64, usize)> = v.iter().map(|&x| (x, 1)).collect();
    let mut i = 0;
    while i + 1 < blocks.len() {
        if blocks[i].0 > blocks[i + 1].0 {
            let (a, na) = blocks[i];
            let (b, nb) = blocks[i + 1];
            blocks[i] = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
            blocks.remove(i + 1);
            i = i.saturating_sub(1);
        } else {
            i += 1;
        }
    }
    let mut out = [0.0; N_LEVELS];
    let mut k = 0;
    for (val, len) in blocks {
        for _ in 0..len {
            out[k] = val;
            k += 1;
        }
    }
    out
}

/// The predictor contract: emit four prior points for the current frame.
///
/// `frame` is the current frame's content (the simulator's stand-in for the
/// pixels a real predictor would see); implementations that must not peek at
/// ground truth use only `ctx`. Implementations are immutable; all
/// randomness flows through the caller's RNG.
pub trait RatePredictor {
    fn predict(
        &self,
        frame: &FrameProfile,
        ctx: &PredictorContext,
        grid: &QualityGrid,
        rng: &mut ChaCha8Rng,
    ) -> PredictedPoints;
}

/// Inverts the frame's ground-truth law exactly. The accuracy ceiling for
/// prior-driven estimation.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl RatePredictor for OraclePredictor {
    fn predict(
        &self,
        frame: &FrameProfile,
        _ctx: &PredictorContext,
        grid: &QualityGrid,
        _rng: &mut ChaCha8Rng,
    ) -> PredictedPoints {
        let rates = grid.levels().map(|q| frame.rate_for_quality(q.value()));
        PredictedPoints::from_rates(rates, grid)
    }
}

/// Oracle rates corrupted by per-level multiplicative log-normal noise.
///
/// The default sigma profile degrades at the two highest levels; the
/// `calibrated` constructor scales that profile so the analytic mean
/// absolute rate deviation hits a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticNoisyPredictor {
    pub sigmas: [f64; N_LEVELS],
}

impl SyntheticNoisyPredictor {
    pub fn new(sigmas: [f64; N_LEVELS]) -> Result<Self> {
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Domain(format!(
                "noise sigmas must be >= 0, got {sigmas:?}"
            )));
        }
        Ok(Self { sigmas })
    }

    /// Scale the default sigma shape so the mean absolute deviation
    /// `E|exp(sigma Z) - 1|` averaged over levels equals `target`.
    pub fn calibrated(target_mean_abs_dev: f64) -> Result<Self> {
        if !(target_mean_abs_dev > 0.0 && target_mean_abs_dev < 2.0) {
            return Err(Error::Domain(format!(
                "calibration target out of range: {target_mean_abs_dev}"
            )));
        }
        let mean_dev = |scale: f64| -> f64 {
            DEFAULT_NOISE_SIGMAS
                .iter()
                .map(|s| lognormal_abs_dev(scale * s))
                .sum::<f64>()
                / N_LEVELS as f64
        };
        let (mut lo, mut hi) = (0.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean_dev(mid) < target_mean_abs_dev {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let scale = 0.5 * (lo + hi);
        Self::new(DEFAULT_NOISE_SIGMAS.map(|s| scale * s))
    }

    /// Analytic per-level mean absolute relative deviation of this noise model.
    pub fn expected_abs_dev(&self) -> [f64; N_LEVELS] {
        self.sigmas.map(lognormal_abs_dev)
    }
}

impl Default for SyntheticNoisyPredictor {
    fn default() -> Self {
        Self {
            sigmas: DEFAULT_NOISE_SIGMAS,
        }
    }
}

impl RatePredictor for SyntheticNoisyPredictor {
    fn predict(
        &self,
        frame: &FrameProfile,
        _ctx: &PredictorContext,
        grid: &QualityGrid,
        rng: &mut ChaCha8Rng,
    ) -> PredictedPoints {
        let mut rates = [0.0; N_LEVELS];
        for (i, q) in grid.levels().iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            rates[i] = frame.rate_for_quality(q.value()) * (self.sigmas[i] * z).exp();
        }
        PredictedPoints::from_rates(rates, grid)
    }
}

/// `E|exp(sigma Z) - 1|` for standard-normal Z: `exp(sigma^2/2) * erf(sigma/sqrt(2))`.
fn lognormal_abs_dev(sigma: f64) -> f64 {
    (sigma * sigma / 2.0).exp() * erf(sigma / std::f64::consts::SQRT_2)
}

/// Abramowitz-Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// One training example: the coding context seen before a frame, paired with
/// the observed encode rates at the four grid levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub ctx: PredictorContext,
    pub rates: [f64; N_LEVELS],
}

/// Linear-feature regressor: per grid level, `ln(rate) = w . features`.
///
/// Trained to minimize the mean absolute rate deviation; ignores the frame's
/// ground truth entirely at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorPredictor {
    pub feature_names: Vec<String>,
    /// One coefficient row per grid level.
    pub coefficients: [[f64; N_FEATURES]; N_LEVELS],
    pub grid: QualityGrid,
}

impl RegressorPredictor {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.feature_names.len() != N_FEATURES {
            return Err(Error::Domain(format!(
                "expected {N_FEATURES} feature names, got {}",
                r.feature_names.len()
            )));
        }
        Ok(r)
    }

    fn raw_rates(&self, ctx: &PredictorContext) -> [f64; N_LEVELS] {
        let phi = ctx.features();
        let mut rates = [0.0; N_LEVELS];
        for (i, w) in self.coefficients.iter().enumerate() {
            let ln_rate: f64 = w.iter().zip(&phi).map(|(wi, xi)| wi * xi).sum();
            // Cap the exponent so a wild extrapolation cannot overflow.
            rates[i] = ln_rate.min(700.0).exp();
        }
        rates
    }
}

impl RatePredictor for RegressorPredictor {
    fn predict(
        &self,
        _frame: &FrameProfile,
        ctx: &PredictorContext,
        grid: &QualityGrid,
        _rng: &mut ChaCha8Rng,
    ) -> PredictedPoints {
        PredictedPoints::from_rates(self.raw_rates(ctx), grid)
    }
}

/// Mean absolute deviation between two same-length rate lists, in bits.
pub fn mae_loss(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    if predicted.len() != observed.len() {
        return Err(Error::Contract(format!(
            "rate list length mismatch: {} vs {}",
            predicted.len(),
            observed.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Contract("empty rate lists".into()));
    }
    Ok(predicted
        .iter()
        .zip(observed)
        .map(|(p, o)| (p - o).abs())
        .sum::<f64>()
        / predicted.len() as f64)
}

const IRLS_SMOOTHING: f64 = 1e-8;
const IRLS_MAX_ITERS: usize = 500;
const IRLS_TOL: f64 = 1e-10;

/// Fit a [`RegressorPredictor`] on observed (context, rates) records.
///
/// Initializes each level by least squares on ln-rates, then refines with a
/// damped Gauss-Newton iteration on the smoothed absolute rate deviation.
/// The refined loss is monotone non-increasing, and the result is guarded
/// against the zero-coefficient baseline.
pub fn train_regressor(
    records: &[TrainingRecord],
    grid: QualityGrid,
) -> Result<RegressorPredictor> {
    if records.len() < 8 {
        return Err(Error::Training(format!(
            "need at least 8 training records, got {}",
            records.len()
        )));
    }
    for rec in records {
        if rec.rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Training(format!(
                "non-positive rate in record: {:?}",
                rec.rates
            )));
        }
    }

    let features: Vec<[f64; N_FEATURES]> = records.iter().map(|r| r.ctx.features()).collect();
    let mut coefficients = [[0.0; N_FEATURES]; N_LEVELS];
    for level in 0..N_LEVELS {
        let targets: Vec<f64> = records.iter().map(|r| r.rates[level]).collect();
        coefficients[level] = fit_level(&features, &targets);
    }

    Ok(RegressorPredictor {
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        coefficients,
        grid,
    })
}

fn fit_level(features: &[[f64; N_FEATURES]], rates: &[f64]) -> [f64; N_FEATURES] {
    // Stage 1: ordinary least squares on ln-rates.
    let ln_rates: Vec<f64> = rates.iter().map(|r| r.ln()).collect();
    let mut w = solve_normal_equations(features, &ln_rates);

    let loss = |w: &[f64; N_FEATURES]| -> f64 {
        let mut acc = 0.0;
        for (phi, &r) in features.iter().zip(rates) {
            let ln_pred: f64 = w.iter().zip(phi).map(|(wi, xi)| wi * xi).sum();
            if !ln_pred.is_finite() || ln_pred > 700.0 {
                return f64::INFINITY;
            }
            let resid = r - ln_pred.exp();
            acc += (resid * resid + IRLS_SMOOTHING * IRLS_SMOOTHING).sqrt();
        }
        acc / rates.len() as f64
    };

    // Stage 2: damped Gauss-Newton with IRLS weights on the rate-domain MAE.
    let mut current = loss(&w);
    for _ in 0..IRLS_MAX_ITERS {
        // Weighted normal equations: J^T U J dw = J^T U r with
        // J_i = exp(w.phi_i) * phi_i and u_i = 1/sqrt(r_i^2 + eps^2).
        let mut a = [[0.0; N_FEATURES]; N_FEATURES];
        let mut b = [0.0; N_FEATURES];
        for (phi, &r) in features.iter().zip(rates) {
            let ln_pred: f64 = w.iter().zip(phi).map(|(wi, xi)| wi * xi).sum();
            let pred = ln_pred.min(700.0).exp();
            let resid = r - pred;
            let u = 1.0 / (resid * resid + IRLS_SMOOTHING * IRLS_SMOOTHING).sqrt();
            for i in 0..N_FEATURES {
                let ji = pred * phi[i];
                b[i] += u * ji * resid;
                for j in 0..N_FEATURES {
                    a[i][j] += u * ji * pred * phi[j];
                }
            }
        }
        let delta = solve4(a, b);
        // Backtracking keeps the loss monotone.
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let mut cand = w;
            for i in 0..N_FEATURES {
                cand[i] += step * delta[i];
            }
            let l = loss(&cand);
            if l < current {
                w = cand;
                let gain = current - l;
                current = l;
                improved = true;
                if gain < IRLS_TOL * current.max(1.0) {
                    return w;
                }
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }

    // Never do worse than predicting exp(0) = 1 bit everywhere.
    if loss(&w) > loss(&[0.0; N_FEATURES]) {
        return [0.0; N_FEATURES];
    }
    w
}

fn solve_normal_equations(features: &[[f64; N_FEATURES]], y: &[f64]) -> [f64; N_FEATURES] {
    let mut xtx = [[0.0; N_FEATURES]; N_FEATURES];
    let mut xty = [0.0; N_FEATURES];
    for (phi, &yi) in features.iter().zip(y) {
        for i in 0..N_FEATURES {
            xty[i] += phi[i] * yi;
            for j in 0..N_FEATURES {
                xtx[i][j] += phi[i] * phi[j];
            }
        }
    }
    solve4(xtx, xty)
}

//! Parametric rate-quality model families, least-squares fitting, goodness of
//! fit, and the log-linear quality-to-lambda mapping.
//!
//! Rates are bits per frame throughout; bits-per-pixel conversion is a
//! reporting concern and lives in [`crate::metrics`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of discrete quality levels of the simulated codec.
pub const DEFAULT_Q_NUM: u32 = 64;

/// Default Lagrange-multiplier range for the quality mapping.
pub const DEFAULT_LAMBDA_MIN: f64 = 85.0;
pub const DEFAULT_LAMBDA_MAX: f64 = 840.0;

/// A per-frame bitrate in bits. Always finite and strictly positive, which
/// keeps `ln(rate)` defined everywhere downstream.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rate {
    bits: f64,
}

impl Rate {
    pub fn from_bits(bits: f64) -> Result<Self> {
        if !bits.is_finite() || bits <= 0.0 {
            return Err(Error::InvalidRate(bits));
        }
        Ok(Self { bits })
    }

    #[inline]
    pub fn bits(self) -> f64 {
        self.bits
    }

    #[inline]
    pub fn ln(self) -> f64 {
        self.bits.ln()
    }
}

/// A continuous quality level. Non-negative and finite; the upper bound
/// (`q_num - 1`) is enforced wherever the codec configuration is known.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QualityLevel {
    value: f64,
}

impl QualityLevel {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::QualityOutOfRange {
                q: value,
                max: f64::INFINITY,
            });
        }
        Ok(Self { value })
    }

    /// Clamp an arbitrary real into the valid level range `[0, q_num - 1]`.
    pub fn clamped(value: f64, q_num: u32) -> Self {
        let max = (q_num - 1) as f64;
        let v = if value.is_nan() { 0.0 } else { value };
        Self {
            value: v.clamp(0.0, max),
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.value
    }

    pub fn in_range(self, q_num: u32) -> bool {
        self.value <= (q_num - 1) as f64
    }
}

/// One observed or predicted (rate, quality) pair; the atom of all fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RQPoint {
    pub rate: Rate,
    pub quality: QualityLevel,
}

impl RQPoint {
    pub fn new(rate_bits: f64, quality: f64) -> Result<Self> {
        Ok(Self {
            rate: Rate::from_bits(rate_bits)?,
            quality: QualityLevel::new(quality)?,
        })
    }
}

/// The three parametric R-Q families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `Q = alpha * R + beta`
    Linear,
    /// `Q = alpha * exp(beta * R)`
    Exponential,
    /// `Q = alpha * ln(R) + beta`
    Logarithmic,
}

/// A fitted R-Q law: `(alpha, beta)` under one of the three families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RQParams {
    pub alpha: f64,
    pub beta: f64,
    pub kind: ModelKind,
}

impl RQParams {
    pub fn new(alpha: f64, beta: f64, kind: ModelKind) -> Self {
        Self { alpha, beta, kind }
    }

    pub fn logarithmic(alpha: f64, beta: f64) -> Self {
        Self::new(alpha, beta, ModelKind::Logarithmic)
    }
}

/// Log-linear interpolation between the lowest and highest Lagrange
/// multipliers across the quality range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaMap {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub q_num: u32,
}

impl LambdaMap {
    pub fn new(lambda_min: f64, lambda_max: f64, q_num: u32) -> Result<Self> {
        if !(lambda_min.is_finite() && lambda_min > 0.0) {
            return Err(Error::Domain(format!(
                "lambda_min must be > 0, got {lambda_min}"
            )));
        }
        if !(lambda_max.is_finite() && lambda_max > lambda_min) {
            return Err(Error::Domain(format!(
                "lambda_max must exceed lambda_min, got {lambda_max} <= {lambda_min}"
            )));
        }
        if q_num < 2 {
            return Err(Error::Domain(format!("q_num must be >= 2, got {q_num}")));
        }
        Ok(Self {
            lambda_min,
            lambda_max,
            q_num,
        })
    }
}

impl Default for LambdaMap {
    fn default() -> Self {
        Self {
            lambda_min: DEFAULT_LAMBDA_MIN,
            lambda_max: DEFAULT_LAMBDA_MAX,
            q_num: DEFAULT_Q_NUM,
        }
    }
}

/// Evaluate the model at a rate. The result is an unclamped quality-valued
/// real; range clamping is the caller's concern.
pub fn eval_quality(params: &RQParams, rate: Rate) -> f64 {
    let r = rate.bits();
    match params.kind {
        ModelKind::Linear => params.alpha * r + params.beta,
        ModelKind::Exponential => params.alpha * (params.beta * r).exp(),
        ModelKind::Logarithmic => params.alpha * r.ln() + params.beta,
    }
}

/// Exact inverse of [`eval_quality`]: the rate at which the model reaches a
/// given quality.
pub fn invert_rate(params: &RQParams, quality: QualityLevel) -> Result<Rate> {
    let q = quality.value();
    let bits = match params.kind {
        ModelKind::Linear => {
            if params.alpha == 0.0 {
                return Err(Error::Domain(
                    "linear model with alpha = 0 has no inverse".into(),
                ));
            }
            (q - params.beta) / params.alpha
        }
        ModelKind::Exponential => {
            if params.beta == 0.0 {
                return Err(Error::Domain(
                    "exponential model with beta = 0 has no inverse".into(),
                ));
            }
            let ratio = q / params.alpha;
            if !(ratio.is_finite() && ratio > 0.0) {
                return Err(Error::Domain(format!(
                    "exponential inverse requires quality/alpha > 0, got {ratio}"
                )));
            }
            ratio.ln() / params.beta
        }
        ModelKind::Logarithmic => {
            if params.alpha == 0.0 {
                return Err(Error::Domain(
                    "logarithmic model with alpha = 0 has no inverse".into(),
                ));
            }
            ((q - params.beta) / params.alpha).exp()
        }
    };
    Rate::from_bits(bits)
        .map_err(|_| Error::Domain(format!("model inverse yields non-positive rate {bits}")))
}

/// Least-squares fit of `(alpha, beta)` for the requested family.
///
/// Linear and logarithmic fits regress Q on R and on ln(R) respectively;
/// the exponential fit is linearized as `ln Q = ln(alpha) + beta * R`, which
/// requires every quality to be positive. The 2x2 normal equations are solved
/// in closed form on centered abscissae.
pub fn fit_least_squares(points: &[RQPoint], kind: ModelKind) -> Result<RQParams> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    let weights = vec![1.0; points.len()];
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| -> Result<(f64, f64)> {
            let r = p.rate.bits();
            let q = p.quality.value();
            Ok(match kind {
                ModelKind::Linear => (r, q),
                ModelKind::Logarithmic => (r.ln(), q),
                ModelKind::Exponential => {
                    if q <= 0.0 {
                        return Err(Error::Domain(format!(
                            "exponential fit requires positive qualities, got {q}"
                        )));
                    }
                    (r, q.ln())
                }
            })
        })
        .collect::<Result<_>>()?;
    let (slope, intercept) = weighted_line_fit(&xy, &weights)?;
    Ok(match kind {
        ModelKind::Linear => RQParams::new(slope, intercept, kind),
        ModelKind::Logarithmic => RQParams::new(slope, intercept, kind),
        ModelKind::Exponential => RQParams::new(intercept.exp(), slope, kind),
    })
}

/// Weighted simple linear regression `y = slope * x + intercept`.
///
/// Centered formulation for numerical stability. Errors when the weighted
/// abscissa variance vanishes (fewer than two distinct x values).
pub(crate) fn weighted_line_fit(xy: &[(f64, f64)], weights: &[f64]) -> Result<(f64, f64)> {
    debug_assert_eq!(xy.len(), weights.len());
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::DegenerateFit("total weight is zero".into()));
    }
    let xbar = xy.iter().zip(weights).map(|((x, _), w)| w * x).sum::<f64>() / wsum;
    let ybar = xy.iter().zip(weights).map(|((_, y), w)| w * y).sum::<f64>() / wsum;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((x, y), w) in xy.iter().zip(weights) {
        let dx = x - xbar;
        sxx += w * dx * dx;
        sxy += w * dx * (y - ybar);
    }
    // Relative threshold: distinct floats an ulp apart still count as one x.
    let scale = xy.iter().map(|(x, _)| x.abs()).fold(1.0, f64::max);
    if sxx <= wsum * (scale * 1e-12).powi(2) {
        return Err(Error::DegenerateFit(
            "fewer than 2 distinct rates in fitting domain".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok((slope, ybar - slope * xbar))
}

/// Coefficient of determination `1 - SS_res / SS_tot` of a fitted model on a
/// point set. Errors when the quality variance is zero.
pub fn r_squared(points: &[RQPoint], params: &RQParams) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::UndefinedScore(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean_q = points.iter().map(|p| p.quality.value()).sum::<f64>() / n;
    let ss_tot: f64 = points
        .iter()
        .map(|p| (p.quality.value() - mean_q).powi(2))
        .sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedScore("zero quality variance".into()));
    }
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.quality.value() - eval_quality(params, p.rate)).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Map a quality level to its Lagrange multiplier by log-linear
/// interpolation. Strictly increasing in `q`; maps the endpoints exactly.
pub fn lambda_from_quality(map: &LambdaMap, q: QualityLevel) -> Result<f64> {
    let max = (map.q_num - 1) as f64;
    let qv = q.value();
    if qv > max {
        return Err(Error::QualityOutOfRange { q: qv, max });
    }
    let s = qv / max;
    if s == 0.0 {
        return Ok(map.lambda_min);
    }
    if s == 1.0 {
        return Ok(map.lambda_max);
    }
    Ok((map.lambda_min.ln() + s * (map.lambda_max.ln() - map.lambda_min.ln())).exp())
}

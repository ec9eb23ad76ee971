//! Evaluation kernels: rate deviation, predictor accuracy, Bjontegaard
//! delta-rate, and per-method summary aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::EstimatorVariant;
use crate::linalg::solve4;
use crate::rate_control::SequenceTrace;

/// Absolute percentage deviation of the achieved from the target bitrate.
pub fn rate_deviation_pct(r_target: f64, r_enc: f64) -> Result<f64> {
    if !(r_target.is_finite() && r_target > 0.0) {
        return Err(Error::Domain(format!(
            "target rate must be > 0, got {r_target}"
        )));
    }
    Ok(((r_target - r_enc) / r_target).abs() * 100.0)
}

/// Mean absolute percentage error of predicted bitrates at one grid level,
/// normalized by the prediction. `pairs` holds `(encoded, predicted)` rates.
pub fn predictor_accuracy_pct(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Domain("need at least one frame".into()));
    }
    let mut acc = 0.0;
    for &(enc, pred) in pairs {
        if !(pred.is_finite() && pred > 0.0) {
            return Err(Error::Domain(format!(
                "predicted rate must be > 0, got {pred}"
            )));
        }
        acc += (enc - pred).abs() / pred;
    }
    Ok(acc / pairs.len() as f64 * 100.0)
}

/// Bits-per-frame to bits-per-pixel; reporting-only unit conversion.
pub fn bits_to_bpp(bits_per_frame: f64, pixels: u64) -> f64 {
    bits_per_frame / pixels as f64
}

/// One operating point on a rate-distortion curve. Unit-agnostic in rate
/// (bits per frame or bpp) since the delta-rate is scale-invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdCurvePoint {
    pub rate: f64,
    pub psnr_db: f64,
}

/// Interpolation backend for the delta-rate integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdInterpolation {
    /// Single cubic fit of log10(rate) over PSNR (the classic formulation).
    CubicPolynomial,
    /// Piecewise monotone cubic Hermite.
    Pchip,
}

/// Bjontegaard delta-rate of `test` against `anchor`, in percent; negative
/// values are savings. Cubic-polynomial interpolation with analytic
/// integration over the overlapping PSNR interval.
pub fn bd_rate(anchor: &[RdCurvePoint], test: &[RdCurvePoint]) -> Result<f64> {
    bd_rate_with(anchor, test, RdInterpolation::CubicPolynomial)
}

pub fn bd_rate_with(
    anchor: &[RdCurvePoint],
    test: &[RdCurvePoint],
    interp: RdInterpolation,
) -> Result<f64> {
    validate_curve(anchor, "anchor")?;
    validate_curve(test, "test")?;
    let lo = anchor[0].psnr_db.max(test[0].psnr_db);
    let hi = anchor[anchor.len() - 1]
        .psnr_db
        .min(test[test.len() - 1].psnr_db);
    if lo >= hi {
        return Err(Error::Domain(format!(
            "no PSNR overlap between curves: [{lo}, {hi}]"
        )));
    }
    let integral = |curve: &[RdCurvePoint]| -> f64 {
        match interp {
            RdInterpolation::CubicPolynomial => integrate_cubic_fit(curve, lo, hi),
            RdInterpolation::Pchip => integrate_pchip(curve, lo, hi),
        }
    };
    let avg_diff = (integral(test) - integral(anchor)) / (hi - lo);
    Ok(100.0 * (10f64.powf(avg_diff) - 1.0))
}

fn validate_curve(curve: &[RdCurvePoint], label: &str) -> Result<()> {
    if curve.len() < 4 {
        return Err(Error::Domain(format!(
            "{label} curve needs >= 4 points, got {}",
            curve.len()
        )));
    }
    for p in curve {
        if !(p.rate.is_finite() && p.rate > 0.0) {
            return Err(Error::Domain(format!(
                "{label} curve has non-positive rate {}",
                p.rate
            )));
        }
    }
    for w in curve.windows(2) {
        if w[1].rate <= w[0].rate {
            return Err(Error::Domain(format!(
                "{label} curve rates must be strictly increasing"
            )));
        }
        if w[1].psnr_db <= w[0].psnr_db {
            return Err(Error::Domain(format!(
                "{label} curve PSNR must be strictly increasing"
            )));
        }
    }
    Ok(())
}

/// Least-squares cubic fit of log10(rate) over centered PSNR, integrated
/// analytically over `[lo, hi]`.
fn integrate_cubic_fit(curve: &[RdCurvePoint], lo: f64, hi: f64) -> f64 {
    let center = curve.iter().map(|p| p.psnr_db).sum::<f64>() / curve.len() as f64;
    let mut xtx = [[0.0; 4]; 4];
    let mut xty = [0.0; 4];
    for p in curve {
        let u = p.psnr_db - center;
        let phi = [1.0, u, u * u, u * u * u];
        let y = p.rate.log10();
        for i in 0..4 {
            xty[i] += phi[i] * y;
            for j in 0..4 {
                xtx[i][j] += phi[i] * phi[j];
            }
        }
    }
    let coef = solve4(xtx, xty);
    let antiderivative = |u: f64| -> f64 {
        coef[0] * u
            + coef[1] * u * u / 2.0
            + coef[2] * u * u * u / 3.0
            + coef[3] * u * u * u * u / 4.0
    };
    antiderivative(hi - center) - antiderivative(lo - center)
}

/// Fritsch-Carlson monotone cubic Hermite interpolation of log10(rate) over
/// PSNR, integrated piecewise-analytically over `[lo, hi]`.
fn integrate_pchip(curve: &[RdCurvePoint], lo: f64, hi: f64) -> f64 {
    let xs: Vec<f64> = curve.iter().map(|p| p.psnr_db).collect();
    let ys: Vec<f64> = curve.iter().map(|p| p.rate.log10()).collect();
    let slopes = pchip_slopes(&xs, &ys);
    let mut total = 0.0;
    for i in 0..xs.len() - 1 {
        let (x0, x1) = (xs[i], xs[i + 1]);
        let a = lo.max(x0);
        let b = hi.min(x1);
        if b <= a {
            continue;
        }
        let h = x1 - x0;
        let ta = (a - x0) / h;
        let tb = (b - x0) / h;
        // Antiderivatives of the Hermite basis on [0, 1].
        let h00 = |t: f64| t * t * t * t / 2.0 - t * t * t + t;
        let h10 = |t: f64| t * t * t * t / 4.0 - 2.0 * t * t * t / 3.0 + t * t / 2.0;
        let h01 = |t: f64| -t * t * t * t / 2.0 + t * t * t;
        let h11 = |t: f64| t * t * t * t / 4.0 - t * t * t / 3.0;
        total += h
            * (ys[i] * (h00(tb) - h00(ta))
                + h * slopes[i] * (h10(tb) - h10(ta))
                + ys[i + 1] * (h01(tb) - h01(ta))
                + h * slopes[i + 1] * (h11(tb) - h11(ta)));
    }
    total
}

fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    m[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    m
}

fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

/// How a trace was produced: the constant-quality anchor or one of the
/// competing estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodLabel {
    Anchor,
    Variant(EstimatorVariant),
}

impl MethodLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodLabel::Anchor => "anchor",
            MethodLabel::Variant(v) => v.as_str(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "anchor" {
            return Ok(MethodLabel::Anchor);
        }
        EstimatorVariant::parse(s).map(MethodLabel::Variant)
    }
}

impl std::fmt::Display for MethodLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One completed run cell: a trace plus the labels that identify it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub sequence: String,
    pub method: MethodLabel,
    /// Anchor quality level labeling this target bitrate.
    pub target_level: f64,
    pub seed: u64,
    pub trace: SequenceTrace,
}

/// Per-sequence aggregation for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceSummary {
    pub sequence: String,
    pub mean_deviation_pct: f64,
    pub bd_rate_pct: Option<f64>,
    /// Mean deviation per target level, keyed by the level label.
    pub per_target_deviation: BTreeMap<String, f64>,
}

/// One row of the method-comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: MethodLabel,
    pub mean_deviation_pct: f64,
    pub bd_rate_pct: Option<f64>,
    pub per_sequence: Vec<SequenceSummary>,
}

/// Aggregate run cells into per-method summaries: per-sequence mean
/// deviation, the per-method average over sequences, and delta-rate against
/// the constant-quality anchor curves built from `MethodLabel::Anchor`
/// entries.
pub fn summarize(entries: &[TraceEntry]) -> Result<Vec<MethodSummary>> {
    if entries.is_empty() {
        return Err(Error::Contract(
            "summarize requires at least one trace".into(),
        ));
    }
    let anchor_curves = build_curves(entries, MethodLabel::Anchor);

    let mut methods: Vec<MethodLabel> = Vec::new();
    for v in EstimatorVariant::ALL {
        if entries.iter().any(|e| e.method == MethodLabel::Variant(v)) {
            methods.push(MethodLabel::Variant(v));
        }
    }

    let mut summaries = Vec::new();
    for method in methods {
        let curves = build_curves(entries, method);
        let mut sequences: Vec<String> = entries
            .iter()
            .filter(|e| e.method == method)
            .map(|e| e.sequence.clone())
            .collect();
        sequences.sort();
        sequences.dedup();

        let mut per_sequence = Vec::new();
        for seq in &sequences {
            let cells: Vec<&TraceEntry> = entries
                .iter()
                .filter(|e| e.method == method && &e.sequence == seq)
                .collect();
            let mean_dev = cells
                .iter()
                .map(|e| e.trace.mean_deviation_pct)
                .sum::<f64>()
                / cells.len() as f64;
            let mut per_target_deviation = BTreeMap::new();
            let mut levels: Vec<f64> = cells.iter().map(|e| e.target_level).collect();
            levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
            levels.dedup();
            for level in levels {
                let at: Vec<&&TraceEntry> =
                    cells.iter().filter(|e| e.target_level == level).collect();
                let dev =
                    at.iter().map(|e| e.trace.mean_deviation_pct).sum::<f64>() / at.len() as f64;
                per_target_deviation.insert(format!("{level}"), dev);
            }
            let bd = match (anchor_curves.get(seq), curves.get(seq)) {
                (Some(anchor), Some(test)) => bd_rate(anchor, test).ok(),
                _ => None,
            };
            per_sequence.push(SequenceSummary {
                sequence: seq.clone(),
                mean_deviation_pct: mean_dev,
                bd_rate_pct: bd,
                per_target_deviation,
            });
        }
        let mean_deviation_pct = per_sequence
            .iter()
            .map(|s| s.mean_deviation_pct)
            .sum::<f64>()
            / per_sequence.len().max(1) as f64;
        let bds: Vec<f64> = per_sequence.iter().filter_map(|s| s.bd_rate_pct).collect();
        let bd_rate_pct = if bds.is_empty() {
            None
        } else {
            Some(bds.iter().sum::<f64>() / bds.len() as f64)
        };
        summaries.push(MethodSummary {
            method,
            mean_deviation_pct,
            bd_rate_pct,
            per_sequence,
        });
    }
    Ok(summaries)
}

/// Per-sequence RD curves for one method: each target level contributes one
/// point (mean rate, mean PSNR across seeds and frames), sorted by rate.
fn build_curves(
    entries: &[TraceEntry],
    method: MethodLabel,
) -> BTreeMap<String, Vec<RdCurvePoint>> {
    let mut grouped: BTreeMap<(String, String), (f64, f64, usize)> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.method == method) {
        let key = (e.sequence.clone(), format!("{:020.6}", e.target_level));
        let mean_rate = e.trace.total_bits / e.trace.frames.len().max(1) as f64;
        let slot = grouped.entry(key).or_insert((0.0, 0.0, 0));
        slot.0 += mean_rate;
        slot.1 += e.trace.mean_psnr_db;
        slot.2 += 1;
    }
    let mut curves: BTreeMap<String, Vec<RdCurvePoint>> = BTreeMap::new();
    for ((seq, _level), (rate_sum, psnr_sum, n)) in grouped {
        curves.entry(seq).or_default().push(RdCurvePoint {
            rate: rate_sum / n as f64,
            psnr_db: psnr_sum / n as f64,
        });
    }
    for points in curves.values_mut() {
        points.sort_by(|a, b| a.rate.partial_cmp(&b.rate).unwrap());
    }
    curves
}

/// Parse an RD curve from CSV text with `rate,psnr` per row (header optional).
pub fn curve_from_csv(text: &str) -> Result<Vec<RdCurvePoint>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.chars().any(|c| c.is_alphabetic())) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 2 {
            return Err(Error::Parse(format!(
                "row {i}: expected `rate,psnr`, got `{line}`"
            )));
        }
        points.push(RdCurvePoint {
            rate: cols[0]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {i}: {e}")))?,
            psnr_db: cols[1]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {i}: {e}")))?,
        });
    }
    Ok(points)
}

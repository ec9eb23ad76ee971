//! Deterministic simulated variable-rate codec.
//!
//! Each frame carries a ground-truth quality law (logarithmic in rate, with
//! an optional quadratic stress term), log-normal encode noise, and an
//! exponential-decay distortion model. Sequences evolve frame parameters by
//! a seeded AR(1) walk, standing in for real content variation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rq_model::{QualityLevel, RQPoint, Rate};

/// AR(1) pole for frame-parameter drift.
const DRIFT_RHO: f64 = 0.9;

/// Floor keeping drifted alpha strictly positive.
const MIN_ALPHA: f64 = 1e-3;

/// Reference level for the per-frame content descriptor.
const CONTENT_REF_QUALITY: f64 = 35.0;

fn default_pixels() -> u64 {
    1920 * 1080
}

/// Ground-truth behavior of one frame: `Q = alpha*ln(R) + beta + c*ln(R)^2`,
/// log-normal rate noise of width `noise_sigma`, and distortion
/// `d0 * exp(-decay_k * Q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameProfile {
    pub true_alpha: f64,
    pub true_beta: f64,
    /// Quadratic ln-rate term for model-mismatch stress runs; 0 = pure log law.
    #[serde(default)]
    pub curvature: f64,
    pub noise_sigma: f64,
    pub d0: f64,
    pub decay_k: f64,
    #[serde(default = "default_pixels")]
    pub pixels: u64,
}

impl FrameProfile {
    /// A plain logarithmic frame with default distortion model and 1080p size.
    pub fn log_law(alpha: f64, beta: f64, noise_sigma: f64) -> Self {
        Self {
            true_alpha: alpha,
            true_beta: beta,
            curvature: 0.0,
            noise_sigma,
            d0: 500.0,
            decay_k: 0.07,
            pixels: default_pixels(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.true_alpha.is_finite() && self.true_alpha > 0.0) {
            return Err(Error::Domain(format!(
                "true_alpha must be > 0, got {}",
                self.true_alpha
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Domain(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.d0 > 0.0 && self.decay_k > 0.0) {
            return Err(Error::Domain("d0 and decay_k must be > 0".into()));
        }
        if self.pixels == 0 {
            return Err(Error::Domain("pixels must be > 0".into()));
        }
        Ok(())
    }

    /// Ground-truth quality reached at a given rate.
    pub fn true_quality(&self, rate_bits: f64) -> f64 {
        let x = rate_bits.ln();
        self.true_alpha * x + self.true_beta + self.curvature * x * x
    }

    /// Noise-free rate needed to reach a quality level (inverse of
    /// [`Self::true_quality`]).
    pub fn rate_for_quality(&self, q: f64) -> f64 {
        let d = q - self.true_beta;
        let x = if self.curvature == 0.0 {
            d / self.true_alpha
        } else {
            // Root of c*x^2 + alpha*x - d = 0 continuous in c -> 0,
            // rationalized for stability.
            let disc = (self.true_alpha * self.true_alpha + 4.0 * self.curvature * d).max(0.0);
            2.0 * d / (self.true_alpha + disc.sqrt())
        };
        // Cap the exponent so a degenerate profile cannot overflow to inf.
        x.min(690.0).exp()
    }

    /// Distortion produced when encoding at quality `q`.
    pub fn distortion(&self, q: f64) -> f64 {
        self.d0 * (-self.decay_k * q).exp()
    }

    /// Scalar content descriptor exposed to predictors: the log-rate the
    /// frame needs for a fixed reference quality.
    pub fn content_scalar(&self) -> f64 {
        self.rate_for_quality(CONTENT_REF_QUALITY).ln()
    }
}

impl Default for FrameProfile {
    fn default() -> Self {
        Self::log_law(6.0, -20.0, 0.04)
    }
}

/// A named test sequence: per-frame ground truth plus the GOP length that
/// scopes observation windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceProfile {
    pub name: String,
    pub gop_length: usize,
    pub frames: Vec<FrameProfile>,
}

impl SequenceProfile {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Domain(
                "sequence must contain at least one frame".into(),
            ));
        }
        if self.gop_length == 0 {
            return Err(Error::Domain("gop_length must be >= 1".into()));
        }
        for f in &self.frames {
            f.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let profile: Self = serde_json::from_str(s)?;
        profile.validate()?;
        Ok(profile)
    }
}

/// Outcome of encoding one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodeResult {
    pub rate: Rate,
    pub distortion: f64,
    pub quality_used: QualityLevel,
    pub psnr_db: f64,
}

/// Encode one frame at a quality level. Deterministic given the RNG state;
/// one standard-normal draw is consumed per call regardless of sigma.
pub fn encode_frame(profile: &FrameProfile, q: QualityLevel, rng: &mut ChaCha8Rng) -> EncodeResult {
    let z: f64 = StandardNormal.sample(rng);
    let bits = (profile.rate_for_quality(q.value()) * (profile.noise_sigma * z).exp()).min(1e300);
    let distortion = profile.distortion(q.value());
    EncodeResult {
        rate: Rate::from_bits(bits).expect("positive finite rate by construction"),
        distortion,
        quality_used: q,
        psnr_db: 10.0 * (255.0 * 255.0 / distortion).log10(),
    }
}

/// Pre-encode a frame at several quality levels and return the observed
/// (R, Q) points — the multi-pass probing baseline's input.
pub fn multi_pass_probe(
    profile: &FrameProfile,
    levels: &[QualityLevel],
    rng: &mut ChaCha8Rng,
) -> Vec<RQPoint> {
    levels
        .iter()
        .map(|&q| {
            let enc = encode_frame(profile, q, rng);
            RQPoint {
                rate: enc.rate,
                quality: enc.quality_used,
            }
        })
        .collect()
}

/// Generate a synthetic sequence whose per-frame (alpha, beta) follow a
/// seeded AR(1) walk around the base profile.
pub fn generate_sequence(
    seed: u64,
    n_frames: usize,
    drift: f64,
    base: &FrameProfile,
) -> SequenceProfile {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean_alpha = base.true_alpha;
    let mean_beta = base.true_beta;
    let mut alpha = mean_alpha;
    let mut beta = mean_beta;
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let xi_a: f64 = StandardNormal.sample(&mut rng);
        let xi_b: f64 = StandardNormal.sample(&mut rng);
        if t == 0 {
            alpha = mean_alpha + drift * xi_a;
            beta = mean_beta + drift * xi_b;
        } else {
            alpha = mean_alpha + DRIFT_RHO * (alpha - mean_alpha) + drift * xi_a;
            beta = mean_beta + DRIFT_RHO * (beta - mean_beta) + drift * xi_b;
        }
        alpha = alpha.max(MIN_ALPHA);
        frames.push(FrameProfile {
            true_alpha: alpha,
            true_beta: beta,
            ..base.clone()
        });
    }
    SequenceProfile {
        name: format!("generated-{seed}"),
        gop_length: 32,
        frames,
    }
}

/// Draw a uniform quality level in `[lo, hi]`.
pub fn uniform_quality(lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> QualityLevel {
    let v: f64 = rng.gen_range(lo..=hi);
    QualityLevel::new(v).expect("uniform draw within valid range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rq_model::{fit_least_squares, ModelKind};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn q(v: f64) -> QualityLevel {
        QualityLevel::new(v).unwrap()
    }

    #[test]
    fn noiseless_encode_inverts_true_law() {
        let p = FrameProfile::log_law(6.0, -20.0, 0.0);
        let enc = encode_frame(&p, q(10.0), &mut rng(1));
        assert!((enc.rate.bits() - 5.0f64.exp()).abs() < 1e-9);
        assert!((enc.rate.bits() - 148.4131591).abs() < 1e-6);
    }

    #[test]
    fn noiseless_encode_then_true_quality_is_identity() {
        let p = FrameProfile::log_law(4.5, -12.0, 0.0);
        for qv in [0.0, 7.5, 31.0, 63.0] {
            let enc = encode_frame(&p, q(qv), &mut rng(2));
            assert!((p.true_quality(enc.rate.bits()) - qv).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_noise_has_expected_log_mean() {
        // sigma = 0.1, 10^4 encodes at fixed q: sample mean of ln(rate)
        // within 3*sigma/100 of (q - beta)/alpha.
        let p = FrameProfile::log_law(6.0, -20.0, 0.1);
        let mut r = rng(3);
        let n = 10_000;
        let mean_ln = (0..n)
            .map(|_| encode_frame(&p, q(30.0), &mut r).rate.ln())
            .sum::<f64>()
            / n as f64;
        let expected = (30.0 + 20.0) / 6.0;
        assert!(
            (mean_ln - expected).abs() < 3.0 * 0.1 / 100.0,
            "mean {mean_ln} vs {expected}"
        );
    }

    #[test]
    fn encode_is_deterministic_per_seed() {
        let p = FrameProfile::default();
        let a = encode_frame(&p, q(20.0), &mut rng(7));
        let b = encode_frame(&p, q(20.0), &mut rng(7));
        assert_eq!(a.rate.bits(), b.rate.bits());
    }

    #[test]
    fn noiseless_rate_strictly_increasing_in_quality() {
        let p = FrameProfile::log_law(5.0, -15.0, 0.0);
        let mut prev = 0.0;
        for i in 0..64 {
            let enc = encode_frame(&p, q(i as f64), &mut rng(4));
            assert!(enc.rate.bits() > prev);
            prev = enc.rate.bits();
        }
    }

    #[test]
    fn psnr_strictly_increasing_in_quality() {
        let p = FrameProfile::default();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..64 {
            let enc = encode_frame(&p, q(i as f64), &mut rng(5));
            assert!(enc.psnr_db > prev);
            prev = enc.psnr_db;
        }
    }

    #[test]
    fn probe_recovers_law_when_noiseless() {
        let p = FrameProfile::log_law(7.0, -25.0, 0.0);
        let levels = [q(10.0), q(17.0), q(43.0), q(60.0)];
        let pts = multi_pass_probe(&p, &levels, &mut rng(6));
        assert_eq!(pts.len(), 4);
        let fit = fit_least_squares(&pts, ModelKind::Logarithmic).unwrap();
        assert!((fit.alpha - 7.0).abs() < 1e-9);
        assert!((fit.beta + 25.0).abs() < 1e-9);
    }

    #[test]
    fn probe_single_level_yields_single_point() {
        let p = FrameProfile::default();
        let pts = multi_pass_probe(&p, &[q(30.0)], &mut rng(8));
        assert_eq!(pts.len(), 1);
    }

    #[test]
    fn probe_fit_monte_carlo_matches_standard_error() {
        // sigma = 0.05 at the default grid; fitted alpha across 100 seeds
        // should track truth within the slope's standard error.
        let p = FrameProfile::log_law(6.0, -20.0, 0.05);
        let levels = [q(10.0), q(17.0), q(43.0), q(60.0)];
        let xs: Vec<f64> = levels.iter().map(|l| (l.value() + 20.0) / 6.0).collect();
        let xbar = xs.iter().sum::<f64>() / 4.0;
        let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
        // Noise enters ln-rate; equivalent quality-domain sigma is alpha*sigma.
        let se_single = 6.0 * 0.05 / sxx.sqrt();

        let mut fits = Vec::new();
        for seed in 0..100 {
            let pts = multi_pass_probe(&p, &levels, &mut rng(1000 + seed));
            let fit = fit_least_squares(&pts, ModelKind::Logarithmic).unwrap();
            fits.push(fit.alpha);
        }
        let within = fits
            .iter()
            .filter(|a| (**a - 6.0).abs() < 3.0 * se_single)
            .count();
        assert!(within >= 95, "only {within}/100 fits within 3 SE");
        let mean = fits.iter().sum::<f64>() / 100.0;
        assert!(
            (mean - 6.0).abs() < 4.0 * se_single / 10.0,
            "mean alpha {mean} too far from 6"
        );
    }

    #[test]
    fn zero_drift_replicates_base() {
        let base = FrameProfile::default();
        let seq = generate_sequence(42, 16, 0.0, &base);
        assert_eq!(seq.frames.len(), 16);
        for f in &seq.frames {
            assert_eq!(f.true_alpha, base.true_alpha);
            assert_eq!(f.true_beta, base.true_beta);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let base = FrameProfile::default();
        let a = generate_sequence(9, 96, 0.2, &base);
        let b = generate_sequence(9, 96, 0.2, &base);
        assert_eq!(a, b);
        let c = generate_sequence(10, 96, 0.2, &base);
        assert_ne!(a, c);
    }

    #[test]
    fn drift_walk_has_ar1_autocorrelation() {
        // Lag-1 sample autocorrelation of alpha_t averaged over 50 seeds
        // should sit near the AR(1) pole 0.9 (within 0.1).
        let base = FrameProfile::default();
        let mut acs = Vec::new();
        for seed in 0..50 {
            let seq = generate_sequence(seed, 96, 0.2, &base);
            let alphas: Vec<f64> = seq.frames.iter().map(|f| f.true_alpha).collect();
            let mean = alphas.iter().sum::<f64>() / alphas.len() as f64;
            let denom: f64 = alphas.iter().map(|a| (a - mean).powi(2)).sum();
            let numer: f64 = alphas
                .windows(2)
                .map(|w| (w[0] - mean) * (w[1] - mean))
                .sum();
            acs.push(numer / denom);
        }
        let mean_ac = acs.iter().sum::<f64>() / acs.len() as f64;
        assert!(
            (mean_ac - 0.9).abs() < 0.1,
            "mean lag-1 autocorrelation {mean_ac}"
        );
    }

    #[test]
    fn curvature_stress_law_inverts() {
        let mut p = FrameProfile::log_law(6.0, -20.0, 0.0);
        p.curvature = 0.15;
        for qv in [5.0, 20.0, 45.0, 60.0] {
            let r = p.rate_for_quality(qv);
            assert!((p.true_quality(r) - qv).abs() < 1e-9, "q = {qv}");
        }
    }

    #[test]
    fn sequence_json_round_trip() {
        let seq = generate_sequence(3, 8, 0.1, &FrameProfile::default());
        let json = seq.to_json().unwrap();
        let back = SequenceProfile::from_json(&json).unwrap();
        assert_eq!(seq, back);
    }

    #[test]
    fn sequence_validation_rejects_bad_profiles() {
        let mut seq = generate_sequence(3, 4, 0.0, &FrameProfile::default());
        seq.gop_length = 0;
        assert!(seq.validate().is_err());
        let empty = SequenceProfile {
            name: "x".into(),
            gop_length: 32,
            frames: vec![],
        };
        assert!(empty.validate().is_err());
    }
}

//! Python bindings for the rate-quality rate-control engine.
//!
//! Exposes the model-fitting primitives, the simulated codec, the closed
//! control loop, and the evaluation metrics. Build with
//! `cargo build -p rqsim-python --release` and import the produced cdylib
//! as `rqsim_py` (see python/smoke_test.py).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rqsim::codec_sim::{encode_frame, generate_sequence, FrameProfile, SequenceProfile};
use rqsim::estimation::EstimatorVariant;
use rqsim::metrics::{self, RdCurvePoint};
use rqsim::predictor::{OraclePredictor, RatePredictor, SyntheticNoisyPredictor};
use rqsim::rate_control::{run_closed_loop, RateControlConfig, SequenceTrace};
use rqsim::rq_model::{self, ModelKind, QualityLevel, RQPoint, Rate};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    match kind {
        "linear" => Ok(ModelKind::Linear),
        "exponential" => Ok(ModelKind::Exponential),
        "logarithmic" => Ok(ModelKind::Logarithmic),
        other => Err(PyValueError::new_err(format!(
            "unknown model kind `{other}` (expected linear/exponential/logarithmic)"
        ))),
    }
}

fn to_points(pairs: Vec<(f64, f64)>) -> PyResult<Vec<RQPoint>> {
    pairs
        .into_iter()
        .map(|(rate, quality)| RQPoint::new(rate, quality).map_err(err))
        .collect()
}

/// Least-squares fit of (alpha, beta) on (rate_bits, quality) pairs.
#[pyfunction]
fn fit_least_squares(points: Vec<(f64, f64)>, kind: &str) -> PyResult<(f64, f64)> {
    let fitted =
        rq_model::fit_least_squares(&to_points(points)?, parse_kind(kind)?).map_err(err)?;
    Ok((fitted.alpha, fitted.beta))
}

/// Evaluate a fitted model at a rate; unclamped.
#[pyfunction]
fn eval_quality(alpha: f64, beta: f64, kind: &str, rate_bits: f64) -> PyResult<f64> {
    let params = rq_model::RQParams::new(alpha, beta, parse_kind(kind)?);
    let rate = Rate::from_bits(rate_bits).map_err(err)?;
    Ok(rq_model::eval_quality(&params, rate))
}

/// Coefficient of determination of a fitted model on the given points.
#[pyfunction]
fn r_squared(points: Vec<(f64, f64)>, alpha: f64, beta: f64, kind: &str) -> PyResult<f64> {
    let params = rq_model::RQParams::new(alpha, beta, parse_kind(kind)?);
    rq_model::r_squared(&to_points(points)?, &params).map_err(err)
}

/// Log-linear quality-to-lambda mapping.
#[pyfunction]
#[pyo3(signature = (q, lambda_min=85.0, lambda_max=840.0, q_num=64))]
fn lambda_from_quality(q: f64, lambda_min: f64, lambda_max: f64, q_num: u32) -> PyResult<f64> {
    let map = rq_model::LambdaMap::new(lambda_min, lambda_max, q_num).map_err(err)?;
    let level = QualityLevel::new(q).map_err(err)?;
    rq_model::lambda_from_quality(&map, level).map_err(err)
}

/// Absolute percentage deviation of an encoded from a target bitrate.
#[pyfunction]
fn rate_deviation_pct(r_target: f64, r_enc: f64) -> PyResult<f64> {
    metrics::rate_deviation_pct(r_target, r_enc).map_err(err)
}

/// Mean absolute percentage error of predicted bitrates, normalized by the
/// prediction. Takes (encoded, predicted) pairs.
#[pyfunction]
fn predictor_accuracy_pct(pairs: Vec<(f64, f64)>) -> PyResult<f64> {
    metrics::predictor_accuracy_pct(&pairs).map_err(err)
}

/// Bjontegaard delta-rate in percent between two (rate, psnr_db) curves.
#[pyfunction]
fn bd_rate(anchor: Vec<(f64, f64)>, test: Vec<(f64, f64)>) -> PyResult<f64> {
    let curve = |pairs: Vec<(f64, f64)>| -> Vec<RdCurvePoint> {
        pairs
            .into_iter()
            .map(|(rate, psnr_db)| RdCurvePoint { rate, psnr_db })
            .collect()
    };
    metrics::bd_rate(&curve(anchor), &curve(test)).map_err(err)
}

/// A synthetic test sequence with per-frame ground-truth rate-quality laws.
#[pyclass]
#[derive(Clone)]
struct Sequence {
    profile: SequenceProfile,
}

#[pymethods]
impl Sequence {
    /// Generate a drifting sequence around a base logarithmic law.
    #[new]
    #[pyo3(signature = (seed, n_frames=96, drift=0.01, alpha=6.0, beta=-20.0, noise_sigma=0.04))]
    fn new(
        seed: u64,
        n_frames: usize,
        drift: f64,
        alpha: f64,
        beta: f64,
        noise_sigma: f64,
    ) -> PyResult<Self> {
        let base = FrameProfile::log_law(alpha, beta, noise_sigma);
        base.validate().map_err(err)?;
        let profile = generate_sequence(seed, n_frames, drift, &base);
        Ok(Self { profile })
    }

    /// Load a sequence profile from its JSON serialization.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            profile: SequenceProfile::from_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.profile.to_json().map_err(err)
    }

    fn frame_count(&self) -> usize {
        self.profile.frames.len()
    }

    /// Encode one frame at a quality level; returns (rate_bits, psnr_db).
    fn encode(&self, frame: usize, q: f64, seed: u64) -> PyResult<(f64, f64)> {
        let profile = self
            .profile
            .frames
            .get(frame)
            .ok_or_else(|| PyValueError::new_err(format!("frame {frame} out of range")))?;
        let level = QualityLevel::new(q).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = encode_frame(profile, level, &mut rng);
        Ok((enc.rate.bits(), enc.psnr_db))
    }

    fn __repr__(&self) -> String {
        format!(
            "Sequence(name='{}', frames={}, gop={})",
            self.profile.name,
            self.profile.frames.len(),
            self.profile.gop_length
        )
    }
}

/// The per-frame log of one controlled run.
#[pyclass]
struct Trace {
    trace: SequenceTrace,
}

#[pymethods]
impl Trace {
    fn mean_deviation_pct(&self) -> f64 {
        self.trace.mean_deviation_pct
    }

    fn total_bits(&self) -> f64 {
        self.trace.total_bits
    }

    fn mean_psnr_db(&self) -> f64 {
        self.trace.mean_psnr_db
    }

    fn __len__(&self) -> usize {
        self.trace.frames.len()
    }

    /// Per-frame records as a list of dicts.
    fn frames<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mut out = Vec::with_capacity(self.trace.frames.len());
        for f in &self.trace.frames {
            let d = PyDict::new(py);
            d.set_item("t", f.t)?;
            d.set_item("r_target", f.r_target)?;
            d.set_item("q_pred", f.q_pred)?;
            d.set_item("r_enc", f.r_enc)?;
            d.set_item("psnr_db", f.psnr_db)?;
            d.set_item("alpha", f.alpha)?;
            d.set_item("beta", f.beta)?;
            d.set_item("deviation_pct", f.deviation_pct)?;
            d.set_item("fell_back", f.fell_back)?;
            out.push(d);
        }
        Ok(out)
    }

    fn to_csv(&self) -> String {
        self.trace.to_csv()
    }
}

/// Run the closed control loop over a sequence at `r_s` bits per frame.
///
/// `variant` is one of fusion, predictor_only, history_only, adaptive_lms,
/// four_pass_oracle. `predictor` is `oracle` or `synthetic`;
/// `predictor_mean_abs_dev` calibrates the synthetic noise profile.
#[pyfunction]
#[pyo3(signature = (sequence, r_s, variant="fusion", seed=1, predictor="synthetic", predictor_mean_abs_dev=0.16))]
fn closed_loop(
    sequence: &Sequence,
    r_s: f64,
    variant: &str,
    seed: u64,
    predictor: &str,
    predictor_mean_abs_dev: f64,
) -> PyResult<Trace> {
    let variant = EstimatorVariant::parse(variant).map_err(err)?;
    let cfg = RateControlConfig::new(variant);
    let boxed: Box<dyn RatePredictor> = match predictor {
        "oracle" => Box::new(OraclePredictor),
        "synthetic" => {
            Box::new(SyntheticNoisyPredictor::calibrated(predictor_mean_abs_dev).map_err(err)?)
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown predictor `{other}` (expected oracle/synthetic)"
            )))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace =
        run_closed_loop(&sequence.profile, r_s, &cfg, boxed.as_ref(), &mut rng).map_err(err)?;
    Ok(Trace { trace })
}

#[pymodule]
fn rqsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Sequence>()?;
    m.add_class::<Trace>()?;
    m.add_function(wrap_pyfunction!(fit_least_squares, m)?)?;
    m.add_function(wrap_pyfunction!(eval_quality, m)?)?;
    m.add_function(wrap_pyfunction!(r_squared, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_from_quality, m)?)?;
    m.add_function(wrap_pyfunction!(rate_deviation_pct, m)?)?;
    m.add_function(wrap_pyfunction!(predictor_accuracy_pct, m)?)?;
    m.add_function(wrap_pyfunction!(bd_rate, m)?)?;
    m.add_function(wrap_pyfunction!(closed_loop, m)?)?;
    Ok(())
}

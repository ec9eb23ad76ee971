//! Rate-quality modeling and closed-loop rate control for a simulated
//! variable-rate video codec.
//!
//! The crate models each frame's rate-quality relationship as
//! `Q = alpha * ln(R) + beta`, fuses prior (R, Q) points from a pluggable
//! predictor with the observed encodes of the current GOP to re-estimate
//! `(alpha, beta)` per frame, and drives a sliding-window bit-allocation
//! loop against a deterministic simulated codec. Competing estimators
//! (prior-only, history-only, adaptive LMS, multi-pass probing) run under
//! the same loop for comparison.

pub mod cli;
pub mod codec_sim;
pub mod error;
pub mod estimation;
mod linalg;
pub mod metrics;
pub mod predictor;
pub mod rate_control;
pub mod rq_model;

pub use error::{Error, Result};

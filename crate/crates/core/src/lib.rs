//! Nonparametric sequential changepoint detection with e-detectors.
//!
//! A baseline increment `L^λ` is a nonnegative per-observation factor whose
//! conditional expectation is at most one under every pre-change law.
//! Shiryaev–Roberts (SR) and CUSUM e-detectors aggregate products of these
//! increments over candidate change times, and a detector that stops once its
//! statistic reaches `1/α` has average run length at least `1/α`.
//!
//! * [`psi`]: the convex functions ψ and ψ* indexing exponential baselines.
//! * [`increments`]: baseline increments for Bernoulli and bounded data.
//! * [`detectors`]: SR/CUSUM recursions, finite and adaptive mixtures, stopping.
//! * [`calibration`]: thresholds, baseline grids and adaptive weights.
//! * [`bounds`]: worst-average-delay bounds.
//! * [`simulate`]: seeded streams and Monte-Carlo run length and delay.
//! * [`cli`]: the `edetect` command-line tool.

// Negated float comparisons such as `!(x > 0.0)` are used to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod calibration;
pub mod cli;
pub mod detectors;
pub mod error;
pub mod increments;
pub mod numeric;
pub mod psi;
pub mod simulate;

pub use calibration::{
    build_adaptive_calibration, compute_baseline, compute_threshold, AdaptiveCalibration, MixtureCalibration,
};
pub use detectors::{
    run_until_stop, AdaptiveDetector, Detector, DetectorState, MixtureDetector, Outcome, RunResult, StopMode, StopRule,
};
pub use error::{Error, ErrorClass, Result};
pub use increments::{IncrementKind, IncrementSpec};
pub use psi::PsiFamily;

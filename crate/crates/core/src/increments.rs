//! Baseline increments: per-observation multiplicative factors whose
//! conditional expectation is at most one under every pre-change law.
//!
//! Every increment is produced as its natural logarithm; detectors never
//! exponentiate running products.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psi::PsiFamily;

/// The rounded mean bound used for the normalized Plus-Minus example,
/// `(−1 + 80) / 160 = 0.49375` rounded to three decimals.
pub const PLUS_MINUS_MEAN_BOUND_ROUNDED: f64 = 0.494;

/// Which increment family an [`IncrementSpec`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IncrementKind {
    /// `exp{λ(x − p0) − ψ_B(λ)}` for binary observations.
    ExpBernoulli { p0: f64 },
    /// `exp{λ s − ψ_E(λ) s²}` with `s = x/m − 1`, for `x ∈ [0, 1]`.
    ExpBounded { mean_bound: f64 },
    /// `1 + λ(x/m − 1)` for `x ∈ [0, 1]`; dominates `ExpBounded` pointwise.
    ExactBounded { mean_bound: f64 },
    /// `L ≡ 1`, the trivial increment (any finite observation).
    Unit,
}

impl IncrementKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            IncrementKind::ExpBernoulli { p0 } => PsiFamily::bernoulli(p0).map(|_| ()),
            IncrementKind::ExpBounded { mean_bound } | IncrementKind::ExactBounded { mean_bound } => {
                if mean_bound > 0.0 && mean_bound < 1.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("mean bound must lie in (0,1), got {mean_bound}")))
                }
            }
            IncrementKind::Unit => Ok(()),
        }
    }

    /// The ψ family whose calibration drives this increment. `ExactBounded`
    /// is calibrated through its sub-exponential lower bound.
    pub fn psi_family(&self) -> Option<PsiFamily> {
        match *self {
            IncrementKind::ExpBernoulli { p0 } => Some(PsiFamily::Bernoulli { p0 }),
            IncrementKind::ExpBounded { .. } | IncrementKind::ExactBounded { .. } => Some(PsiFamily::SubExponential),
            IncrementKind::Unit => None,
        }
    }

    /// The sufficient maps `(s(x), v(x))` of the exponential form.
    pub fn sufficient_stats(&self, x: f64) -> Result<(f64, f64)> {
        self.check_observation(x)?;
        Ok(match *self {
            IncrementKind::ExpBernoulli { p0 } => (x - p0, 1.0),
            IncrementKind::ExpBounded { mean_bound } | IncrementKind::ExactBounded { mean_bound } => {
                let s = x / mean_bound - 1.0;
                (s, s * s)
            }
            IncrementKind::Unit => (0.0, 0.0),
        })
    }

    pub fn check_observation(&self, x: f64) -> Result<()> {
        match self {
            IncrementKind::ExpBernoulli { .. } => {
                if x == 0.0 || x == 1.0 {
                    Ok(())
                } else {
                    Err(Error::data(format!("Bernoulli observation must be 0 or 1, got {x}")))
                }
            }
            IncrementKind::ExpBounded { .. } | IncrementKind::ExactBounded { .. } => {
                if (0.0..=1.0).contains(&x) {
                    Ok(())
                } else {
                    Err(Error::data(format!("bounded observation must lie in [0,1], got {x}")))
                }
            }
            IncrementKind::Unit => {
                if x.is_finite() {
                    Ok(())
                } else {
                    Err(Error::data(format!("observation must be finite, got {x}")))
                }
            }
        }
    }
}

/// One parametrized baseline increment `L^λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementSpec {
    pub kind: IncrementKind,
    pub lambda: f64,
    /// ψ(λ), precomputed; zero for `ExactBounded` and `Unit`.
    pub psi_at_lambda: f64,
}

impl IncrementSpec {
    pub fn new(kind: IncrementKind, lambda: f64) -> Result<Self> {
        kind.validate()?;
        let psi_at_lambda = match kind {
            IncrementKind::ExpBernoulli { .. } => {
                if !(lambda > 0.0) {
                    return Err(Error::Domain(format!("Bernoulli increment needs λ > 0, got {lambda}")));
                }
                kind.psi_family().expect("exponential kind").psi(lambda)?
            }
            IncrementKind::ExpBounded { .. } | IncrementKind::ExactBounded { .. } => {
                if !(lambda > 0.0 && lambda < 1.0) {
                    return Err(Error::Domain(format!(
                        "bounded increment needs λ ∈ (0,1), got {lambda}"
                    )));
                }
                match kind {
                    IncrementKind::ExpBounded { .. } => PsiFamily::SubExponential.psi(lambda)?,
                    _ => 0.0,
                }
            }
            IncrementKind::Unit => 0.0,
        };
        Ok(Self {
            kind,
            lambda,
            psi_at_lambda,
        })
    }

    pub fn unit() -> Self {
        Self {
            kind: IncrementKind::Unit,
            lambda: 0.0,
            psi_at_lambda: 0.0,
        }
    }

    /// `log L^λ(x)`.
    #[inline]
    pub fn log_increment(&self, x: f64) -> Result<f64> {
        self.kind.check_observation(x)?;
        Ok(match self.kind {
            IncrementKind::ExpBernoulli { p0 } => self.lambda * (x - p0) - self.psi_at_lambda,
            IncrementKind::ExpBounded { mean_bound } => {
                let s = x / mean_bound - 1.0;
                self.lambda * s - self.psi_at_lambda * s * s
            }
            IncrementKind::ExactBounded { mean_bound } => (self.lambda * (x / mean_bound - 1.0)).ln_1p(),
            IncrementKind::Unit => 0.0,
        })
    }
}

/// Bounds `(Δ_L, Δ_U)` on the mean-to-variance ratio Δ* for bounded data with
/// pre-change mean at most `m` and a post-change mean gap of at least `delta`.
pub fn delta_bounds_bounded(m: f64, delta: f64) -> Result<(f64, f64)> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::Config(format!("mean bound must lie in (0,1), got {m}")));
    }
    if !(delta > 0.0 && delta <= 1.0 - m) {
        return Err(Error::Config(format!(
            "mean gap must lie in (0, {}], got {delta}",
            1.0 - m
        )));
    }
    let lower = m * delta / ((1.0 - m) * (1.0 - m));
    let upper = m * (1.0 - m) / (delta * delta);
    Ok((lower, upper))
}

/// Affine map of `[lo, hi]` onto `[0, 1]`.
pub fn normalize_bounded(x_raw: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!(
            "normalization bounds must satisfy lo < hi, got ({lo}, {hi})"
        )));
    }
    if !(lo..=hi).contains(&x_raw) {
        return Err(Error::data(format!("raw value {x_raw} outside [{lo}, {hi}]")));
    }
    Ok((x_raw - lo) / (hi - lo))
}

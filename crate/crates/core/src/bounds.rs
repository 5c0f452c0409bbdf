//! Upper bounds on the worst average detection delay, and an upper bound on
//! the calibrated threshold.
//!
//! All delay bounds have the shape `g / D + V / D² + c`, where `D` is the
//! expected log-increment of the oracle baseline under the post-change law
//! and `V` the variance of a baseline log-increment.

use serde::{Deserialize, Serialize};

use crate::calibration::{AdaptiveCalibration, MixtureCalibration};
use crate::error::{Error, Result};
use crate::psi::{bernoulli_kl, PsiFamily};

/// An i.i.d. post-change law, summarized by what the bounds need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum PostChangeLaw {
    Bernoulli {
        q: f64,
    },
    /// Moments about the pre-change mean bound `m`: `E(X−m)^j` for j = 2, 3, 4.
    /// The variance term needs the third and fourth moments.
    Bounded {
        mean_bound: f64,
        mean: f64,
        second: f64,
        third: Option<f64>,
        fourth: Option<f64>,
    },
}

impl PostChangeLaw {
    /// Moments of a law supported on finitely many points.
    pub fn bounded_from_support(mean_bound: f64, support: &[f64], probs: &[f64]) -> Result<Self> {
        if support.len() != probs.len() || support.is_empty() {
            return Err(Error::Config(
                "support and probabilities must be non-empty and of equal length".into(),
            ));
        }
        let central = |j: i32| {
            support
                .iter()
                .zip(probs)
                .map(|(x, p)| p * (x - mean_bound).powi(j))
                .sum::<f64>()
        };
        Ok(PostChangeLaw::Bounded {
            mean_bound,
            mean: support.iter().zip(probs).map(|(x, p)| p * x).sum(),
            second: central(2),
            third: Some(central(3)),
            fourth: Some(central(4)),
        })
    }
}

/// The oracle quantities for a post-change law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostChangeSummary {
    pub delta_star: f64,
    pub lambda_star: f64,
    /// `D(Q‖P) = E_Q log L^{(λ*)}`
    pub divergence: f64,
    /// `Var_Q log L^{(λ*)}`, when the law's moments determine it.
    pub variance: Option<f64>,
}

fn family_mismatch(family: PsiFamily, law: &PostChangeLaw) -> Error {
    Error::Config(format!("post-change law {law:?} does not match family {family:?}"))
}

/// `Var_Q log L^{(λ)}` for a baseline increment of `family`.
pub fn log_increment_variance(family: PsiFamily, law: &PostChangeLaw, lambda: f64) -> Result<Option<f64>> {
    match (family, *law) {
        (PsiFamily::Bernoulli { .. }, PostChangeLaw::Bernoulli { q }) => Ok(Some(lambda * lambda * q * (1.0 - q))),
        (
            PsiFamily::SubExponential,
            PostChangeLaw::Bounded {
                mean_bound: m,
                mean,
                second,
                third,
                fourth,
            },
        ) => {
            let (Some(third), Some(fourth)) = (third, fourth) else {
                return Ok(None);
            };
            // log L = λ s − ψ(λ) s² with s = (X − m)/m
            let psi = family.psi(lambda)?;
            let a1 = (mean - m) / m;
            let a2 = second / (m * m);
            let a3 = third / m.powi(3);
            let a4 = fourth / m.powi(4);
            let first = lambda * a1 - psi * a2;
            let raw2 = lambda * lambda * a2 - 2.0 * lambda * psi * a3 + psi * psi * a4;
            Ok(Some((raw2 - first * first).max(0.0)))
        }
        _ => Err(family_mismatch(family, law)),
    }
}

pub fn divergence_and_variance(family: PsiFamily, law: &PostChangeLaw) -> Result<PostChangeSummary> {
    family.validate()?;
    match (family, *law) {
        (PsiFamily::Bernoulli { p0 }, PostChangeLaw::Bernoulli { q }) => {
            if !(q > p0) {
                return Err(Error::Domain(format!("no detectable change: q={q} ≤ p0={p0}")));
            }
            if !(q < 1.0) {
                return Err(Error::Domain(format!("post-change q must be below 1, got {q}")));
            }
            let delta_star = q - p0;
            let lambda_star = family.grad_conjugate(delta_star)?;
            Ok(PostChangeSummary {
                delta_star,
                lambda_star,
                divergence: bernoulli_kl(q, p0),
                variance: log_increment_variance(family, law, lambda_star)?,
            })
        }
        (
            PsiFamily::SubExponential,
            PostChangeLaw::Bounded {
                mean_bound: m,
                mean,
                second,
                ..
            },
        ) => {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::Domain(format!("mean bound must lie in (0,1), got {m}")));
            }
            if !(second > 0.0) {
                return Err(Error::Domain(format!(
                    "second moment about m must be positive, got {second}"
                )));
            }
            let mu = (mean - m) / m;
            let sigma2 = second / (m * m);
            if !(mu > 0.0) {
                return Err(Error::Domain(format!("no detectable change: mean {mean} ≤ bound {m}")));
            }
            let delta_star = mu / sigma2;
            let lambda_star = family.grad_conjugate(delta_star)?;
            Ok(PostChangeSummary {
                delta_star,
                lambda_star,
                divergence: sigma2 * family.conjugate(delta_star)?,
                variance: log_increment_variance(family, law, lambda_star)?,
            })
        }
        _ => Err(family_mismatch(family, law)),
    }
}

fn check_dv(d: f64, v: f64) -> Result<()> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!(
            "divergence must be positive and finite, got {d}"
        )));
    }
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!(
            "variance must be finite and nonnegative, got {v}"
        )));
    }
    Ok(())
}

/// `g/D + V/D² + 1`.
pub fn delay_bound_lorden(g: f64, d: f64, v: f64) -> Result<f64> {
    if !(g > 0.0) || !g.is_finite() {
        return Err(Error::Domain(format!("threshold must be positive and finite, got {g}")));
    }
    check_dv(d, v)?;
    Ok(g / d + v / (d * d) + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundRegime {
    Lorden,
    WellSeparated,
    NoSepCaseHigh,
    NoSepCaseMid,
    NoSepCaseLow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBoundReport {
    pub regime: BoundRegime,
    pub bound_value: f64,
    pub leading: f64,
    pub variance_term: f64,
    pub constant_term: f64,
    /// Scheduled index `K*` used in the low no-separation case.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k_star: Option<usize>,
}

impl DelayBoundReport {
    fn new(regime: BoundRegime, leading: f64, variance_term: f64, constant_term: f64) -> Self {
        Self {
            regime,
            bound_value: leading + variance_term + constant_term,
            leading,
            variance_term,
            constant_term,
            k_star: None,
        }
    }
}

/// `g_α/D + V/D² + 1` for a calibrated finite mixture.
pub fn delay_bound_well_separated(cal: &MixtureCalibration, d: f64, v: f64) -> Result<DelayBoundReport> {
    check_dv(d, v)?;
    let regime = if cal.single_baseline {
        BoundRegime::Lorden
    } else {
        BoundRegime::WellSeparated
    };
    Ok(DelayBoundReport::new(regime, cal.g_alpha / d, v / (d * d), 1.0))
}

/// `inf_{η>1} η [log(1/α) + log(1 + ⌈log_η(D_U/D_L)⌉)]`.
///
/// On each piece where the ceiling equals `k` the objective increases in η,
/// so the infimum is attained at a breakpoint `η = (D_U/D_L)^{1/k}`.
pub fn g_alpha_upper_bound(alpha: f64, d_lower: f64, d_upper: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("α must lie in (0,1), got {alpha}")));
    }
    if !(d_lower > 0.0 && d_lower < d_upper && d_upper.is_finite()) {
        return Err(Error::Domain(format!(
            "need 0 < D_L < D_U, got D_L={d_lower}, D_U={d_upper}"
        )));
    }
    let base = -alpha.ln();
    let log_ratio = (d_upper / d_lower).ln();
    let mut best = f64::INFINITY;
    let mut k = 1usize;
    loop {
        let tail = base + ((k + 1) as f64).ln();
        if tail >= best {
            return Ok(best);
        }
        best = best.min((log_ratio / k as f64).exp() * tail);
        k += 1;
    }
}

/// Three-case bound for the adaptive procedure, selected by where Δ* falls
/// relative to `(Δ_L, Δ_0)`.
pub fn delay_bound_no_separation(cal: &AdaptiveCalibration, law: &PostChangeLaw) -> Result<DelayBoundReport> {
    let family = cal.family();
    let summary = divergence_and_variance(family, law)?;
    let need = |v: Option<f64>| {
        v.ok_or_else(|| Error::Config("variance term needs the third and fourth moments of the post-change law".into()))
    };
    let d = summary.divergence;
    let delta_star = summary.delta_star;
    let g = cal.g_core();
    if delta_star >= cal.delta_zero() {
        let v0 = need(log_increment_variance(family, law, cal.core.lambda_upper())?)?;
        check_dv(d, v0)?;
        let ratio = family.conjugate(delta_star)? / cal.d_zero;
        return Ok(DelayBoundReport::new(
            BoundRegime::NoSepCaseHigh,
            g / d * ratio,
            v0 / (d * d) * ratio * ratio,
            1.0,
        ));
    }
    let v = need(summary.variance)?;
    check_dv(d, v)?;
    if delta_star > cal.delta_lower() {
        return Ok(DelayBoundReport::new(
            BoundRegime::NoSepCaseMid,
            g / d,
            v / (d * d),
            1.0,
        ));
    }
    let k_star = scheduled_k_star(cal, family.conjugate(delta_star)?)?;
    let g_star = cal.scheduled_threshold(k_star);
    let level_ratio = cal.core.d_lower / family.conjugate(delta_star)?;
    let constant = (level_ratio * g_star / g).powf(1.0 / cal.schedule_density);
    let mut report = DelayBoundReport::new(BoundRegime::NoSepCaseLow, g_star / d, v / (d * d), constant);
    report.k_star = Some(k_star);
    Ok(report)
}

/// Smallest value `K(j)` of the schedule whose component has `λ_{K(j)} < λ*`,
/// i.e. whose conjugate level falls strictly below `ψ*(Δ*)`.
fn scheduled_k_star(cal: &AdaptiveCalibration, level_star: f64) -> Result<usize> {
    let base = cal.base_count();
    let mut k = base + 1;
    while cal.scheduled_level(k) >= level_star {
        k += 1;
        if k - base > 10_000_000 {
            return Err(Error::Numeric(
                "no scheduled component below the post-change level".into(),
            ));
        }
    }
    // K(j) ≥ k ⇔ density·log_η j > k − K_L − 1
    let eta = cal.eta();
    let m = cal.schedule_density;
    let t = (k - base - 1) as f64;
    let j = ((t / m) * eta.ln()).exp().floor() + 1.0;
    let mut k_star = base + (m * j.ln() / eta.ln()).ceil() as usize;
    // guard against rounding at integral breakpoints
    if k_star < k {
        let j = j + 1.0;
        k_star = base + (m * j.ln() / eta.ln()).ceil() as usize;
    }
    Ok(k_star)
}

//! Calibration of mixtures of exponential baseline e-detectors.
//!
//! * [`compute_threshold`] finds the smallest `g > log(1/α)` for which the
//!   mixing weights of a geometric grid of baselines fit in the α budget.
//! * [`compute_baseline`] turns that threshold into the grid
//!   `λ_0 > λ_1 > … > λ_K` and its weights.
//! * [`build_adaptive_calibration`] extends a core grid with an unbounded
//!   sequence of components whose weights decay like `(1 + k)^{−s}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bisect_transition, log_add_exp};
use crate::psi::PsiFamily;

pub const DEFAULT_THRESHOLD_EPS: f64 = 1e-9;
pub const DEFAULT_K_MAX: usize = 1000;

const THRESHOLD_MAX_ITER: usize = 400;
/// Below this exponent the ζ tail converges slowly enough to warrant a warning.
pub const ZETA_PRECISION_FLOOR: f64 = 1.05;
const ZETA_PARTIAL_TERMS: u32 = 1000;
/// Relative share of the adaptive budget held back so that the weight series
/// stays below α under rigorous tail bounds, not only up to rounding.
pub const ADAPTIVE_BUDGET_SLACK: f64 = 1e-9;

/// Output of [`compute_baseline`].
///
/// Index 0 holds the upper boundary parameter `λ_U` (weight `ω_0`, possibly
/// zero) and index `k_alpha` the lower boundary `λ_L`. In the single-baseline
/// branch only `λ_L` is stored, with weight one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureCalibration {
    pub alpha: f64,
    pub family: PsiFamily,
    pub delta_lower: f64,
    pub delta_upper: f64,
    pub k_max: usize,
    pub eps: f64,
    /// ψ*(Δ_L)
    pub d_lower: f64,
    /// ψ*(Δ_U)
    pub d_upper: f64,
    pub single_baseline: bool,
    pub g_alpha: f64,
    pub k_alpha: usize,
    pub eta_alpha: f64,
    /// Weight mass before normalization; at most α.
    pub weight_mass: f64,
    pub deltas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub omegas: Vec<f64>,
}

impl MixtureCalibration {
    pub fn lambda_lower(&self) -> f64 {
        *self.lambdas.last().expect("non-empty grid")
    }

    pub fn lambda_upper(&self) -> f64 {
        self.lambdas[0]
    }

    pub fn num_components(&self) -> usize {
        self.lambdas.len()
    }

    /// Structural checks, used after loading a calibration from disk.
    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        check_alpha(self.alpha)?;
        let n = self.lambdas.len();
        if n == 0 || self.omegas.len() != n || self.deltas.len() != n {
            return Err(Error::Config(
                "calibration arrays are empty or of unequal length".into(),
            ));
        }
        if self.single_baseline {
            if n != 1 || self.k_alpha != 1 {
                return Err(Error::Config(
                    "single-baseline calibration must hold one component".into(),
                ));
            }
        } else if n != self.k_alpha + 1 {
            return Err(Error::Config(format!(
                "calibration holds {n} components, expected K_α + 1 = {}",
                self.k_alpha + 1
            )));
        }
        if self.lambdas.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::Config("calibration λ grid must be strictly decreasing".into()));
        }
        if self.omegas.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(
                "calibration weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = self.omegas.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("calibration weights sum to {total}, expected 1")));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("α must lie in (0,1), got {alpha}")))
    }
}

/// `R^{-1/k}` for k = 1..=k_max, with `R = D_U / D_L`.
fn grid_exponents(d_lower: f64, d_upper: f64, k_max: usize) -> Vec<f64> {
    let log_ratio = (d_upper / d_lower).ln();
    (1..=k_max).map(|k| (-log_ratio / k as f64).exp()).collect()
}

fn log_grid_mass(g: f64, exponents: &[f64]) -> (f64, usize) {
    // min_k ln k − g R^{−1/k}; strict comparison keeps the smallest k on ties
    let mut best = f64::INFINITY;
    let mut arg = 1;
    for (i, rho) in exponents.iter().enumerate() {
        let k = i + 1;
        let v = (k as f64).ln() - g * rho;
        if v < best {
            best = v;
            arg = k;
        }
    }
    (best, arg)
}

/// Log of the threshold budget
/// `e^{−g}·1(g > v_min D_U) + min_{k ≤ k_max} k·exp{−g (D_U/D_L)^{−1/k}}`.
pub fn log_threshold_mass(g: f64, d_lower: f64, d_upper: f64, v_min: f64, k_max: usize) -> f64 {
    let exps = grid_exponents(d_lower, d_upper, k_max);
    log_threshold_mass_with(g, d_upper, v_min, &exps)
}

fn log_threshold_mass_with(g: f64, d_upper: f64, v_min: f64, exponents: &[f64]) -> f64 {
    let (grid, _) = log_grid_mass(g, exponents);
    if g > v_min * d_upper {
        log_add_exp(-g, grid)
    } else {
        grid
    }
}

/// The `k ≤ k_max` minimizing `k·exp{−g (D_U/D_L)^{−1/k}}`; smallest k wins ties.
pub fn optimal_baseline_count(g: f64, d_lower: f64, d_upper: f64, k_max: usize) -> usize {
    log_grid_mass(g, &grid_exponents(d_lower, d_upper, k_max)).1
}

fn check_divergences(d_lower: f64, d_upper: f64) -> Result<()> {
    if !(d_lower > 0.0 && d_lower < d_upper && d_upper.is_finite()) {
        return Err(Error::Calibration(format!(
            "need 0 < D_L < D_U, got D_L={d_lower}, D_U={d_upper}"
        )));
    }
    Ok(())
}

/// Smallest `g > log(1/α)` with `log_threshold_mass(g) ≤ log α`, found by
/// two-branch bisection to within `eps`.
pub fn compute_threshold(alpha: f64, d_lower: f64, d_upper: f64, v_min: f64, k_max: usize, eps: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_divergences(d_lower, d_upper)?;
    if k_max == 0 {
        return Err(Error::Config("K_max must be at least 1".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!(
            "threshold tolerance must be positive, got {eps}"
        )));
    }
    let log_alpha = alpha.ln();
    let log_inv_alpha = -log_alpha;
    let exps = grid_exponents(d_lower, d_upper, k_max);
    let split = v_min * d_upper;
    let grid_ok = |g: f64| log_grid_mass(g, &exps).0 <= log_alpha;

    let (lo, hi) = if split > log_inv_alpha && grid_ok(split) {
        // The indicator term is switched off on (log 1/α, v_min D_U].
        (log_inv_alpha, split)
    } else {
        let hi = (d_upper / d_lower) * (2.0 / alpha).ln();
        (split.max(log_inv_alpha), hi)
    };
    let full_ok = |g: f64| log_threshold_mass_with(g, d_upper, v_min, &exps) <= log_alpha;
    if !full_ok(hi) {
        return Err(Error::Calibration(format!(
            "threshold condition fails at the bracket end g={hi}"
        )));
    }
    if full_ok(lo) {
        return Err(Error::Calibration(format!(
            "threshold condition already holds at the bracket start g={lo}; no infimum above log(1/α)"
        )));
    }
    bisect_transition(lo, hi, eps, THRESHOLD_MAX_ITER, full_ok)
}

/// Computes the baseline grid, weights and threshold for a well-separated
/// range `Δ_L < Δ* < Δ_U`, with the default threshold tolerance.
pub fn compute_baseline(
    alpha: f64,
    delta_lower: f64,
    delta_upper: f64,
    k_max: usize,
    family: PsiFamily,
) -> Result<MixtureCalibration> {
    compute_baseline_with_eps(alpha, delta_lower, delta_upper, k_max, family, DEFAULT_THRESHOLD_EPS)
}

pub fn compute_baseline_with_eps(
    alpha: f64,
    delta_lower: f64,
    delta_upper: f64,
    k_max: usize,
    family: PsiFamily,
    eps: f64,
) -> Result<MixtureCalibration> {
    check_alpha(alpha)?;
    family.validate()?;
    if !(delta_lower > 0.0 && delta_lower < delta_upper) {
        return Err(Error::Calibration(format!(
            "need 0 < Δ_L < Δ_U, got Δ_L={delta_lower}, Δ_U={delta_upper}"
        )));
    }
    if delta_upper >= family.conjugate_domain_sup() {
        return Err(Error::Calibration(format!(
            "Δ_U={delta_upper} outside the conjugate domain [0, {})",
            family.conjugate_domain_sup()
        )));
    }
    let calib = |e: Error| match e {
        Error::Domain(m) => Error::Calibration(m),
        other => other,
    };
    let lambda_lower = family.grad_conjugate(delta_lower).map_err(calib)?;
    let lambda_upper = family.grad_conjugate(delta_upper).map_err(calib)?;
    let d_lower = family.conjugate(delta_lower).map_err(calib)?;
    let d_upper = family.conjugate(delta_upper).map_err(calib)?;
    let v_min = family.v_min();
    let log_inv_alpha = -alpha.ln();

    let mut out = MixtureCalibration {
        alpha,
        family,
        delta_lower,
        delta_upper,
        k_max,
        eps,
        d_lower,
        d_upper,
        single_baseline: false,
        g_alpha: log_inv_alpha,
        k_alpha: 1,
        eta_alpha: d_upper / d_lower,
        weight_mass: alpha,
        deltas: vec![delta_lower],
        lambdas: vec![lambda_lower],
        omegas: vec![1.0],
    };

    if log_inv_alpha <= v_min * d_lower {
        out.single_baseline = true;
        return Ok(out);
    }

    let g = compute_threshold(alpha, d_lower, d_upper, v_min, k_max, eps)?;
    let k_alpha = optimal_baseline_count(g, d_lower, d_upper, k_max);
    let eta = (d_upper / d_lower).powf(1.0 / k_alpha as f64);

    let mut deltas = Vec::with_capacity(k_alpha + 1);
    let mut lambdas = Vec::with_capacity(k_alpha + 1);
    deltas.push(delta_upper);
    lambdas.push(lambda_upper);
    for k in 1..k_alpha {
        let level = d_upper * (-(k as f64) * eta.ln()).exp();
        let dk = family.solve_conjugate(level)?;
        deltas.push(dk);
        lambdas.push(family.grad_conjugate(dk).map_err(calib)?);
    }
    deltas.push(delta_lower);
    lambdas.push(lambda_lower);
    if lambdas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::Numeric(
            "baseline grid is not strictly decreasing; Δ_U/Δ_L too close for the chosen K".into(),
        ));
    }

    let head = if g > v_min * d_upper { (-g).exp() } else { 0.0 };
    let each = (-g / eta).exp();
    let weight_mass = head + k_alpha as f64 * each;
    if weight_mass > alpha * (1.0 + 1e-12) {
        return Err(Error::Calibration(format!(
            "weight mass W={weight_mass} exceeds α={alpha}"
        )));
    }
    let mut omegas = Vec::with_capacity(k_alpha + 1);
    omegas.push(head / weight_mass);
    omegas.extend(std::iter::repeat_n(each / weight_mass, k_alpha));

    out.g_alpha = g;
    out.k_alpha = k_alpha;
    out.eta_alpha = eta;
    out.weight_mass = weight_mass;
    out.deltas = deltas;
    out.lambdas = lambdas;
    out.omegas = omegas;
    Ok(out)
}

/// Whether `k_max` is large enough that the argmin over `[1, k_max]` is the
/// argmin over all positive integers.
pub fn k_max_is_sufficient(g: f64, d_lower: f64, d_upper: f64, k_max: usize) -> bool {
    // ln k − g R^{−1/k} increases for every k > g ln R, so the search can stop there.
    let horizon = ((g * (d_upper / d_lower).ln()).ceil() as usize + 1).max(k_max);
    optimal_baseline_count(g, d_lower, d_upper, horizon) == optimal_baseline_count(g, d_lower, d_upper, k_max)
}

/// `ζ(s) − 1 = Σ_{k≥1} (1 + k)^{−s}` for `s > 1`.
///
/// Partial sum to 1000 terms plus an Euler–Maclaurin tail; the neglected
/// remainder is below 1e-20 for every `s > 1`.
pub fn zeta_minus_one(s: f64) -> f64 {
    debug_assert!(s > 1.0);
    let n = ZETA_PARTIAL_TERMS as f64;
    let partial: f64 = (2..=ZETA_PARTIAL_TERMS).rev().map(|j| (j as f64).powf(-s)).sum();
    let ns = n.powf(-s);
    let tail = n * ns / (s - 1.0) - 0.5 * ns + s * ns / (12.0 * n)
        - s * (s + 1.0) * (s + 2.0) * ns / (720.0 * n.powi(3))
        + s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * ns / (30240.0 * n.powi(5));
    partial + tail
}

/// Solves `ζ(s) − 1 = target` for `s > 1`. The returned `s` never
/// undershoots, so `ζ(s) − 1 ≤ target` up to rounding.
pub fn solve_zeta_exponent(target: f64) -> Result<f64> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::Domain(format!(
            "ζ target must be positive and finite, got {target}"
        )));
    }
    let mut lo = 1.0 + 1e-9;
    if zeta_minus_one(lo) <= target {
        return Err(Error::Numeric(format!("ζ target {target} requires s below 1 + 1e-9")));
    }
    let mut hi = 2.0;
    while zeta_minus_one(hi) > target {
        lo = hi;
        hi *= 2.0;
        if hi > 2048.0 {
            return Err(Error::Numeric(format!("ζ target {target} too small to bracket")));
        }
    }
    let s = bisect_transition(lo, hi, 0.0, 200, |s| zeta_minus_one(s) <= target)?;
    if (zeta_minus_one(s) - target).abs() > 1e-10 * target.max(1.0) {
        return Err(Error::Numeric(format!(
            "ζ exponent for target {target} did not converge"
        )));
    }
    if s < ZETA_PRECISION_FLOOR {
        log::warn!("ζ exponent s={s} is below {ZETA_PRECISION_FLOOR}; tail accuracy degrades");
    }
    Ok(s)
}

/// Calibration of the adaptive (no-separation) scheme: a core grid at level
/// `rα` over `(Δ_L, Δ_0)` extended by components minted on a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveCalibration {
    pub alpha: f64,
    pub importance_weight: f64,
    pub schedule_density: f64,
    pub zeta_exponent: f64,
    /// ψ*(Δ_0)
    pub d_zero: f64,
    /// `g_{rα} / D_0`
    pub v_zero: f64,
    /// Core weights rescaled by `W / α`; they sum to `W / α`.
    pub core_weights: Vec<f64>,
    pub core: MixtureCalibration,
}

impl AdaptiveCalibration {
    pub fn family(&self) -> PsiFamily {
        self.core.family
    }

    pub fn g_core(&self) -> f64 {
        self.core.g_alpha
    }

    pub fn eta(&self) -> f64 {
        self.core.eta_alpha
    }

    /// `K_L`, the largest core index.
    pub fn base_count(&self) -> usize {
        self.core.k_alpha
    }

    pub fn delta_lower(&self) -> f64 {
        self.core.delta_lower
    }

    pub fn delta_zero(&self) -> f64 {
        self.core.delta_upper
    }

    /// `g_k = g_{rα} + sη log(1 + k − K_L)` for a scheduled index `k ≥ K_L`.
    pub fn scheduled_threshold(&self, k: usize) -> f64 {
        let extra = k.saturating_sub(self.base_count()) as f64;
        self.g_core() + self.zeta_exponent * self.eta() * extra.ln_1p()
    }

    /// `ψ*(Δ_k) = g_k / (V_0 η^k)`, the conjugate level defining component k.
    pub fn scheduled_level(&self, k: usize) -> f64 {
        self.scheduled_threshold(k) / self.v_zero * (-(k as f64) * self.eta().ln()).exp()
    }

    /// `(Δ_k, λ_k, ω_k)` for a component beyond the core (`k > K_L`).
    pub fn mint_component(&self, k: usize) -> Result<(f64, f64, f64)> {
        if k <= self.base_count() {
            return Err(Error::State(format!(
                "component {k} belongs to the core grid (K_L = {})",
                self.base_count()
            )));
        }
        let with_index = |e: Error| match e {
            Error::Calibration(m) | Error::Numeric(m) | Error::Domain(m) => {
                Error::Calibration(format!("minting component {k}: {m}"))
            }
            other => other,
        };
        let family = self.family();
        let delta = family.solve_conjugate(self.scheduled_level(k)).map_err(with_index)?;
        let lambda = family.grad_conjugate(delta).map_err(with_index)?;
        if !(lambda > 0.0) {
            return Err(Error::Calibration(format!(
                "minting component {k}: λ underflowed to zero"
            )));
        }
        let omega = (-self.scheduled_threshold(k) / self.eta()).exp() / self.alpha;
        Ok((delta, lambda, omega))
    }

    /// The boundary `g(t) = g_{rα} + sη log(1 + log_η(t / (V_0 η^{K_L}) ∨ 1))`.
    pub fn boundary(&self, t: f64) -> Result<f64> {
        if !(t >= 1.0) {
            return Err(Error::Domain(format!("boundary argument must be ≥ 1, got {t}")));
        }
        let eta = self.eta();
        let pivot = self.v_zero * (self.base_count() as f64 * eta.ln()).exp();
        let ratio = (t / pivot).max(1.0);
        Ok(self.g_core() + self.zeta_exponent * eta * (ratio.ln() / eta.ln()).ln_1p())
    }

    /// `e^{−g}·1(g > v_min D_0) + K_L e^{−g/η} + e^{−g/η}(ζ(s) − 1)`; must not exceed α.
    pub fn total_weight_mass(&self) -> f64 {
        let g = self.g_core();
        let head = if g > self.family().v_min() * self.d_zero {
            (-g).exp()
        } else {
            0.0
        };
        let each = (-g / self.eta()).exp();
        head + self.base_count() as f64 * each + each * zeta_minus_one(self.zeta_exponent)
    }

    pub fn validate(&self) -> Result<()> {
        self.core.validate()?;
        if !(self.zeta_exponent > 1.0) {
            return Err(Error::Config(format!(
                "ζ exponent must exceed 1, got {}",
                self.zeta_exponent
            )));
        }
        if !(self.schedule_density >= 1.0) {
            return Err(Error::Config("schedule density must be at least 1".into()));
        }
        if self.core_weights.len() != self.core.num_components() {
            return Err(Error::Config("core weight count does not match the core grid".into()));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn build_adaptive_calibration(
    alpha: f64,
    delta_lower: f64,
    delta_zero: f64,
    importance_weight: f64,
    schedule_density: f64,
    k_zero: usize,
    family: PsiFamily,
) -> Result<AdaptiveCalibration> {
    check_alpha(alpha)?;
    if !(importance_weight > 0.0 && importance_weight < 1.0) {
        return Err(Error::Config(format!(
            "importance weight r must lie in (0,1), got {importance_weight}"
        )));
    }
    if !(schedule_density >= 1.0) || !schedule_density.is_finite() {
        return Err(Error::Config(format!(
            "schedule density must be ≥ 1, got {schedule_density}"
        )));
    }
    let core = compute_baseline(importance_weight * alpha, delta_lower, delta_zero, k_zero, family)?;
    if core.single_baseline {
        return Err(Error::Calibration(
            "core grid collapsed to a single baseline; the adaptive extension needs a spacing η > 1 \
             from a multi-baseline core (lower Δ_L or α)"
                .into(),
        ));
    }
    let w = core.weight_mass;
    let slack = alpha - w;
    if !(slack > 0.0) {
        return Err(Error::Calibration(format!(
            "core weight mass W={w} leaves no budget below α={alpha}; reduce r"
        )));
    }
    let target = (core.g_alpha / core.eta_alpha).exp() * slack * (1.0 - ADAPTIVE_BUDGET_SLACK);
    let s = solve_zeta_exponent(target)?;
    let scale = w / alpha;
    let core_weights = core.omegas.iter().map(|o| o * scale).collect();
    let d_zero = core.d_upper;
    let v_zero = core.g_alpha / d_zero;
    let out = AdaptiveCalibration {
        alpha,
        importance_weight,
        schedule_density,
        zeta_exponent: s,
        d_zero,
        v_zero,
        core_weights,
        core,
    };
    let mass = out.total_weight_mass();
    if mass > alpha + 1e-12 {
        return Err(Error::Calibration(format!(
            "adaptive weight mass {mass} exceeds α={alpha}"
        )));
    }
    Ok(out)
}

/// `sup_{λ ∈ [λ_L, λ_U]} (λ S_n − ψ(λ) V_n)`, evaluated at the conjugate
/// touching point `λ̂ = ∇ψ*(S_n / V_n)` clamped to the interval.
pub fn glr_log_statistic(
    family: PsiFamily,
    lambda_lower: f64,
    lambda_upper: f64,
    s_sum: f64,
    v_sum: f64,
) -> Result<f64> {
    let lambda = if s_sum <= 0.0 {
        lambda_lower
    } else if v_sum <= 0.0 {
        lambda_upper
    } else {
        let ratio = s_sum / v_sum;
        if ratio >= family.conjugate_domain_sup() {
            lambda_upper
        } else {
            family.grad_conjugate(ratio)?.clamp(lambda_lower, lambda_upper)
        }
    };
    Ok(lambda * s_sum - family.psi(lambda)? * v_sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bernoulli_case() -> (f64, f64, PsiFamily) {
        let f = PsiFamily::bernoulli(0.49).unwrap();
        (f.conjugate(0.02).unwrap(), f.conjugate(0.41).unwrap(), f)
    }

    /// Brute-force evaluation of the defining inequality, independent of the
    /// log-space helpers above.
    fn mass_direct(g: f64, dl: f64, du: f64, v_min: f64, k_max: usize) -> f64 {
        let r = du / dl;
        let grid = (1..=k_max)
            .map(|k| k as f64 * (-g * r.powf(-1.0 / k as f64)).exp())
            .fold(f64::INFINITY, f64::min);
        let head = if g > v_min * du { (-g).exp() } else { 0.0 };
        head + grid
    }

    #[test]
    fn threshold_matches_grid_scan() {
        let (dl, du, f) = bernoulli_case();
        let alpha = 1e-3;
        let eps = 1e-6;
        let g = compute_threshold(alpha, dl, du, f.v_min(), 1000, eps).unwrap();
        // scan upward from log(1/α) in steps of eps/10 around the bisection answer
        let step = eps / 10.0;
        let start = g - 20.0 * eps;
        let mut first = None;
        for i in 0..400 {
            let x = start + i as f64 * step;
            if x > -alpha.ln() && mass_direct(x, dl, du, f.v_min(), 1000) <= alpha {
                first = Some(x);
                break;
            }
        }
        let first = first.expect("scan found the threshold");
        assert!((g - first).abs() <= eps + step, "bisection {g} vs scan {first}");
        assert!(mass_direct(g - 2.0 * eps, dl, du, f.v_min(), 1000) > alpha);
        assert!(mass_direct(g, dl, du, f.v_min(), 1000) <= alpha * (1.0 + 1e-12));
        assert!(g > -alpha.ln());
    }

    #[test]
    fn threshold_rejects_bad_inputs() {
        assert!(compute_threshold(0.0, 1.0, 2.0, 1.0, 10, 1e-9).is_err());
        assert!(compute_threshold(0.1, 2.0, 1.0, 1.0, 10, 1e-9).is_err());
        assert!(compute_threshold(0.1, 1.0, 2.0, 1.0, 0, 1e-9).is_err());
        assert!(compute_threshold(0.1, 1.0, 2.0, 1.0, 10, 0.0).is_err());
    }

    #[test]
    fn argmin_matches_exhaustive_scan() {
        let (dl, du, _) = bernoulli_case();
        for &g in &[8.0, 12.19, 20.0, 50.0] {
            let r: f64 = du / dl;
            let mut best = (f64::INFINITY, 0);
            for k in 1..=1000 {
                let v = k as f64 * (-g * r.powf(-1.0 / k as f64)).exp();
                if v < best.0 {
                    best = (v, k);
                }
            }
            assert_eq!(optimal_baseline_count(g, dl, du, 1000), best.1, "g={g}");
        }
    }

    #[test]
    fn bernoulli_section_example_has_69_baselines() {
        let f = PsiFamily::bernoulli(0.49).unwrap();
        let cal = compute_baseline(1e-3, 0.02, 0.41, 1000, f).unwrap();
        assert_eq!(cal.k_alpha, 69);
        assert_eq!(cal.num_components(), 70);
        cal.validate().unwrap();
    }

    #[test]
    fn baseline_grid_structure() {
        let f = PsiFamily::bernoulli(0.49).unwrap();
        let cal = compute_baseline(1e-3, 0.02, 0.41, 1000, f).unwrap();
        assert_relative_eq!(cal.lambdas[0], f.grad_conjugate(0.41).unwrap());
        assert_relative_eq!(cal.lambda_lower(), f.grad_conjugate(0.02).unwrap());
        assert!(cal.deltas.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(cal.deltas[0], 0.41);
        assert_eq!(*cal.deltas.last().unwrap(), 0.02);
        assert!(cal.weight_mass <= cal.alpha);
        assert_relative_eq!(cal.omegas.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        assert!(cal.g_alpha > (1e3f64).ln());
        // interior levels are geometric in D
        for k in 1..cal.k_alpha {
            let level = f.conjugate(cal.deltas[k]).unwrap();
            assert_relative_eq!(
                level,
                cal.d_upper * cal.eta_alpha.powi(-(k as i32)),
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn single_baseline_branch() {
        // ψ_B*(0.3) for p0 = 0.49 is ~0.19 > log(1/0.9)
        let f = PsiFamily::bernoulli(0.49).unwrap();
        let cal = compute_baseline(0.9, 0.3, 0.45, 1000, f).unwrap();
        assert!(cal.single_baseline);
        assert_eq!(cal.k_alpha, 1);
        assert_eq!(cal.omegas, vec![1.0]);
        assert_relative_eq!(cal.lambdas[0], f.grad_conjugate(0.3).unwrap());
        cal.validate().unwrap();
    }

    #[test]
    fn baseline_rejects_out_of_domain() {
        let f = PsiFamily::bernoulli(0.49).unwrap();
        assert!(matches!(
            compute_baseline(1e-3, 0.02, 0.6, 1000, f),
            Err(Error::Calibration(_))
        ));
        assert!(matches!(
            compute_baseline(1e-3, 0.3, 0.2, 1000, f),
            Err(Error::Calibration(_))
        ));
        assert!(matches!(
            compute_baseline(1.5, 0.02, 0.3, 1000, f),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zeta_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert_relative_eq!(zeta_minus_one(2.0), pi2_6 - 1.0, max_relative = 1e-13);
        assert_relative_eq!(zeta_minus_one(3.0), 1.202_056_903_159_594_3 - 1.0, max_relative = 1e-13);
    }

    #[test]
    fn zeta_exponent_examples() {
        // oracle: brute partial sums to 10^6 plus integral bounds on the tail
        let brute = |s: f64| {
            let n = 1_000_000u32;
            let partial: f64 = (2..=n).rev().map(|j| (j as f64).powf(-s)).sum();
            let lower_tail = ((n + 1) as f64).powf(1.0 - s) / (s - 1.0);
            let upper_tail = (n as f64).powf(1.0 - s) / (s - 1.0);
            (partial + lower_tail, partial + upper_tail)
        };
        let (lo2, hi2) = brute(2.0);
        let s = solve_zeta_exponent(0.5 * (lo2 + hi2)).unwrap();
        assert!((s - 2.0).abs() < 1e-6, "{s}");
        let s = solve_zeta_exponent(std::f64::consts::PI.powi(2) / 6.0 - 1.0).unwrap();
        assert!((s - 2.0).abs() < 1e-9, "{s}");
        let s = solve_zeta_exponent(0.202_056_903_159_594_3).unwrap();
        assert!((s - 3.0).abs() < 1e-9, "{s}");
        let (lo3, hi3) = brute(3.0);
        assert!(zeta_minus_one(3.0) >= lo3 - 1e-15 && zeta_minus_one(3.0) <= hi3 + 1e-15);
    }

    #[test]
    fn zeta_exponent_monotone_and_domain() {
        let mut prev = f64::INFINITY;
        for i in 1..30 {
            let t = 0.05 * i as f64;
            let s = solve_zeta_exponent(t).unwrap();
            assert!(s < prev);
            prev = s;
        }
        assert!(matches!(solve_zeta_exponent(0.0), Err(Error::Domain(_))));
        assert!(matches!(solve_zeta_exponent(-1.0), Err(Error::Domain(_))));
    }

    fn bounded_adaptive() -> AdaptiveCalibration {
        build_adaptive_calibration(0.01, 0.024, 1.0, 0.5, 1.0, 1000, PsiFamily::SubExponential).unwrap()
    }

    #[test]
    fn boundary_examples() {
        let cal = bounded_adaptive();
        let pivot = cal.v_zero * cal.eta().powi(cal.base_count() as i32);
        assert_eq!(cal.boundary(1.0).unwrap(), cal.g_core());
        assert_eq!(cal.boundary(pivot.max(1.0)).unwrap(), cal.g_core());
        let next = pivot * cal.eta();
        let expected = cal.g_core() + cal.zeta_exponent * cal.eta() * 2f64.ln();
        assert_relative_eq!(cal.boundary(next).unwrap(), expected, max_relative = 1e-12);
        assert!(cal.boundary(0.5).is_err());
    }

    #[test]
    fn boundary_shape() {
        let cal = bounded_adaptive();
        let mut prev_g = 0.0;
        let mut prev_ratio = f64::INFINITY;
        for i in 0..=600 {
            let t = 10f64.powf(i as f64 / 100.0);
            let g = cal.boundary(t).unwrap();
            assert!(g >= prev_g);
            assert!(g / t <= prev_ratio * (1.0 + 1e-12));
            prev_g = g;
            prev_ratio = g / t;
        }
    }

    #[test]
    fn adaptive_weights_are_valid() {
        let cal = bounded_adaptive();
        assert!(cal.zeta_exponent > 1.0);
        assert!(cal.total_weight_mass() <= cal.alpha + 1e-12);
        let sum: f64 = cal.core_weights.iter().sum();
        assert_relative_eq!(sum, cal.core.weight_mass / cal.alpha, max_relative = 1e-12);
        // the minted weights follow the boundary function
        let k = cal.base_count() + 3;
        let (_, lambda, omega) = cal.mint_component(k).unwrap();
        assert!(lambda > 0.0 && lambda < cal.core.lambda_lower());
        let g_k = cal.scheduled_threshold(k);
        assert_relative_eq!(omega, (-g_k / cal.eta()).exp() / cal.alpha, max_relative = 1e-14);
        let t = cal.v_zero * cal.eta().powi(k as i32);
        assert_relative_eq!(cal.boundary(t).unwrap(), g_k, max_relative = 1e-10);
        assert!(cal.mint_component(cal.base_count()).is_err());
    }

    #[test]
    fn zeta_exponent_grows_with_importance_weight() {
        let mut prev = 1.0;
        for &r in &[0.05, 0.2, 0.5, 0.8, 0.95] {
            let cal = build_adaptive_calibration(0.01, 0.024, 1.0, r, 1.0, 1000, PsiFamily::SubExponential).unwrap();
            assert!(cal.zeta_exponent > prev, "r={r}: s={}", cal.zeta_exponent);
            prev = cal.zeta_exponent;
        }
    }

    #[test]
    fn adaptive_rejects_bad_parameters() {
        let f = PsiFamily::SubExponential;
        assert!(matches!(
            build_adaptive_calibration(0.01, 0.024, 1.0, 1.0, 1.0, 1000, f),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_adaptive_calibration(0.01, 0.024, 1.0, 0.5, 0.5, 1000, f),
            Err(Error::Config(_))
        ));
        assert!(build_adaptive_calibration(0.01, 1.0, 0.5, 0.5, 1.0, 1000, f).is_err());
    }

    #[test]
    fn glr_statistic_is_a_supremum() {
        let f = PsiFamily::bernoulli(0.49).unwrap();
        let (lo, hi) = (f.grad_conjugate(0.02).unwrap(), f.grad_conjugate(0.41).unwrap());
        for &(s, v) in &[(3.0, 20.0), (-2.0, 10.0), (9.0, 10.0), (0.5, 50.0)] {
            let glr = glr_log_statistic(f, lo, hi, s, v).unwrap();
            let scan = (0..=2000)
                .map(|i| lo + (hi - lo) * i as f64 / 2000.0)
                .map(|l| l * s - f.psi(l).unwrap() * v)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(glr >= scan - 1e-12);
            assert!(glr - scan < 1e-4);
        }
    }
}

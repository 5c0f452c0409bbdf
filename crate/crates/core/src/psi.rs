//! The convex function ψ behind exponential baseline increments
//! `exp{λ s(x) − ψ(λ) v(x)}`, together with its gradient, convex conjugate
//! ψ* and the inverse maps that calibration needs.
//!
//! Two families are provided:
//!
//! * [`PsiFamily::Bernoulli`]: `ψ_B(λ) = log(1 − p0 + p0 e^λ) − λ p0`, with
//!   `s(x) = x − p0` and `v ≡ 1`. Its conjugate is the Bernoulli KL divergence
//!   `ψ_B*(z) = KL(p0 + z ‖ p0)`.
//! * [`PsiFamily::SubExponential`]: `ψ_E(λ) = −log(1 − λ) − λ` for `λ < 1`,
//!   used for bounded observations with `s(x) = x/m − 1`, `v(x) = s(x)²`.
//!   Its conjugate is `ψ_E*(z) = z − log(1 + z)`.
//!
//! Only the one-sided case `λ > 0`, `z ≥ 0` is used by calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::bisect_transition;

/// Largest |λ| accepted for the Bernoulli family; `e^λ` overflows past ~709.
pub const BERNOULLI_LAMBDA_CLAMP: f64 = 700.0;

const SOLVE_TOL: f64 = 1e-12;
const SOLVE_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PsiFamily {
    Bernoulli { p0: f64 },
    SubExponential,
}

impl PsiFamily {
    pub fn bernoulli(p0: f64) -> Result<Self> {
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(Error::Domain(format!("Bernoulli p0 must lie in (0,1), got {p0}")));
        }
        Ok(PsiFamily::Bernoulli { p0 })
    }

    pub fn sub_exponential() -> Self {
        PsiFamily::SubExponential
    }

    /// Re-checks construction invariants (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        match *self {
            PsiFamily::Bernoulli { p0 } => Self::bernoulli(p0).map(|_| ()),
            PsiFamily::SubExponential => Ok(()),
        }
    }

    /// Minimum of the variance map `v` over the sample space.
    pub fn v_min(&self) -> f64 {
        match self {
            PsiFamily::Bernoulli { .. } => 1.0,
            PsiFamily::SubExponential => 0.0,
        }
    }

    /// Supremum of the conjugate domain: ψ* is finite on `[0, sup)`.
    pub fn conjugate_domain_sup(&self) -> f64 {
        match *self {
            PsiFamily::Bernoulli { p0 } => 1.0 - p0,
            PsiFamily::SubExponential => f64::INFINITY,
        }
    }

    /// Supremum of ψ* over its (one-sided) domain.
    pub fn conjugate_sup(&self) -> f64 {
        match *self {
            // KL(1 ‖ p0)
            PsiFamily::Bernoulli { p0 } => -p0.ln(),
            PsiFamily::SubExponential => f64::INFINITY,
        }
    }

    fn check_lambda(&self, lambda: f64) -> Result<()> {
        if !lambda.is_finite() {
            return Err(Error::Domain(format!("λ must be finite, got {lambda}")));
        }
        match self {
            PsiFamily::Bernoulli { .. } if lambda.abs() > BERNOULLI_LAMBDA_CLAMP => Err(Error::Domain(format!(
                "Bernoulli λ={lambda} exceeds the clamp |λ| ≤ {BERNOULLI_LAMBDA_CLAMP}"
            ))),
            PsiFamily::SubExponential if lambda >= 1.0 => {
                Err(Error::Domain(format!("sub-exponential λ must be < 1, got {lambda}")))
            }
            _ => Ok(()),
        }
    }

    fn check_conjugate_arg(&self, z: f64) -> Result<()> {
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::Domain(format!(
                "conjugate argument must be finite and ≥ 0, got {z}"
            )));
        }
        if z >= self.conjugate_domain_sup() {
            return Err(Error::Domain(format!(
                "conjugate argument {z} outside [0, {})",
                self.conjugate_domain_sup()
            )));
        }
        Ok(())
    }

    /// ψ(λ).
    pub fn psi(&self, lambda: f64) -> Result<f64> {
        self.check_lambda(lambda)?;
        Ok(match *self {
            PsiFamily::Bernoulli { p0 } => (p0 * lambda.exp_m1()).ln_1p() - lambda * p0,
            PsiFamily::SubExponential => -(-lambda).ln_1p() - lambda,
        })
    }

    /// ∇ψ(λ).
    pub fn grad(&self, lambda: f64) -> Result<f64> {
        self.check_lambda(lambda)?;
        Ok(match *self {
            // q(λ) − p0 written so that it is accurate near λ = 0
            PsiFamily::Bernoulli { p0 } => {
                let em1 = lambda.exp_m1();
                p0 * (1.0 - p0) * em1 / (1.0 + p0 * em1)
            }
            PsiFamily::SubExponential => lambda / (1.0 - lambda),
        })
    }

    /// ψ*(z) = sup_λ {λz − ψ(λ)} for `z ≥ 0`.
    pub fn conjugate(&self, z: f64) -> Result<f64> {
        self.check_conjugate_arg(z)?;
        if z == 0.0 {
            return Ok(0.0);
        }
        Ok(match *self {
            PsiFamily::Bernoulli { p0 } => bernoulli_kl(p0 + z, p0),
            PsiFamily::SubExponential => {
                if z < 1e-2 {
                    // z − log(1+z) = Σ_{j≥2} (−1)^j z^j / j; the direct form cancels badly here
                    let mut term = z * z;
                    let mut acc = 0.0;
                    for j in 2..=14 {
                        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                        acc += sign * term / j as f64;
                        term *= z;
                    }
                    acc
                } else {
                    z - z.ln_1p()
                }
            }
        })
    }

    /// ∇ψ*(Δ): the unique λ with ∇ψ(λ) = Δ.
    pub fn grad_conjugate(&self, delta: f64) -> Result<f64> {
        self.check_conjugate_arg(delta)?;
        if delta == 0.0 {
            return Ok(0.0);
        }
        let lambda = match *self {
            PsiFamily::Bernoulli { p0 } => (delta / p0).ln_1p() - (-delta / (1.0 - p0)).ln_1p(),
            PsiFamily::SubExponential => delta / (1.0 + delta),
        };
        self.check_lambda(lambda)?;
        Ok(lambda)
    }

    /// Solves ψ*(z) = c for `z ≥ 0` by bisection on the increasing map z ↦ ψ*(z).
    pub fn solve_conjugate(&self, c: f64) -> Result<f64> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Calibration(format!(
                "conjugate level must be finite and ≥ 0, got {c}"
            )));
        }
        if c == 0.0 {
            return Ok(0.0);
        }
        if c >= self.conjugate_sup() {
            return Err(Error::Calibration(format!(
                "conjugate level {c} is not attainable (sup ψ* = {})",
                self.conjugate_sup()
            )));
        }
        let upper = match *self {
            PsiFamily::Bernoulli { p0 } => {
                let u = 1.0 - p0 - 1e-12;
                if self.conjugate(u)? < c {
                    return Err(Error::Calibration(format!(
                        "conjugate level {c} lies beyond the numerically representable domain"
                    )));
                }
                u
            }
            PsiFamily::SubExponential => {
                let mut u = 1.0;
                while self.conjugate(u)? < c {
                    u *= 2.0;
                    if !u.is_finite() {
                        return Err(Error::Numeric(format!("could not bracket ψ*(z) = {c}")));
                    }
                }
                u
            }
        };
        let tol_c = SOLVE_TOL * c.max(1.0);
        // Bisection on z; the predicate is monotone because ψ* is strictly increasing.
        let z = bisect_transition(0.0, upper, 0.0, SOLVE_MAX_ITER, |z| {
            self.conjugate(z).map(|v| v >= c).unwrap_or(true)
        })?;
        let residual = (self.conjugate(z)? - c).abs();
        if residual > tol_c {
            return Err(Error::Numeric(format!(
                "solve_conjugate residual {residual:e} exceeds tolerance for level {c}"
            )));
        }
        Ok(z)
    }
}

/// Bernoulli KL divergence KL(q ‖ p), written with `ln_1p` so that it stays
/// accurate for q close to p.
pub fn bernoulli_kl(q: f64, p: f64) -> f64 {
    let z = q - p;
    let a = if q == 0.0 { 0.0 } else { q * (z / p).ln_1p() };
    let b = if q == 1.0 {
        0.0
    } else {
        (1.0 - q) * (-z / (1.0 - p)).ln_1p()
    };
    a + b
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn families() -> Vec<PsiFamily> {
        vec![
            PsiFamily::bernoulli(0.49).unwrap(),
            PsiFamily::bernoulli(0.1).unwrap(),
            PsiFamily::bernoulli(0.9).unwrap(),
            PsiFamily::SubExponential,
        ]
    }

    // Plain textbook KL, independent of the ln_1p rewrite.
    fn kl_direct(q: f64, p: f64) -> f64 {
        q * (q / p).ln() + (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln()
    }

    #[test]
    fn psi_vanishes_with_its_gradient_at_zero() {
        for f in families() {
            assert!(f.psi(0.0).unwrap().abs() < 1e-12);
            assert!(f.grad(0.0).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn psi_closed_form_examples() {
        let se = PsiFamily::SubExponential;
        assert_relative_eq!(se.psi(0.5).unwrap(), -(0.5f64).ln() - 0.5, max_relative = 1e-14);
        let b = PsiFamily::bernoulli(0.5).unwrap();
        let expected = ((1.0 + std::f64::consts::E) / 2.0).ln() - 0.5;
        assert_relative_eq!(b.psi(1.0).unwrap(), expected, max_relative = 1e-14);
        assert_relative_eq!(se.grad(0.5).unwrap(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn out_of_domain_lambda_is_rejected() {
        let se = PsiFamily::SubExponential;
        assert!(matches!(se.psi(1.0), Err(Error::Domain(_))));
        assert!(matches!(se.grad(1.5), Err(Error::Domain(_))));
        let b = PsiFamily::bernoulli(0.49).unwrap();
        assert!(matches!(b.psi(701.0), Err(Error::Domain(_))));
        assert!(b.psi(f64::NAN).is_err());
        assert!(PsiFamily::bernoulli(1.0).is_err());
        assert!(PsiFamily::bernoulli(0.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-6;
        for f in families() {
            for &lam in &[0.01, 0.1, 0.3, 0.7, 0.95] {
                let fd = (f.psi(lam + h).unwrap() - f.psi(lam - h).unwrap()) / (2.0 * h);
                assert!((fd - f.grad(lam).unwrap()).abs() < 1e-6, "{f:?} λ={lam}");
            }
        }
        let b = PsiFamily::bernoulli(0.3).unwrap();
        for &lam in &[1.5, 4.0, -2.0] {
            let fd = (b.psi(lam + h).unwrap() - b.psi(lam - h).unwrap()) / (2.0 * h);
            assert!((fd - b.grad(lam).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn psi_is_strictly_convex_on_chords() {
        for f in families() {
            let grid: Vec<f64> = (1..40).map(|i| i as f64 * 0.024).collect();
            for w in grid.windows(3) {
                let (a, b, c) = (w[0], w[1], w[2]);
                let t = (b - a) / (c - a);
                let chord = (1.0 - t) * f.psi(a).unwrap() + t * f.psi(c).unwrap();
                assert!(f.psi(b).unwrap() < chord);
            }
        }
    }

    #[test]
    fn conjugate_examples() {
        let se = PsiFamily::SubExponential;
        assert_eq!(se.conjugate(0.0).unwrap(), 0.0);
        assert_relative_eq!(se.conjugate(1.0).unwrap(), 1.0 - 2f64.ln(), max_relative = 1e-15);
        let b = PsiFamily::bernoulli(0.49).unwrap();
        assert_relative_eq!(b.conjugate(0.02).unwrap(), kl_direct(0.51, 0.49), max_relative = 1e-9);
        assert_eq!(b.conjugate(0.0).unwrap(), 0.0);
    }

    #[test]
    fn conjugate_domain_boundaries_error() {
        let b = PsiFamily::bernoulli(0.49).unwrap();
        assert!(matches!(b.conjugate(0.51), Err(Error::Domain(_))));
        assert!(matches!(b.conjugate(-0.1), Err(Error::Domain(_))));
        assert!(matches!(b.grad_conjugate(0.51), Err(Error::Domain(_))));
        assert!(PsiFamily::SubExponential.conjugate(f64::INFINITY).is_err());
    }

    #[test]
    fn small_argument_series_agrees_with_direct_form() {
        let se = PsiFamily::SubExponential;
        // at the switch point both forms should agree to well within 1e-12 relative
        let z: f64 = 0.0099999;
        let direct = z - z.ln_1p();
        assert_relative_eq!(se.conjugate(z).unwrap(), direct, max_relative = 1e-10);
        let z = 1e-5;
        assert_relative_eq!(
            se.conjugate(z).unwrap(),
            z * z / 2.0 - z * z * z / 3.0,
            max_relative = 1e-9
        );
    }

    #[test]
    fn grad_conjugate_examples_and_round_trip() {
        let se = PsiFamily::SubExponential;
        assert_eq!(se.grad_conjugate(0.0).unwrap(), 0.0);
        assert_relative_eq!(se.grad_conjugate(1.0).unwrap(), 0.5, max_relative = 1e-15);
        for f in families() {
            let sup = f.conjugate_domain_sup().min(50.0);
            for i in 1..50 {
                let d = 0.01 + (sup - 0.02) * i as f64 / 50.0;
                let lam = f.grad_conjugate(d).unwrap();
                assert_relative_eq!(f.grad(lam).unwrap(), d, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn bernoulli_conjugate_is_kl_on_grid() {
        let p0 = 0.49;
        let b = PsiFamily::bernoulli(p0).unwrap();
        for i in 1..=50 {
            let q = p0 + (0.99 - p0) * i as f64 / 50.0;
            assert!((b.conjugate(q - p0).unwrap() - kl_direct(q, p0)).abs() < 1e-10);
        }
    }

    #[test]
    fn conjugate_strictly_increasing() {
        for f in families() {
            let sup = f.conjugate_domain_sup().min(100.0);
            let mut prev = 0.0;
            for i in 1..200 {
                let z = sup * i as f64 / 200.0;
                let v = f.conjugate(z).unwrap();
                assert!(v > prev, "{f:?} z={z}");
                prev = v;
            }
        }
    }

    #[test]
    fn solve_conjugate_examples() {
        let se = PsiFamily::SubExponential;
        assert_eq!(se.solve_conjugate(0.0).unwrap(), 0.0);
        assert_relative_eq!(se.solve_conjugate(1.0 - 2f64.ln()).unwrap(), 1.0, max_relative = 1e-10);
        let b = PsiFamily::bernoulli(0.49).unwrap();
        let c = kl_direct(0.51, 0.49);
        assert_relative_eq!(b.solve_conjugate(c).unwrap(), 0.02, max_relative = 1e-8);
        // ψ_E*(1600) is far out; the expanding bracket must still find it
        let c = se.conjugate(1600.0).unwrap();
        assert_relative_eq!(se.solve_conjugate(c).unwrap(), 1600.0, max_relative = 1e-10);
    }

    #[test]
    fn solve_conjugate_rejects_unattainable_levels() {
        let b = PsiFamily::bernoulli(0.49).unwrap();
        assert!(matches!(b.solve_conjugate(-(0.49f64).ln()), Err(Error::Calibration(_))));
        assert!(matches!(b.solve_conjugate(-1.0), Err(Error::Calibration(_))));
    }

    proptest! {
        #[test]
        fn fenchel_equality_at_touching_point(lam in 0.01f64..0.99, p0 in 0.05f64..0.95) {
            for f in [PsiFamily::bernoulli(p0).unwrap(), PsiFamily::SubExponential] {
                let g = f.grad(lam).unwrap();
                let lhs = f.conjugate(g).unwrap();
                let rhs = lam * g - f.psi(lam).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1e-300) + 1e-15);
                let back = f.grad_conjugate(g).unwrap();
                prop_assert!((back - lam).abs() <= 1e-9 * lam);
            }
        }

        #[test]
        fn solve_conjugate_inverts_conjugate(z in 1e-4f64..0.9, p0 in 0.05f64..0.95) {
            for f in [PsiFamily::bernoulli(p0).unwrap(), PsiFamily::SubExponential] {
                let zz = z * f.conjugate_domain_sup().min(10.0);
                let c = f.conjugate(zz).unwrap();
                let solved = f.solve_conjugate(c).unwrap();
                prop_assert!((f.conjugate(solved).unwrap() - c).abs() <= 1e-10);
            }
        }
    }
}

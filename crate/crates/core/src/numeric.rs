//! Small numeric helpers shared by the detector and calibration code.

use crate::error::{Error, Result};

/// `ln(e^a + e^b)` without overflow. `-inf` is the log of zero and is absorbed.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ e^{x_i}`; returns `-inf` for an empty slice or all `-inf` terms.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Bisection for the boundary of a monotone predicate.
///
/// `pred(lo)` must be false and `pred(hi)` true. Returns the smallest probed
/// point at which the predicate holds, within `tol` of the true transition.
pub fn bisect_transition<F>(mut lo: f64, mut hi: f64, tol: f64, max_iter: usize, pred: F) -> Result<f64>
where
    F: Fn(f64) -> bool,
{
    if !(lo < hi) {
        return Err(Error::Numeric(format!("empty bisection bracket [{lo}, {hi}]")));
    }
    for _ in 0..max_iter {
        if hi - lo <= tol {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // bracket collapsed to adjacent floats
            return Ok(hi);
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if hi - lo <= tol {
        Ok(hi)
    } else {
        Err(Error::Numeric(format!(
            "bisection did not reach tolerance {tol} within {max_iter} iterations (bracket [{lo}, {hi}])"
        )))
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_exp_handles_sentinel_and_large_values() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert_eq!(log_add_exp(2.0, f64::NEG_INFINITY), 2.0);
        let v = log_add_exp(1000.0, 1000.0);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let xs = [0.1, -2.0, 3.0, 0.5];
        let direct: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-14);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn bisection_finds_transition() {
        let x = bisect_transition(0.0, 10.0, 1e-12, 200, |x| x * x >= 2.0).unwrap();
        assert!((x - 2f64.sqrt()).abs() < 1e-11);
        assert!(x * x >= 2.0);
        assert!(bisect_transition(1.0, 1.0, 1e-9, 10, |_| true).is_err());
        assert!(bisect_transition(0.0, 1.0, 1e-30, 3, |x| x > 0.3).is_err());
    }
}

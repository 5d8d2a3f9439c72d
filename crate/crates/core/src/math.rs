//! Scalar math helpers and the protected-operator guards.
//!
//! Every place that divides, takes a log, or exponentiates during expression
//! evaluation goes through the `protected_*` functions below, so candidate
//! expressions stay finite on arbitrary finite inputs. The guard constants and
//! their derivative conventions live here and nowhere else.

/// Division guard: `a / b` becomes `a / (sign(b) * max(|b|, EPS_DIV))`.
pub const EPS_DIV: f64 = 1e-6;
/// Log guard: `log(a)` becomes `log(max(|a|, EPS_LOG))`.
pub const EPS_LOG: f64 = 1e-6;
/// Exp clamp: arguments are clipped to `[-EXP_MAX, EXP_MAX]`.
pub const EXP_MAX: f64 = 40.0;

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Guarded denominator: `sign(b) * max(|b|, EPS_DIV)`, with `sign(0) = +1`.
#[inline]
pub fn guarded_denom(b: f64) -> f64 {
    sign(b) * if abs(b) > EPS_DIV { abs(b) } else { EPS_DIV }
}

#[inline]
pub fn protected_div(a: f64, b: f64) -> f64 {
    a / guarded_denom(b)
}

/// Partial derivatives of `protected_div` w.r.t. `(a, b)`.
///
/// Inside the guard band the denominator is constant in `b`, so the second
/// partial is zero there.
#[inline]
pub fn protected_div_grad(a: f64, b: f64) -> (f64, f64) {
    let d = guarded_denom(b);
    let da = 1.0 / d;
    let db = if abs(b) > EPS_DIV { -a / (d * d) } else { 0.0 };
    (da, db)
}

#[inline]
pub fn protected_log(a: f64) -> f64 {
    ln(if abs(a) > EPS_LOG { abs(a) } else { EPS_LOG })
}

/// Derivative of `protected_log`: `1/a` outside the guard band, `0` inside.
#[inline]
pub fn protected_log_grad(a: f64) -> f64 {
    if abs(a) > EPS_LOG {
        1.0 / a
    } else {
        0.0
    }
}

#[inline]
pub fn protected_exp(a: f64) -> f64 {
    exp(a.clamp(-EXP_MAX, EXP_MAX))
}

/// Derivative of `protected_exp`: zero once the argument is clamped.
#[inline]
pub fn protected_exp_grad(a: f64) -> f64 {
    if abs(a) < EXP_MAX {
        protected_exp(a)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn division_by_zero_is_guarded() {
        assert_eq!(protected_div(1.0, 0.0), 1e6);
        assert_eq!(protected_div(1.0, -0.0), 1e6);
        assert_eq!(protected_div(6.0, 3.0), 2.0);
        assert_eq!(protected_div(6.0, -3.0), -2.0);
        // sign is preserved through the guard band
        assert!(protected_div(1.0, -1e-9) < 0.0);
    }

    #[test]
    fn log_and_exp_stay_finite() {
        assert!(protected_log(0.0).is_finite());
        assert_eq!(protected_log(-core::f64::consts::E), 1.0);
        assert!(protected_exp(1e9).is_finite());
        assert_eq!(protected_exp(0.0), 1.0);
    }

    #[test]
    fn guard_band_derivatives_are_zero() {
        assert_eq!(protected_div_grad(1.0, 0.0).1, 0.0);
        assert_eq!(protected_log_grad(0.0), 0.0);
        assert_eq!(protected_exp_grad(100.0), 0.0);
    }
}

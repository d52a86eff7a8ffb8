//! Gaussian CDF helpers and the inverse Mills ratio `phi(t) / Phi(t)`.
//!
//! The ratio appears in the one-bit likelihood gradient. A direct quotient
//! breaks down once `Phi(t)` underflows (around `t = -38`), so everything is
//! routed through the Mills ratio `R(x) = (1 - Phi(x)) / phi(x)` for
//! `x >= 0`, which stays well scaled:
//!
//! - `t < 0`:  `phi(t) / Phi(t) = 1 / R(-t)`
//! - `t >= 0`: `phi(t) / Phi(t) = phi(t) / (1 - phi(t) R(t))`
//!
//! `R` uses a positive-term series below [`CF_SWITCH`] and the Laplace
//! continued fraction above it.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use crate::geometry::C64;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SQRT_FRAC_PI_2: f64 = 1.253_314_137_315_500_3;

/// Continued fraction above this argument, series below.
const CF_SWITCH: f64 = 2.0;

/// Standard normal density.
pub fn normal_pdf(t: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * t * t).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t < 0.0 {
        normal_pdf(t) * mills_ratio(-t)
    } else {
        1.0 - normal_pdf(t) * mills_ratio(t)
    }
}

/// `x + 1/(x + 2/(x + 3/(x + ...)))`, the reciprocal of the Mills ratio.
/// Modified Lentz evaluation.
fn reciprocal_mills_cf(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for n in 1..20_000 {
        let a = n as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    f
}

/// `R(x) = sqrt(pi/2) exp(x^2/2) - sqrt 2 * S(x / sqrt 2)` with
/// `S(u) = sum_n 2^n u^(2n+1) / (2n+1)!!`, for `0 <= x < CF_SWITCH`.
fn mills_ratio_series(x: f64) -> f64 {
    let u = x * FRAC_1_SQRT_2;
    let two_u2 = 2.0 * u * u;
    let mut term = u;
    let mut sum = u;
    let mut n = 0.0;
    while term > 1e-17 * sum {
        n += 1.0;
        term *= two_u2 / (2.0 * n + 1.0);
        sum += term;
    }
    SQRT_FRAC_PI_2 * (0.5 * x * x).exp() - SQRT_2 * sum
}

/// Mills ratio `(1 - Phi(x)) / phi(x)` for `x >= 0`.
pub fn mills_ratio(x: f64) -> f64 {
    debug_assert!(x >= 0.0 || x.is_nan());
    if x < CF_SWITCH {
        mills_ratio_series(x)
    } else {
        1.0 / reciprocal_mills_cf(x)
    }
}

/// Inverse Mills ratio `phi(t) / Phi(t)`: positive, finite, tends to `-t`
/// as `t -> -inf` and to 0 as `t -> +inf`. NaN propagates.
pub fn inverse_mills(t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t < 0.0 {
        if -t < CF_SWITCH {
            1.0 / mills_ratio_series(-t)
        } else {
            reciprocal_mills_cf(-t)
        }
    } else {
        let pdf = normal_pdf(t);
        if pdf == 0.0 {
            return 0.0;
        }
        pdf / (1.0 - pdf * mills_ratio(t))
    }
}

/// The MM kernel `I'(d)`: minus the inverse Mills ratio applied to the real
/// and imaginary parts separately. Returns `None` for NaN input.
pub fn i_prime(d: C64) -> Option<C64> {
    if d.re.is_nan() || d.im.is_nan() {
        return None;
    }
    Some(C64::new(-inverse_mills(d.re), -inverse_mills(d.im)))
}

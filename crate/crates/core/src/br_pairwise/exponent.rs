//! Semivariogram and the Husler-Reiss bivariate exponent of Brown-Resnick
//! pairs.

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub(crate) fn check_br_theta(lambda: f64, nu: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("range lambda must be positive, got {lambda}")));
    }
    if !(nu > 0.0 && nu <= 2.0) {
        return Err(Error::invalid(format!("smoothness nu must lie in (0, 2], got {nu}")));
    }
    Ok(())
}

/// `gamma(h) = (h / lambda)^nu`.
pub fn semivariogram<T: Scalar>(h: T, lambda: f64, nu: f64) -> Result<T> {
    check_br_theta(lambda, nu)?;
    if !(h >= T::zero()) {
        return Err(Error::invalid(format!("distance must be non-negative, got {h}")));
    }
    Ok((h / cast(lambda)).powf(cast(nu)))
}

pub(crate) fn semivariogram_unchecked(h: f64, lambda: f64, nu: f64) -> f64 {
    (h / lambda).powf(nu)
}

/// Standard normal CDF through the complementary error function.
pub fn norm_cdf<T: Scalar>(x: T) -> T {
    let half: T = cast(0.5);
    half * (-x * cast(std::f64::consts::FRAC_1_SQRT_2)).erfc()
}

pub fn norm_pdf<T: Scalar>(x: T) -> T {
    let half: T = cast(0.5);
    (-half * x * x - cast(LN_SQRT_2PI)).exp()
}

/// `ln Phi(x)`, accurate in the far lower tail where `Phi` underflows.
pub(crate) fn ln_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return norm_cdf(x).ln();
    }
    let x2 = x * x;
    // Mills-ratio series
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - LN_SQRT_2PI - (-x).ln() + series.ln()
}

/// Exponent function and partials at `(z1, z2)` for dependence `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrExponent<T> {
    pub v: T,
    pub v1: T,
    pub v2: T,
    pub v12: T,
}

/// Husler-Reiss exponent
/// `V = Phi(w) / z1 + Phi(v) / z2` with `w = a/2 + ln(z2/z1)/a`, `v = a - w`.
///
/// Because `phi(w) z2 = phi(v) z1`, the partials collapse to
/// `V1 = -Phi(w) / z1^2`, `V2 = -Phi(v) / z2^2` and
/// `V12 = -phi(w) / (a z1^2 z2)`.
pub fn hr_exponent<T: Scalar>(z1: T, z2: T, a: T) -> Result<HrExponent<T>> {
    if !(z1 > T::zero() && z2 > T::zero() && a > T::zero()) || !(z1 * z2 * a).is_finite() {
        return Err(Error::invalid(format!(
            "exponent needs positive finite arguments, got z1={z1}, z2={z2}, a={a}"
        )));
    }
    let half: T = cast(0.5);
    let w = half * a + (z2 / z1).ln() / a;
    let v = a - w;
    let (pw, pv) = (norm_cdf(w), norm_cdf(v));
    Ok(HrExponent {
        v: pw / z1 + pv / z2,
        v1: -pw / (z1 * z1),
        v2: -pv / (z2 * z2),
        v12: -norm_pdf(w) / (a * z1 * z1 * z2),
    })
}

/// `ln(V1 V2 - V12) - V`, the log density of one pair.
pub fn bivariate_log_likelihood(z1: f64, z2: f64, a: f64) -> Result<f64> {
    if !(z1 > 0.0 && z2 > 0.0 && a > 0.0) || !(z1 * z2 * a).is_finite() {
        return Err(Error::invalid(format!(
            "bivariate density needs positive finite arguments, got z1={z1}, z2={z2}, a={a}"
        )));
    }
    let (l1, l2) = (z1.ln(), z2.ln());
    Ok(pair_term(1.0 / z1, 1.0 / z2, l1, l2, a, a.ln()))
}

/// Pair contribution with the logs and reciprocals precomputed.
#[inline]
pub(crate) fn pair_term(iz1: f64, iz2: f64, l1: f64, l2: f64, a: f64, ln_a: f64) -> f64 {
    let r = l2 - l1;
    let w = 0.5 * a + r / a;
    let v = a - w;
    let pw = norm_cdf(w);
    let pv = norm_cdf(v);
    let exponent = pw * iz1 + pv * iz2;
    let dw = norm_pdf(w);
    // V1 V2 - V12 = [Phi(w) Phi(v) + phi(w) z2 / a] / (z1^2 z2^2)
    let inner = pw * pv + dw * l2.exp() / a;
    let log_inner = if inner > 1e-290 && inner.is_finite() {
        inner.ln()
    } else {
        let t1 = ln_norm_cdf(w) + ln_norm_cdf(v);
        let t2 = -0.5 * w * w - LN_SQRT_2PI + l2 - ln_a;
        let hi = t1.max(t2);
        hi + ((t1 - hi).exp() + (t2 - hi).exp()).ln()
    };
    log_inner - 2.0 * (l1 + l2) - exponent
}

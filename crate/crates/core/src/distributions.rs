//! Error distributions used by the simulation design and the expectation
//! diagnostics: the standard normal and Student's t with four degrees of
//! freedom, plus a uniform density for discontinuity checks.

use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

/// 1/√(2π)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // one Halley step against the accurate cdf
    let r = (normal_cdf(x) - p) / normal_pdf(x);
    x - r / (1.0 + 0.5 * x * r)
}

/// Density of Student's t with 4 degrees of freedom.
pub fn t4_pdf(t: f64) -> f64 {
    0.375 * (1.0 + 0.25 * t * t).powf(-2.5)
}

pub fn t4_pdf_derivative(t: f64) -> f64 {
    -0.468_75 * t * (1.0 + 0.25 * t * t).powf(-3.5)
}

/// Closed-form t₄ CDF, F(t) = 1/2 + s(3 − s²)/4 with s = t/√(t²+4),
/// evaluated through the tail form (1 − |s|)²(2 + |s|)/4 to keep
/// relative accuracy far out in either tail.
pub fn t4_cdf(t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let r = (t * t + 4.0).sqrt();
    let a = t.abs();
    // 1 - |s| without cancellation
    let one_minus = 4.0 / (r * (r + a));
    let s = a / r;
    let tail = one_minus * one_minus * (2.0 + s) / 4.0;
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// t₄ quantile by bisection on the tail probability to an absolute width of
/// 1e-12 (relative for large |t|).
pub fn t4_quantile(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if p == 0.5 {
        return 0.0;
    }
    let q = p.min(1.0 - p);
    let sign = if p < 0.5 { -1.0 } else { 1.0 };
    if q <= 0.0 {
        return sign * f64::INFINITY;
    }
    // tail(a) = P(T < -a) is decreasing in a
    let tail = |a: f64| t4_cdf(-a);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while tail(hi) > q {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    sign * 0.5 * (lo + hi)
}

/// Distribution of the raw simulation noise ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorDist {
    Normal01,
    StudentT4,
}

impl ErrorDist {
    pub fn pdf(self, x: f64) -> f64 {
        match self {
            ErrorDist::Normal01 => normal_pdf(x),
            ErrorDist::StudentT4 => t4_pdf(x),
        }
    }

    pub fn cdf(self, x: f64) -> f64 {
        match self {
            ErrorDist::Normal01 => normal_cdf(x),
            ErrorDist::StudentT4 => t4_cdf(x),
        }
    }

    pub fn quantile(self, p: f64) -> f64 {
        match self {
            ErrorDist::Normal01 => normal_quantile(p),
            ErrorDist::StudentT4 => t4_quantile(p),
        }
    }
}

/// The τ-quantile F_ε⁻¹(τ) subtracted from ε so that the τ-quantile of
/// the regression error is zero.
pub fn error_quantile_shift(dist: ErrorDist, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau(tau));
    }
    Ok(dist.quantile(tau))
}

/// A univariate density for expectations of the form E[g(e)].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorDensity {
    /// Density of ε − shift where ε follows `dist`.
    Shifted { dist: ErrorDist, shift: f64 },
    /// Uniform on [lo, hi]; discontinuous at both ends.
    Uniform { lo: f64, hi: f64 },
}

impl ErrorDensity {
    pub fn standard_normal() -> Self {
        ErrorDensity::Shifted {
            dist: ErrorDist::Normal01,
            shift: 0.0,
        }
    }

    /// Density of the centred regression error e = ε − F_ε⁻¹(τ).
    pub fn centred(dist: ErrorDist, tau: f64) -> Result<Self> {
        Ok(ErrorDensity::Shifted {
            dist,
            shift: error_quantile_shift(dist, tau)?,
        })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            ErrorDensity::Shifted { dist, shift } => dist.pdf(x + shift),
            ErrorDensity::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }

    /// f′(x); `None` where the density is not differentiable.
    pub fn pdf_derivative(&self, x: f64) -> Option<f64> {
        match *self {
            ErrorDensity::Shifted { dist, shift } => {
                let z = x + shift;
                Some(match dist {
                    ErrorDist::Normal01 => -z * normal_pdf(z),
                    ErrorDist::StudentT4 => t4_pdf_derivative(z),
                })
            }
            ErrorDensity::Uniform { lo, hi } => {
                if x == lo || x == hi {
                    None
                } else {
                    Some(0.0)
                }
            }
        }
    }

    pub fn is_continuous_at(&self, x: f64) -> bool {
        match *self {
            ErrorDensity::Shifted { .. } => true,
            ErrorDensity::Uniform { lo, hi } => x != lo && x != hi,
        }
    }

    /// ∫|f′|, the total variation of the density (unimodal cases: 2·max f).
    pub fn derivative_total_variation(&self) -> Option<f64> {
        match *self {
            ErrorDensity::Shifted { dist, .. } => Some(2.0 * dist.pdf(0.0)),
            ErrorDensity::Uniform { .. } => None,
        }
    }

    /// Interval carrying all but a negligible amount of the mass, for
    /// truncating quadrature over the real line.
    pub fn effective_support(&self) -> (f64, f64) {
        match *self {
            ErrorDensity::Shifted { dist, shift } => {
                let r = match dist {
                    ErrorDist::Normal01 => 12.0,
                    // tail mass beyond ±1e4 is below 1e-15
                    ErrorDist::StudentT4 => 1.0e4,
                };
                (-r - shift, r - shift)
            }
            ErrorDensity::Uniform { lo, hi } => (lo, hi),
        }
    }
}

//! Mollifier densities φ: the standard normal and the compact bump
//! φ(v) = C·exp(−1/(1−v²)) on (−1, 1).
//!
//! Besides point values and derivatives, each kernel exposes partial
//! moments ∫ₐᵇ vᵏ φ(v) dv for k = 0, 1, 2. Every catalog loss is piecewise
//! quadratic, so its mollification reduces to these partial moments. For the
//! Gaussian they are closed form; for the bump they come from a table of
//! cumulative integrals interpolated by quintic Hermite polynomials.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::distributions::{normal_cdf, normal_pdf, INV_SQRT_2PI};
use crate::error::{Error, Result};
use crate::quadrature::{self, GaussLegendre};

/// Half-width of the truncated Gaussian integration window.
pub const GAUSSIAN_WINDOW: f64 = 8.0;

/// Below this value of 1 − v², the bump is reported as exactly zero.
const BUMP_EDGE_GUARD: f64 = 1e-12;

const NORMALIZER_TOL: f64 = 1e-12;
const MOMENT_TOL: f64 = 1e-13;
const TABLE_INTERVALS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MollifierKernel {
    Gaussian,
    CompactBump,
}

impl MollifierKernel {
    /// Closed support of φ. The Gaussian is unbounded.
    pub fn support(self) -> (f64, f64) {
        match self {
            MollifierKernel::Gaussian => (f64::NEG_INFINITY, f64::INFINITY),
            MollifierKernel::CompactBump => (-1.0, 1.0),
        }
    }

    /// Half-width of the window used for quadrature in v-space.
    pub fn radius(self) -> f64 {
        match self {
            MollifierKernel::Gaussian => GAUSSIAN_WINDOW,
            MollifierKernel::CompactBump => 1.0,
        }
    }

    /// The constant in front of the unnormalised shape.
    pub fn normalizer(self) -> f64 {
        match self {
            MollifierKernel::Gaussian => INV_SQRT_2PI,
            MollifierKernel::CompactBump => bump_normalizer(),
        }
    }

    /// φ(v).
    pub fn value(self, v: f64) -> f64 {
        match self {
            MollifierKernel::Gaussian => normal_pdf(v),
            MollifierKernel::CompactBump => bump_normalizer() * bump_shape(v),
        }
    }

    /// φ⁽ᵒʳᵈᵉʳ⁾(v) for order 0, 1 or 2.
    pub fn derivative(self, v: f64, order: u32) -> Result<f64> {
        if order > 2 {
            return Err(Error::UnsupportedOrder(order));
        }
        Ok(match self {
            MollifierKernel::Gaussian => {
                let p = normal_pdf(v);
                match order {
                    0 => p,
                    1 => -v * p,
                    _ => (v * v - 1.0) * p,
                }
            }
            MollifierKernel::CompactBump => {
                let w = 1.0 - v * v;
                if w < BUMP_EDGE_GUARD {
                    return Ok(0.0);
                }
                let p = bump_normalizer() * (-1.0 / w).exp();
                match order {
                    0 => p,
                    1 => p * bump_log_slope(v, w),
                    _ => p * bump_curvature_factor(v, w),
                }
            }
        })
    }

    /// μₖ = ∫ |v|ᵏ φ(v) dv for k ≤ 2.
    pub fn abs_moment(self, k: u32) -> Result<f64> {
        if k > 2 {
            return Err(Error::UnsupportedMoment(k));
        }
        Ok(match self {
            MollifierKernel::Gaussian => match k {
                0 => 1.0,
                1 => (2.0 / std::f64::consts::PI).sqrt(),
                _ => 1.0,
            },
            MollifierKernel::CompactBump => bump_abs_moments()[k as usize],
        })
    }

    /// [∫ₐᵇ φ, ∫ₐᵇ vφ, ∫ₐᵇ v²φ]; endpoints may be infinite.
    pub fn partial_moments(self, a: f64, b: f64) -> [f64; 3] {
        let hi = self.cumulative_moments(b);
        let lo = self.cumulative_moments(a);
        [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]]
    }

    /// [∫₋∞ᵗ φ, ∫₋∞ᵗ vφ, ∫₋∞ᵗ v²φ].
    pub fn cumulative_moments(self, t: f64) -> [f64; 3] {
        match self {
            MollifierKernel::Gaussian => {
                if t == f64::INFINITY {
                    return [1.0, 0.0, 1.0];
                }
                if t == f64::NEG_INFINITY {
                    return [0.0, 0.0, 0.0];
                }
                let cdf = normal_cdf(t);
                let pdf = normal_pdf(t);
                [cdf, -pdf, cdf - t * pdf]
            }
            MollifierKernel::CompactBump => bump_table().eval(t),
        }
    }
}

impl fmt::Display for MollifierKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MollifierKernel::Gaussian => f.write_str("gaussian"),
            MollifierKernel::CompactBump => f.write_str("bump"),
        }
    }
}

impl FromStr for MollifierKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(MollifierKernel::Gaussian),
            "bump" | "compact_bump" | "compactbump" => Ok(MollifierKernel::CompactBump),
            other => Err(Error::KernelSyntax(other.to_string())),
        }
    }
}

/// exp(−1/(1−v²)) on (−1, 1), zero elsewhere.
fn bump_shape(v: f64) -> f64 {
    let w = 1.0 - v * v;
    if w < BUMP_EDGE_GUARD {
        0.0
    } else {
        (-1.0 / w).exp()
    }
}

/// φ′/φ = −2v/(1−v²)².
fn bump_log_slope(v: f64, w: f64) -> f64 {
    -2.0 * v / (w * w)
}

/// φ″/φ = 4v²/w⁴ − 2/w² − 8v²/w³ with w = 1 − v².
fn bump_curvature_factor(v: f64, w: f64) -> f64 {
    let w2 = w * w;
    let v2 = v * v;
    4.0 * v2 / (w2 * w2) - 2.0 / w2 - 8.0 * v2 / (w2 * w)
}

/// C = 1 / ∫₋₁¹ exp(−1/(1−v²)) dv, computed once.
pub fn bump_normalizer() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        let mass = quadrature::integrate_split(
            &bump_shape,
            -1.0,
            1.0,
            &[-0.99, 0.99],
            NORMALIZER_TOL,
        );
        1.0 / mass
    })
}

fn bump_abs_moments() -> &'static [f64; 3] {
    static MOMENTS: OnceLock<[f64; 3]> = OnceLock::new();
    MOMENTS.get_or_init(|| {
        let c = bump_normalizer();
        let mut out = [0.0; 3];
        for (k, slot) in out.iter_mut().enumerate() {
            let f = |v: f64| c * v.powi(k as i32) * bump_shape(v);
            // symmetric integrand: twice the half-line
            *slot = 2.0 * quadrature::integrate_split(&f, 0.0, 1.0, &[0.99], MOMENT_TOL);
        }
        out
    })
}

/// Cumulative moments of the bump on a uniform grid over [−1, 1], with the
/// first two derivatives at each node for quintic Hermite interpolation.
struct MomentTable {
    step: f64,
    // per node: F_k, F_k', F_k'' for k = 0, 1, 2
    values: Vec<[f64; 3]>,
    slopes: Vec<[f64; 3]>,
    curvatures: Vec<[f64; 3]>,
}

fn bump_table() -> &'static MomentTable {
    static TABLE: OnceLock<MomentTable> = OnceLock::new();
    TABLE.get_or_init(MomentTable::build)
}

impl MomentTable {
    fn build() -> Self {
        let n = TABLE_INTERVALS;
        let step = 2.0 / n as f64;
        let kernel = MollifierKernel::CompactBump;
        let rule = GaussLegendre::new(20);
        let node = |i: usize| -1.0 + step * i as f64;

        let mut values = Vec::with_capacity(n + 1);
        let mut slopes = Vec::with_capacity(n + 1);
        let mut curvatures = Vec::with_capacity(n + 1);
        let mut acc = [0.0f64; 3];
        // Neumaier compensation for the running sums.
        let mut comp = [0.0f64; 3];
        for i in 0..=n {
            let t = node(i);
            if i > 0 {
                let a = node(i - 1);
                for (k, (s, c)) in acc.iter_mut().zip(comp.iter_mut()).enumerate() {
                    let piece =
                        rule.integrate(&|v: f64| v.powi(k as i32) * kernel.value(v), a, t);
                    let sum = *s + piece;
                    if s.abs() >= piece.abs() {
                        *c += (*s - sum) + piece;
                    } else {
                        *c += (piece - sum) + *s;
                    }
                    *s = sum;
                }
            }
            values.push([acc[0] + comp[0], acc[1] + comp[1], acc[2] + comp[2]]);
            let p = kernel.value(t);
            let dp = kernel.derivative(t, 1).unwrap_or(0.0);
            slopes.push([p, t * p, t * t * p]);
            curvatures.push([dp, p + t * dp, 2.0 * t * p + t * t * dp]);
        }
        // Pin the totals so that ρₘ reproduces ρ exactly away from the kinks:
        // unit mass, zero first moment.
        let mass = values[n][0];
        for v in values.iter_mut() {
            v[0] /= mass;
        }
        values[n][0] = 1.0;
        values[n][1] = 0.0;
        Self {
            step,
            values,
            slopes,
            curvatures,
        }
    }

    fn eval(&self, t: f64) -> [f64; 3] {
        let last = self.values.len() - 1;
        if t.is_nan() {
            return [f64::NAN; 3];
        }
        if t <= -1.0 {
            return [0.0; 3];
        }
        if t >= 1.0 {
            return self.values[last];
        }
        let pos = (t + 1.0) / self.step;
        let i = (pos.floor() as usize).min(last - 1);
        let s = pos - i as f64;
        let h = self.step;

        let s2 = s * s;
        let s3 = s2 * s;
        let s4 = s3 * s;
        let s5 = s4 * s;
        let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
        let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
        let h2 = 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5);
        let h3 = 0.5 * (s3 - 2.0 * s4 + s5);
        let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
        let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;

        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.values[i][k] * h0
                + h * self.slopes[i][k] * h1
                + h * h * self.curvatures[i][k] * h2
                + h * h * self.curvatures[i + 1][k] * h3
                + h * self.slopes[i + 1][k] * h4
                + self.values[i + 1][k] * h5;
        }
        out
    }
}

//! Regular-sequence engine: ρₘ = ρ ∗ φₘ with φₘ(x) = mφ(mx), and its first
//! two derivatives.
//!
//! Three evaluation routes are available:
//!
//! * [`Method::ClosedForm`]: Gaussian kernel with the absolute, check or
//!   ReLU loss, via the standard normal CDF and density.
//! * [`Method::Quadrature`]: kink-split Gauss–Legendre quadrature of
//!   ∫ ρ(u + v/m) φ(v) dv. Works for every loss/kernel pair.
//! * [`Method::Moments`]: every catalog loss is piecewise quadratic, so ρₘ
//!   is a finite sum of kernel partial moments ∫ₐᵇ vᵏφ(v) dv. Closed form
//!   for the Gaussian, tabulated for the bump. This is the fast route used
//!   when fitting.
//!
//! Derivatives use the subgradient: ρₘ′(u) = ∫ ψ(u + v/m) φ(v) dv and
//! ρₘ″(u) = −m ∫ ψ(u + v/m) φ′(v) dv.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{normal_cdf, normal_pdf, ErrorDensity};
use crate::error::{Error, Result};
use crate::kernels::MollifierKernel;
use crate::losses::{LossKind, LossSpec};
use crate::quadrature;

/// Absolute tolerance of the quadrature route.
pub const QUADRATURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    Moments,
}

/// ρₘ(u) together with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedLoss {
    loss: LossSpec,
    kernel: MollifierKernel,
    scale: f64,
    method: Method,
}

fn has_closed_form(loss: &LossSpec, kernel: MollifierKernel) -> bool {
    kernel == MollifierKernel::Gaussian && !matches!(loss.kind(), LossKind::Huber { .. })
}

impl SmoothedLoss {
    /// Uses the closed form where it exists, the moment route for the bump
    /// and quadrature otherwise.
    pub fn new(loss: LossSpec, kernel: MollifierKernel, m: f64) -> Result<Self> {
        let method = if has_closed_form(&loss, kernel) {
            Method::ClosedForm
        } else if kernel == MollifierKernel::CompactBump {
            Method::Moments
        } else {
            Method::Quadrature
        };
        Self::with_method(loss, kernel, m, method)
    }

    pub fn with_method(
        loss: LossSpec,
        kernel: MollifierKernel,
        m: f64,
        method: Method,
    ) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidScale(m));
        }
        if method == Method::ClosedForm && !has_closed_form(&loss, kernel) {
            return Err(Error::ClosedFormUnavailable {
                loss: loss.to_string(),
                kernel: kernel.to_string(),
            });
        }
        Ok(Self {
            loss,
            kernel,
            scale: m,
            method,
        })
    }

    pub fn loss(&self) -> &LossSpec {
        &self.loss
    }

    pub fn kernel(&self) -> MollifierKernel {
        self.kernel
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// ρₘ(u).
    pub fn value(&self, u: f64) -> f64 {
        match self.method {
            Method::ClosedForm => self.closed_form(u).value,
            Method::Quadrature => {
                let m = self.scale;
                let f = |v: f64| self.loss.value(u + v / m) * self.kernel.value(v);
                self.integrate_v(&f, u)
            }
            Method::Moments => self.moments(u, false).value,
        }
    }

    /// ρₘ′(u).
    pub fn derivative(&self, u: f64) -> f64 {
        match self.method {
            Method::ClosedForm => self.closed_form(u).first,
            Method::Quadrature => {
                let m = self.scale;
                let f = |v: f64| self.loss.subgradient(u + v / m) * self.kernel.value(v);
                self.integrate_v(&f, u)
            }
            Method::Moments => self.moments(u, false).first,
        }
    }

    /// ρₘ″(u).
    pub fn second_derivative(&self, u: f64) -> f64 {
        match self.method {
            Method::ClosedForm => self.closed_form(u).second,
            Method::Quadrature => {
                let m = self.scale;
                let kernel = self.kernel;
                let f = |v: f64| {
                    self.loss.subgradient(u + v / m) * kernel.derivative(v, 1).unwrap_or(0.0)
                };
                -m * self.integrate_v(&f, u)
            }
            Method::Moments => self.moments(u, true).second,
        }
    }

    /// Value and both derivatives in one pass.
    pub fn evaluate(&self, u: f64) -> Derivatives {
        match self.method {
            Method::ClosedForm => self.closed_form(u),
            Method::Moments => self.moments(u, true),
            Method::Quadrature => Derivatives {
                value: self.value(u),
                first: self.derivative(u),
                second: self.second_derivative(u),
            },
        }
    }

    /// Kinks of ρ mapped into v-space: v* = m(k − u).
    fn split_points(&self, u: f64) -> Vec<f64> {
        self.loss
            .kinks()
            .into_iter()
            .map(|k| self.scale * (k - u))
            .collect()
    }

    fn integrate_v<F: Fn(f64) -> f64>(&self, f: &F, u: f64) -> f64 {
        let r = self.kernel.radius();
        let mut breaks = self.split_points(u);
        if self.kernel == MollifierKernel::CompactBump {
            // the bump is extremely flat near its edges
            breaks.extend([-0.99, 0.99]);
        }
        quadrature::integrate_split(f, -r, r, &breaks, QUADRATURE_TOL)
    }

    fn closed_form(&self, u: f64) -> Derivatives {
        let m = self.scale;
        let z = m * u;
        let cdf = normal_cdf(z);
        let pdf = normal_pdf(z);
        let abs = Derivatives {
            value: u * (2.0 * cdf - 1.0) + 2.0 * pdf / m,
            first: 2.0 * cdf - 1.0,
            second: 2.0 * m * pdf,
        };
        match self.loss.kind() {
            LossKind::Absolute => abs,
            LossKind::Check { tau } => Derivatives {
                value: (tau - 0.5) * u + 0.5 * abs.value,
                first: (tau - 0.5) + 0.5 * abs.first,
                second: m * pdf,
            },
            LossKind::Relu => Derivatives {
                value: u * cdf + pdf / m,
                first: cdf,
                second: m * pdf,
            },
            LossKind::Huber { .. } => unreachable!("closed form excluded at construction"),
        }
    }

    fn moments(&self, u: f64, with_second: bool) -> Derivatives {
        let m = self.scale;
        let (lo_support, hi_support) = self.kernel.support();
        let mut value = 0.0;
        let mut first = 0.0;
        let mut second = 0.0;
        for piece in self.loss.quadratic_pieces() {
            let a = (m * (piece.lo - u)).max(lo_support);
            let b = (m * (piece.hi - u)).min(hi_support);
            if a >= b {
                continue;
            }
            let [p0, p1, p2] = self.kernel.partial_moments(a, b);
            let [c0, c1, c2] = piece.coef;
            let slope_at_u = c1 + 2.0 * c2 * u;
            value += (c0 + c1 * u + c2 * u * u) * p0 + slope_at_u / m * p1 + c2 / (m * m) * p2;
            first += slope_at_u * p0 + 2.0 * c2 / m * p1;
            second += 2.0 * c2 * p0;
        }
        if with_second {
            for atom in self.loss.curvature().atoms {
                second += atom.mass * m * self.kernel.value(m * (atom.location - u));
            }
        }
        Derivatives {
            value,
            first,
            second,
        }
    }
}

/// max over `grid` of |ρₘ(u) − ρ(u)|; zero for an empty grid.
pub fn sup_error(s: &SmoothedLoss, grid: &[f64]) -> f64 {
    grid.par_iter()
        .map(|&u| (s.value(u) - s.loss().value(u)).abs())
        .reduce(|| 0.0, f64::max)
}

/// The bound L·μ₁/m on the uniform approximation error.
pub fn uniform_error_bound(s: &SmoothedLoss) -> f64 {
    let mu1 = s
        .kernel()
        .abs_moment(1)
        .expect("first absolute moment is always available");
    s.loss().lipschitz() * mu1 / s.scale()
}

/// E|ρₘ′(e) − ψ(e)| under `density`, by quadrature over the windows where
/// the two can differ, split at the kinks and at kink ± 1/m.
pub fn expected_derivative_gap(
    loss: &LossSpec,
    kernel: MollifierKernel,
    m: f64,
    density: &ErrorDensity,
) -> Result<f64> {
    let s = SmoothedLoss::new(*loss, kernel, m)?;
    let reach = kernel.radius() / m;
    let (lo_d, hi_d) = density.effective_support();

    let mut windows: Vec<(f64, f64)> = loss
        .kinks()
        .into_iter()
        .map(|k| ((k - reach).max(lo_d), (k + reach).min(hi_d)))
        .filter(|(a, b)| a < b)
        .collect();
    windows.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in windows {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }

    let mut breaks = Vec::new();
    for k in loss.kinks() {
        breaks.extend([k, k - 1.0 / m, k + 1.0 / m]);
    }
    let integrand = |u: f64| (s.derivative(u) - loss.subgradient(u)).abs() * density.pdf(u);
    Ok(merged
        .into_iter()
        .map(|(a, b)| quadrature::integrate_split(&integrand, a, b, &breaks, 1e-14))
        .sum())
}

/// Points lo, lo + step, … up to hi (inclusive within rounding).
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || hi < lo {
        return Vec::new();
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=count).map(|i| lo + step * i as f64).collect()
}

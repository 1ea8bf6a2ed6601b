//! Nonsmooth convex losses: absolute, check (quantile), Huber and ReLU.
//!
//! Each loss carries its Lipschitz constant, the locations where it fails to
//! be twice differentiable, and its curvature measure: the distributional
//! second derivative split into point masses at kinks plus a piecewise
//! constant density.

use std::fmt;
use std::str::FromStr;

use crate::distributions::ErrorDensity;
use crate::error::{Error, Result};
use crate::quadrature;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Absolute,
    Check { tau: f64 },
    Huber { c: f64 },
    Relu,
}

/// A validated catalog loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    kind: LossKind,
}

/// A point mass of ρ″.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

/// Constant density `value` of ρ″ on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityPiece {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurvatureMeasure {
    pub atoms: Vec<Atom>,
    pub density: Vec<DensityPiece>,
}

impl CurvatureMeasure {
    /// Absolutely continuous part of ρ″ at `u`.
    pub fn density_at(&self, u: f64) -> f64 {
        self.density
            .iter()
            .filter(|p| u >= p.lo && u <= p.hi)
            .map(|p| p.value)
            .sum()
    }
}

/// ρ(x) = c₀ + c₁x + c₂x² on `[lo, hi]` (endpoints may be infinite).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPiece {
    pub lo: f64,
    pub hi: f64,
    pub coef: [f64; 3],
}

impl LossSpec {
    pub fn absolute() -> Self {
        Self {
            kind: LossKind::Absolute,
        }
    }

    pub fn check(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidTau(tau));
        }
        Ok(Self {
            kind: LossKind::Check { tau },
        })
    }

    pub fn huber(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidHuberThreshold(c));
        }
        Ok(Self {
            kind: LossKind::Huber { c },
        })
    }

    pub fn relu() -> Self {
        Self {
            kind: LossKind::Relu,
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn lipschitz(&self) -> f64 {
        match self.kind {
            LossKind::Absolute | LossKind::Relu => 1.0,
            LossKind::Check { tau } => tau.max(1.0 - tau),
            LossKind::Huber { c } => c,
        }
    }

    /// Points where ρ is not twice differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match self.kind {
            LossKind::Huber { c } => vec![-c, c],
            _ => vec![0.0],
        }
    }

    /// False for ReLU, which has no unique minimiser.
    pub fn is_coercive(&self) -> bool {
        !matches!(self.kind, LossKind::Relu)
    }

    pub fn value(&self, u: f64) -> f64 {
        match self.kind {
            LossKind::Absolute => u.abs(),
            LossKind::Check { tau } => u * (tau - if u < 0.0 { 1.0 } else { 0.0 }),
            LossKind::Huber { c } => {
                if u.abs() <= c {
                    0.5 * u * u
                } else {
                    c * u.abs() - 0.5 * c * c
                }
            }
            LossKind::Relu => u.max(0.0),
        }
    }

    /// Right-continuous subgradient selection ψ(u).
    pub fn subgradient(&self, u: f64) -> f64 {
        match self.kind {
            LossKind::Absolute => {
                if u < 0.0 {
                    -1.0
                } else {
                    1.0
                }
            }
            LossKind::Check { tau } => tau - if u < 0.0 { 1.0 } else { 0.0 },
            LossKind::Huber { c } => u.clamp(-c, c),
            LossKind::Relu => {
                if u < 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    pub fn curvature(&self) -> CurvatureMeasure {
        match self.kind {
            LossKind::Absolute => CurvatureMeasure {
                atoms: vec![Atom {
                    location: 0.0,
                    mass: 2.0,
                }],
                density: vec![],
            },
            LossKind::Check { .. } | LossKind::Relu => CurvatureMeasure {
                atoms: vec![Atom {
                    location: 0.0,
                    mass: 1.0,
                }],
                density: vec![],
            },
            LossKind::Huber { c } => CurvatureMeasure {
                atoms: vec![],
                density: vec![DensityPiece {
                    lo: -c,
                    hi: c,
                    value: 1.0,
                }],
            },
        }
    }

    /// The loss as a list of quadratic pieces covering the real line.
    pub fn quadratic_pieces(&self) -> Vec<QuadraticPiece> {
        let ninf = f64::NEG_INFINITY;
        let inf = f64::INFINITY;
        let piece = |lo, hi, coef| QuadraticPiece { lo, hi, coef };
        match self.kind {
            LossKind::Absolute => vec![
                piece(ninf, 0.0, [0.0, -1.0, 0.0]),
                piece(0.0, inf, [0.0, 1.0, 0.0]),
            ],
            LossKind::Check { tau } => vec![
                piece(ninf, 0.0, [0.0, tau - 1.0, 0.0]),
                piece(0.0, inf, [0.0, tau, 0.0]),
            ],
            LossKind::Huber { c } => vec![
                piece(ninf, -c, [-0.5 * c * c, -c, 0.0]),
                piece(-c, c, [0.0, 0.0, 0.5]),
                piece(c, inf, [-0.5 * c * c, c, 0.0]),
            ],
            LossKind::Relu => vec![
                piece(ninf, 0.0, [0.0, 0.0, 0.0]),
                piece(0.0, inf, [0.0, 1.0, 0.0]),
            ],
        }
    }
}

/// a = E[ρ″(e)]: atom masses weighted by the density at each kink plus the
/// integral of the absolutely continuous part against the density.
pub fn expected_curvature(loss: &LossSpec, density: &ErrorDensity) -> Result<f64> {
    let measure = loss.curvature();
    let mut total = 0.0;
    for atom in &measure.atoms {
        if !density.is_continuous_at(atom.location) {
            return Err(Error::CurvatureUndefined(atom.location));
        }
        total += atom.mass * density.pdf(atom.location);
    }
    for piece in &measure.density {
        let f = |u: f64| piece.value * density.pdf(u);
        let (lo, hi) = density.effective_support();
        let a = piece.lo.max(lo);
        let b = piece.hi.min(hi);
        if a < b {
            total += quadrature::integrate(&f, a, b, 1e-13);
        }
    }
    Ok(total)
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LossKind::Absolute => f.write_str("abs"),
            LossKind::Check { tau } => write!(f, "check:{tau}"),
            LossKind::Huber { c } => write!(f, "huber:{c}"),
            LossKind::Relu => f.write_str("relu"),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let syntax = || Error::LossSyntax(s.to_string());
        let s_trim = s.trim();
        let (name, arg) = match s_trim.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s_trim, None),
        };
        let number = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(syntax)?.trim().parse::<f64>().map_err(|_| syntax())
        };
        match (name.to_ascii_lowercase().as_str(), arg) {
            ("abs", None) => Ok(LossSpec::absolute()),
            ("relu", None) => Ok(LossSpec::relu()),
            ("check", a @ Some(_)) => LossSpec::check(number(a)?),
            ("huber", a @ Some(_)) => LossSpec::huber(number(a)?),
            _ => Err(syntax()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{normal_cdf, INV_SQRT_2PI};
    use proptest::prelude::*;

    fn catalog() -> Vec<LossSpec> {
        vec![
            LossSpec::absolute(),
            LossSpec::check(0.3).unwrap(),
            LossSpec::check(0.85).unwrap(),
            LossSpec::huber(1.0).unwrap(),
            LossSpec::huber(1.345).unwrap(),
            LossSpec::relu(),
        ]
    }

    #[test]
    fn value_examples() {
        assert_eq!(LossSpec::relu().value(2.0), 2.0);
        assert!((LossSpec::check(0.3).unwrap().value(-1.0) - 0.7).abs() < 1e-15);
        assert_eq!(LossSpec::huber(1.0).unwrap().value(2.0), 1.5);
    }

    #[test]
    fn subgradient_examples() {
        assert_eq!(LossSpec::check(0.3).unwrap().subgradient(0.0), 0.3);
        assert_eq!(LossSpec::huber(1.5).unwrap().subgradient(-4.0), -1.5);
        assert_eq!(LossSpec::absolute().subgradient(2.0), 1.0);
        assert_eq!(LossSpec::absolute().subgradient(0.0), 1.0);
        assert_eq!(LossSpec::relu().subgradient(0.0), 1.0);
    }

    #[test]
    fn lipschitz_constants() {
        assert_eq!(LossSpec::absolute().lipschitz(), 1.0);
        assert_eq!(LossSpec::check(0.3).unwrap().lipschitz(), 0.7);
        assert_eq!(LossSpec::huber(2.5).unwrap().lipschitz(), 2.5);
        assert_eq!(LossSpec::relu().lipschitz(), 1.0);
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(matches!(LossSpec::check(0.0), Err(Error::InvalidTau(_))));
        assert!(LossSpec::check(1.0).is_err());
        assert!(LossSpec::check(f64::NAN).is_err());
        assert!(matches!(LossSpec::huber(0.0), Err(Error::InvalidHuberThreshold(_))));
        assert!(LossSpec::huber(-1.0).is_err());
    }

    #[test]
    fn curvature_examples() {
        let check = LossSpec::check(0.42).unwrap().curvature();
        assert_eq!(check.atoms, vec![Atom { location: 0.0, mass: 1.0 }]);
        assert!(check.density.is_empty());
        let abs = LossSpec::absolute().curvature();
        assert_eq!(abs.atoms[0].mass, 2.0);
        let huber = LossSpec::huber(1.0).unwrap().curvature();
        assert!(huber.atoms.is_empty());
        assert_eq!(huber.density_at(0.5), 1.0);
        assert_eq!(huber.density_at(1.5), 0.0);
    }

    #[test]
    fn atom_masses_equal_subgradient_jumps() {
        for loss in catalog() {
            let measure = loss.curvature();
            for k in loss.kinks() {
                let jump = loss.subgradient(k + 1e-9) - loss.subgradient(k - 1e-9);
                let mass: f64 = measure
                    .atoms
                    .iter()
                    .filter(|a| a.location == k)
                    .map(|a| a.mass)
                    .sum();
                assert!((jump - mass).abs() < 1e-6, "{loss} at {k}");
            }
        }
    }

    #[test]
    fn expected_curvature_examples() {
        let normal = ErrorDensity::standard_normal();
        let a = expected_curvature(&LossSpec::check(0.5).unwrap(), &normal).unwrap();
        assert!((a - INV_SQRT_2PI).abs() < 1e-15);
        let a = expected_curvature(&LossSpec::absolute(), &normal).unwrap();
        assert!((a - 2.0 * INV_SQRT_2PI).abs() < 1e-15);
        let a = expected_curvature(&LossSpec::huber(1.0).unwrap(), &normal).unwrap();
        let erf_based = 2.0 * normal_cdf(1.0) - 1.0;
        assert!((a - erf_based).abs() < 1e-12);
        assert!((a - 0.6827).abs() < 1e-4);
    }

    #[test]
    fn expected_curvature_rejects_discontinuous_density() {
        let u = ErrorDensity::Uniform { lo: 0.0, hi: 1.0 };
        assert!(matches!(
            expected_curvature(&LossSpec::absolute(), &u),
            Err(Error::CurvatureUndefined(_))
        ));
        // Huber has no atoms, so the same density is fine
        let a = expected_curvature(&LossSpec::huber(0.5).unwrap(), &u).unwrap();
        assert!((a - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grammar_round_trip() {
        for s in ["abs", "check:0.3", "huber:1.345", "relu"] {
            let loss: LossSpec = s.parse().unwrap();
            assert_eq!(loss.to_string(), s);
        }
        for bad in ["", "check", "check:x", "huber:-1", "l2", "abs:1", "check:1.5"] {
            assert!(bad.parse::<LossSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn pieces_reproduce_values() {
        for loss in catalog() {
            for i in -40..=40 {
                let u = 0.1 * i as f64 + 0.013;
                let p = loss
                    .quadratic_pieces()
                    .into_iter()
                    .find(|p| u >= p.lo && u <= p.hi)
                    .unwrap();
                let v = p.coef[0] + p.coef[1] * u + p.coef[2] * u * u;
                assert!((v - loss.value(u)).abs() < 1e-14, "{loss} at {u}");
            }
        }
    }

    fn loss_strategy() -> impl Strategy<Value = LossSpec> {
        prop_oneof![
            Just(LossSpec::absolute()),
            (0.01f64..0.99).prop_map(|t| LossSpec::check(t).unwrap()),
            (0.1f64..5.0).prop_map(|c| LossSpec::huber(c).unwrap()),
            Just(LossSpec::relu()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn convexity(loss in loss_strategy(), u in -10.0f64..10.0, v in -10.0f64..10.0, l in 0.0f64..1.0) {
            let lhs = loss.value(l * u + (1.0 - l) * v);
            let rhs = l * loss.value(u) + (1.0 - l) * loss.value(v);
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn lipschitz_bound(loss in loss_strategy(), x in -10.0f64..10.0, u in -10.0f64..10.0) {
            let diff = (loss.value(x + u) - loss.value(u)).abs();
            prop_assert!(diff <= loss.lipschitz() * x.abs() + 1e-12);
        }

        #[test]
        fn subgradient_inequality(loss in loss_strategy(), u in -10.0f64..10.0, v in -10.0f64..10.0) {
            let lower = loss.value(u) + loss.subgradient(u) * (v - u);
            prop_assert!(loss.value(v) >= lower - 1e-12);
        }

        #[test]
        fn minimum_at_zero(loss in loss_strategy(), u in -10.0f64..10.0) {
            prop_assert!(loss.value(u) >= 0.0);
            prop_assert_eq!(loss.value(0.0), 0.0);
        }
    }
}

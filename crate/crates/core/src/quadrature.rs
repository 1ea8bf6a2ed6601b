//! Composite Gauss–Legendre quadrature with panel halving.
//!
//! Integrals are split at caller-supplied breakpoints (kinks of the
//! integrand) and each panel is refined by bisection until the single-panel
//! and two-half estimates agree to the requested absolute tolerance.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Default number of nodes per panel.
pub const DEFAULT_NODES: usize = 50;

/// Maximum bisection depth for a single panel.
const MAX_DEPTH: usize = 40;

/// Gauss–Legendre rule on the reference interval [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds an `n`-point rule by Newton iteration on the Legendre recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let half = n.div_ceil(2);
        for i in 0..half {
            // Tricomi initial guess for the i-th largest root.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Fixed-rule estimate of the integral of `f` over `[a, b]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut sum = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            sum += w * f(mid + half * x);
        }
        sum * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// The shared 50-node rule.
pub fn default_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(DEFAULT_NODES))
}

/// Integrates `f` over `[a, b]` by recursive panel halving to absolute
/// tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a > b {
        return -integrate(f, b, a, tol);
    }
    let rule = default_rule();
    let whole = rule.integrate(f, a, b);
    refine(rule, f, a, b, whole, tol, 0)
}

fn refine<F: Fn(f64) -> f64>(
    rule: &GaussLegendre,
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = rule.integrate(f, a, mid);
    let right = rule.integrate(f, mid, b);
    let halves = left + right;
    if (whole - halves).abs() < tol || depth >= MAX_DEPTH || mid <= a || mid >= b {
        return halves;
    }
    refine(rule, f, a, mid, left, 0.5 * tol, depth + 1)
        + refine(rule, f, mid, b, right, 0.5 * tol, depth + 1)
}

/// Integrates `f` over `[a, b]`, inserting every breakpoint strictly inside
/// the interval as a panel boundary. The tolerance is shared across panels.
pub fn integrate_split<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    tol: f64,
) -> f64 {
    let edges = panel_edges(a, b, breakpoints);
    let panels = (edges.len() - 1) as f64;
    edges
        .windows(2)
        .map(|w| integrate(f, w[0], w[1], tol / panels))
        .sum()
}

/// Sorted, deduplicated panel boundaries for `[a, b]` with interior breakpoints.
pub fn panel_edges(a: f64, b: f64, breakpoints: &[f64]) -> Vec<f64> {
    let mut edges = Vec::with_capacity(breakpoints.len() + 2);
    edges.push(a);
    edges.extend(breakpoints.iter().copied().filter(|&p| p > a && p < b));
    edges.push(b);
    edges.sort_by(|x, y| x.total_cmp(y));
    edges.dedup();
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_is_exact_for_high_degree_polynomials() {
        let rule = GaussLegendre::new(10);
        // degree 19 is integrated exactly by a 10-point rule
        let got = rule.integrate(&|x: f64| x.powi(18) + x.powi(19), -1.0, 1.0);
        assert!((got - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for n in [1, 2, 7, 50] {
            let rule = GaussLegendre::new(n);
            let s: f64 = rule.weights().iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n = {n}: {s}");
        }
    }

    #[test]
    fn adaptive_handles_kinks_when_split() {
        let f = |x: f64| (x - 0.3).abs();
        let got = integrate_split(&f, -1.0, 1.0, &[0.3], 1e-13);
        let exact = 0.5 * 1.3 * 1.3 + 0.5 * 0.7 * 0.7;
        assert!((got - exact).abs() < 1e-13);
    }

    #[test]
    fn reversed_and_empty_intervals() {
        let f = |x: f64| x * x;
        assert_eq!(integrate(&f, 1.0, 1.0, 1e-12), 0.0);
        let fwd = integrate(&f, 0.0, 2.0, 1e-12);
        let rev = integrate(&f, 2.0, 0.0, 1e-12);
        assert!((fwd + rev).abs() < 1e-14);
        assert!((fwd - 8.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn panel_edges_ignore_outside_points() {
        let e = panel_edges(-1.0, 1.0, &[0.5, -3.0, 1.0, 0.5, -0.2]);
        assert_eq!(e, vec![-1.0, -0.2, 0.5, 1.0]);
    }
}

//! Linear-model fitting: damped Newton on the smoothed objective
//! Σₜ ρₘ(yₜ − xₜ′θ), the exact scalar quantile-regression minimiser, and the
//! Gaussian convolution-smoothed quantile baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::MollifierKernel;
use crate::losses::LossSpec;
use crate::mollify::SmoothedLoss;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-16;

/// Observations yᵢ = xᵢ′θ₀ + eᵢ, optionally with the true errors and θ₀.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSample {
    x: DMatrix<f64>,
    y: DVector<f64>,
    errors: Option<DVector<f64>>,
    theta0: Option<DVector<f64>>,
}

impl LinearSample {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        if d == 0 || n < d {
            return Err(Error::DimensionMismatch(format!(
                "need n >= d >= 1, got n = {n}, d = {d}"
            )));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {} entries for {n} rows",
                y.len()
            )));
        }
        Ok(Self {
            x,
            y,
            errors: None,
            theta0: None,
        })
    }

    /// Builds y = xθ₀ + e and keeps e and θ₀.
    pub fn from_truth(x: DMatrix<f64>, theta0: DVector<f64>, errors: DVector<f64>) -> Result<Self> {
        if theta0.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "theta0 has {} entries for {} columns",
                theta0.len(),
                x.ncols()
            )));
        }
        if errors.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "e has {} entries for {} rows",
                errors.len(),
                x.nrows()
            )));
        }
        let y = &x * &theta0 + &errors;
        let mut sample = Self::new(x, y)?;
        sample.errors = Some(errors);
        sample.theta0 = Some(theta0);
        Ok(sample)
    }

    /// Single-regressor sample.
    pub fn scalar(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_column_slice(x.len(), 1, x),
            DVector::from_column_slice(y),
        )
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn errors(&self) -> Option<&DVector<f64>> {
        self.errors.as_ref()
    }

    pub fn theta0(&self) -> Option<&DVector<f64>> {
        self.theta0.as_ref()
    }

    /// Errors and θ₀, or [`Error::IncompleteSample`].
    pub fn truth(&self) -> Result<(&DVector<f64>, &DVector<f64>)> {
        match (&self.errors, &self.theta0) {
            (Some(e), Some(t)) => Ok((e, t)),
            _ => Err(Error::IncompleteSample),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Convergence when ‖∇‖∞ < grad_tol·n.
    pub grad_tol: f64,
    pub ridge: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-9,
            ridge: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::SingularDesign);
    }
    Ok(())
}

/// Ordinary least squares via the normal equations.
pub fn least_squares(sample: &LinearSample) -> Result<DVector<f64>> {
    check_full_rank(sample.x())?;
    let xt = sample.x().transpose();
    let gram = &xt * sample.x();
    let rhs = &xt * sample.y();
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::SingularDesign)
}

/// Minimises Σₜ ρₘ(yₜ − xₜ′θ) with ρₘ built from `loss`, `kernel` and `m`.
pub fn fit_smoothed(
    sample: &LinearSample,
    loss: &LossSpec,
    kernel: MollifierKernel,
    m: f64,
    opts: &SolverOptions,
) -> Result<FitResult> {
    let smoothed = SmoothedLoss::new(*loss, kernel, m)?;
    fit_smoothed_with(sample, &smoothed, opts)
}

struct Objective<'a> {
    sample: &'a LinearSample,
    loss: &'a SmoothedLoss,
}

impl Objective<'_> {
    fn value(&self, theta: &DVector<f64>) -> f64 {
        let r = self.sample.y() - self.sample.x() * theta;
        r.iter().map(|&u| self.loss.value(u)).sum()
    }

    /// Value, gradient and Hessian (without ridge).
    fn second_order(&self, theta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let x = self.sample.x();
        let d = x.ncols();
        let r = self.sample.y() - x * theta;
        let mut f = 0.0;
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for (t, &u) in r.iter().enumerate() {
            let e = self.loss.evaluate(u);
            f += e.value;
            for j in 0..d {
                let xj = x[(t, j)];
                g[j] -= e.first * xj;
                if e.second != 0.0 {
                    for k in 0..=j {
                        h[(j, k)] += e.second * xj * x[(t, k)];
                    }
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                h[(k, j)] = h[(j, k)];
            }
        }
        (f, g, h)
    }
}

/// Damped Newton with halving Armijo backtracking, started from OLS.
pub fn fit_smoothed_with(
    sample: &LinearSample,
    loss: &SmoothedLoss,
    opts: &SolverOptions,
) -> Result<FitResult> {
    if !loss.loss().is_coercive() {
        return Err(Error::NonCoerciveLoss);
    }
    let mut theta = least_squares(sample)?;
    let objective = Objective { sample, loss };
    let d = sample.d();
    let tol = opts.grad_tol * sample.n() as f64;
    let slack_scale = f64::EPSILON * sample.n() as f64;

    let mut iterations = 0;
    let (mut f, mut g, mut h) = objective.second_order(&theta);
    let mut gnorm = g.amax();
    while gnorm >= tol && iterations < opts.max_iter {
        for j in 0..d {
            h[(j, j)] += opts.ridge;
        }
        let mut step = match h.clone().cholesky() {
            Some(c) => -c.solve(&g),
            None => h.clone().lu().solve(&(-&g)).unwrap_or_else(|| -&g),
        };
        let mut slope = g.dot(&step);
        if !(slope < 0.0) || !step.iter().all(|v| v.is_finite()) {
            step = -&g;
            slope = -g.norm_squared();
        }

        let slack = slack_scale * f.abs().max(1.0);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= MIN_STEP {
            let trial = &theta + alpha * &step;
            let f_trial = objective.value(&trial);
            if f_trial <= f + ARMIJO * alpha * slope + slack {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some(next) => theta = next,
            None => break,
        }
        (f, g, h) = objective.second_order(&theta);
        gnorm = g.amax();
    }

    Ok(FitResult {
        objective: f,
        converged: gnorm < tol,
        gradient_norm: gnorm,
        iterations,
        theta_hat: theta,
    })
}

/// Exact minimiser of Σ ρ_τ(yᵢ − xᵢθ) for a single regressor.
///
/// The objective is convex piecewise linear with breakpoints yᵢ/xᵢ. Its
/// right derivative starts at −Σ|xᵢ|·(τ if xᵢ > 0 else 1 − τ) and increases
/// by |xᵢ| at each breakpoint; the first breakpoint where it becomes
/// non-negative is the left end of the minimising interval.
pub fn fit_exact_scalar_quantile(sample: &LinearSample, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau(tau));
    }
    if sample.d() != 1 {
        return Err(Error::UnsupportedDimension(sample.d()));
    }
    let x = sample.x().column(0);
    let y = sample.y();
    let mut points = Vec::with_capacity(sample.n());
    let mut slope = 0.0;
    for (i, (&xi, &yi)) in x.iter().zip(y.iter()).enumerate() {
        if xi == 0.0 {
            return Err(Error::DegenerateRegressor(i));
        }
        slope -= xi.abs() * if xi > 0.0 { tau } else { 1.0 - tau };
        points.push((yi / xi, xi.abs()));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut i = 0;
    while i < points.len() {
        let b = points[i].0;
        while i < points.len() && points[i].0 == b {
            slope += points[i].1;
            i += 1;
        }
        if slope >= 0.0 {
            return Ok(b);
        }
    }
    // the slope ends at Σ|xᵢ|·(1 − τ or τ) > 0, so this is unreachable
    Ok(points.last().map(|p| p.0).unwrap_or(f64::NAN))
}

/// Gaussian-kernel smoothed check loss with bandwidth h, i.e. m = 1/h.
pub fn fit_convolution_baseline(
    sample: &LinearSample,
    tau: f64,
    h: f64,
    opts: &SolverOptions,
) -> Result<FitResult> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidBandwidth(h));
    }
    let loss = LossSpec::check(tau)?;
    fit_smoothed(sample, &loss, MollifierKernel::Gaussian, 1.0 / h, opts)
}

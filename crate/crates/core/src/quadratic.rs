//! Quadratic approximation of the reparametrised objective
//! L̃ₙ(β) = Σₜ [ρ(eₜ − n^{-1/2} xₜ′β) − ρ(eₜ)] by
//! Qₙ(β) = −Sₙ′β + (a/2) β′Gₙβ with score Sₙ = n^{-1/2} Σ ψ(eᵢ)xᵢ, Gram
//! Gₙ = n⁻¹ Σ xᵢxᵢ′ and curvature a = E[ρ″(e)].

use nalgebra::{DMatrix, DVector};

use crate::distributions::{normal_quantile, ErrorDensity};
use crate::error::{Error, Result};
use crate::estimator::{fit_smoothed_with, LinearSample, SolverOptions};
use crate::kernels::MollifierKernel;
use crate::losses::{expected_curvature, LossSpec};
use crate::mollify::SmoothedLoss;

/// Default number of probes for the ball supremum.
pub const DEFAULT_PROBES: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticApprox {
    pub score: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub a: f64,
}

/// L̃ₙ(β) with the exact nonsmooth loss.
pub fn tilde_l(sample: &LinearSample, loss: &LossSpec, beta: &DVector<f64>) -> Result<f64> {
    let (e, _) = sample.truth()?;
    if beta.len() != sample.d() {
        return Err(Error::DimensionMismatch(format!(
            "beta has {} entries for d = {}",
            beta.len(),
            sample.d()
        )));
    }
    let shift = sample.x() * beta / (sample.n() as f64).sqrt();
    Ok(e.iter()
        .zip(shift.iter())
        .map(|(&et, &st)| loss.value(et - st) - loss.value(et))
        .sum())
}

/// Assembles Sₙ and Gₙ from the true errors; `a` is supplied by the caller.
pub fn build_quadratic(sample: &LinearSample, loss: &LossSpec, a: f64) -> Result<QuadraticApprox> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidCurvature(a));
    }
    let (e, _) = sample.truth()?;
    let x = sample.x();
    let n = sample.n() as f64;
    let psi = e.map(|et| loss.subgradient(et));
    let score = x.transpose() * psi / n.sqrt();
    let gram = x.transpose() * x / n;
    Ok(QuadraticApprox { score, gram, a })
}

impl QuadraticApprox {
    /// Qₙ(β).
    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        -self.score.dot(beta) + 0.5 * self.a * (beta.transpose() * &self.gram * beta)[0]
    }

    /// β̂_Q = (a·Gₙ)⁻¹ Sₙ, the unique minimiser when Gₙ is positive definite.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        let eig = self.gram.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        if !(eig.eigenvalues.min() > 1e-14 * max.max(1.0)) {
            return Err(Error::SingularGram);
        }
        (self.a * &self.gram)
            .cholesky()
            .map(|c| c.solve(&self.score))
            .ok_or(Error::SingularGram)
    }
}

/// a from the known error density.
pub fn analytic_curvature(loss: &LossSpec, density: &ErrorDensity) -> Result<f64> {
    expected_curvature(loss, density)
}

/// Plug-in a = n⁻¹ Σ ρₘ″(eᵢ).
pub fn plugin_curvature(sample: &LinearSample, smoothed: &SmoothedLoss) -> Result<f64> {
    let (e, _) = sample.truth()?;
    Ok(e.iter().map(|&et| smoothed.second_derivative(et)).sum::<f64>() / sample.n() as f64)
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut out = 0.0;
    let mut f = inv;
    while index > 0 {
        out += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    out
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Deterministic probes of the ball ‖β‖ ≤ radius: the origin followed by
/// Halton points mapped to a direction and a volume-uniform radius.
pub fn ball_probes(d: usize, radius: f64, count: usize) -> Vec<DVector<f64>> {
    assert!(d >= 1 && d < PRIMES.len(), "probe dimension out of range");
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(DVector::zeros(d));
    let mut index = 1u64;
    while out.len() < count {
        let r = radius * radical_inverse(index, PRIMES[d]).powf(1.0 / d as f64);
        let dir = if d == 1 {
            let s = if radical_inverse(index, PRIMES[0]) < 0.5 { -1.0 } else { 1.0 };
            DVector::from_element(1, s)
        } else {
            let g = DVector::from_iterator(
                d,
                (0..d).map(|j| normal_quantile(radical_inverse(index, PRIMES[j]))),
            );
            let norm = g.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                index += 1;
                continue;
            }
            g / norm
        };
        out.push(dir * r);
        index += 1;
    }
    out
}

/// max over probes in ‖β‖ ≤ radius of |L̃ₙ(β) − Qₙ(β)|.
pub fn approximation_gap(
    sample: &LinearSample,
    loss: &LossSpec,
    a: f64,
    radius: f64,
    probes: usize,
) -> Result<f64> {
    let q = build_quadratic(sample, loss, a)?;
    let mut gap = 0.0f64;
    for beta in ball_probes(sample.d(), radius, probes) {
        let diff = (tilde_l(sample, loss, &beta)? - q.value(&beta)).abs();
        gap = gap.max(diff);
    }
    Ok(gap)
}

/// β̂ₘ = √n(θ̂ₘ − θ₀) alongside β̂_Q, with the fit's convergence flag.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerComparison {
    pub beta_m: DVector<f64>,
    pub beta_q: DVector<f64>,
    pub converged: bool,
}

impl MinimizerComparison {
    pub fn distance(&self) -> f64 {
        (&self.beta_m - &self.beta_q).norm()
    }
}

pub fn compare_minimizers(
    sample: &LinearSample,
    loss: &LossSpec,
    kernel: MollifierKernel,
    m: f64,
    a: f64,
    opts: &SolverOptions,
) -> Result<MinimizerComparison> {
    let (_, theta0) = sample.truth()?;
    let smoothed = SmoothedLoss::new(*loss, kernel, m)?;
    let fit = fit_smoothed_with(sample, &smoothed, opts)?;
    let beta_q = build_quadratic(sample, loss, a)?.minimizer()?;
    let beta_m = (fit.theta_hat - theta0) * (sample.n() as f64).sqrt();
    Ok(MinimizerComparison {
        beta_m,
        beta_q,
        converged: fit.converged,
    })
}

/// ‖√n(θ̂ₘ − θ₀) − β̂_Q‖.
pub fn minimizer_gap(
    sample: &LinearSample,
    loss: &LossSpec,
    kernel: MollifierKernel,
    m: f64,
    a: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    Ok(compare_minimizers(sample, loss, kernel, m, a, opts)?.distance())
}

/// n^{-1/4}·ln ln n, the scale of the minimiser gap.
pub fn loglog_scale(n: usize) -> Result<f64> {
    if n < 16 {
        return Err(Error::SampleTooSmall(n));
    }
    let nf = n as f64;
    Ok(nf.powf(-0.25) * nf.ln().ln())
}

/// Least-squares slope of ln(value) against ln(n).
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(n, v)| (n.ln(), v.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_sample(n: usize, d: usize, seed: u64) -> LinearSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| 1.0 + rng.sample::<f64, _>(StandardNormal));
        let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta0 = DVector::from_element(d, 1.0);
        LinearSample::from_truth(x, theta0, e).unwrap()
    }

    #[test]
    fn loglog_slope_recovers_power() {
        let pts: Vec<(f64, f64)> = [100.0, 400.0, 1600.0]
            .iter()
            .map(|&n: &f64| (n, 3.0 * n.powf(-0.5)))
            .collect();
        assert!((loglog_slope(&pts) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn tilde_l_examples() {
        let s = random_sample(7, 2, 1);
        let loss = LossSpec::check(0.3).unwrap();
        assert_eq!(tilde_l(&s, &loss, &DVector::zeros(2)).unwrap(), 0.0);

        let one = LinearSample::from_truth(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 0.0),
        )
        .unwrap();
        let b = -1.7;
        let got = tilde_l(&one, &LossSpec::absolute(), &DVector::from_element(1, b)).unwrap();
        assert!((got - b.abs()).abs() < 1e-15);

        let s = random_sample(5, 1, 2);
        let beta = DVector::from_element(1, 0.8);
        let (e, _) = s.truth().unwrap();
        let mut brute = 0.0;
        for t in 0..5 {
            let shift = s.x()[(t, 0)] * 0.8 / 5f64.sqrt();
            brute += loss.value(e[t] - shift) - loss.value(e[t]);
        }
        assert!((tilde_l(&s, &loss, &beta).unwrap() - brute).abs() < 1e-14);

        let plain = LinearSample::scalar(&[1.0], &[1.0]).unwrap();
        assert!(matches!(
            tilde_l(&plain, &loss, &DVector::zeros(1)),
            Err(Error::IncompleteSample)
        ));
    }

    #[test]
    fn build_quadratic_examples() {
        let zero = LinearSample::from_truth(
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
            DVector::from_element(1, 1.0),
            DVector::zeros(3),
        )
        .unwrap();
        let q = build_quadratic(&zero, &LossSpec::huber(1.0).unwrap(), 1.0).unwrap();
        assert_eq!(q.score[0], 0.0);

        let sym = LinearSample::from_truth(
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            DVector::from_element(1, 0.0),
            DVector::from_vec(vec![-1.0, 1.0]),
        )
        .unwrap();
        let q = build_quadratic(&sym, &LossSpec::absolute(), 1.0).unwrap();
        assert_eq!(q.score[0], 0.0);

        let s = random_sample(4, 2, 3);
        let loss = LossSpec::check(0.5).unwrap();
        let q = build_quadratic(&s, &loss, 0.4).unwrap();
        let (e, _) = s.truth().unwrap();
        for j in 0..2 {
            let mut sj = 0.0;
            for t in 0..4 {
                sj += loss.subgradient(e[t]) * s.x()[(t, j)];
            }
            assert!((q.score[j] - sj / 2.0).abs() < 1e-15);
            for k in 0..2 {
                let mut gjk = 0.0;
                for t in 0..4 {
                    gjk += s.x()[(t, j)] * s.x()[(t, k)];
                }
                assert!((q.gram[(j, k)] - gjk / 4.0).abs() < 1e-15);
            }
        }
        assert!(matches!(build_quadratic(&s, &loss, 0.0), Err(Error::InvalidCurvature(_))));
        assert!(build_quadratic(&s, &loss, -1.0).is_err());
    }

    #[test]
    fn q_value_and_minimizer_examples() {
        let q = QuadraticApprox {
            score: DVector::from_vec(vec![0.3, -1.1]),
            gram: DMatrix::identity(2, 2),
            a: 1.0,
        };
        assert_eq!(q.value(&DVector::zeros(2)), 0.0);
        let b = q.minimizer().unwrap();
        assert!((b - &q.score).amax() < 1e-15);

        let q1 = QuadraticApprox {
            score: DVector::from_element(1, 3.0),
            gram: DMatrix::from_element(1, 1, 2.0),
            a: 0.5,
        };
        assert!((q1.minimizer().unwrap()[0] - 3.0).abs() < 1e-15);

        let zero_score = QuadraticApprox {
            score: DVector::zeros(2),
            ..q.clone()
        };
        assert_eq!(zero_score.minimizer().unwrap(), DVector::zeros(2));

        let singular = QuadraticApprox {
            score: DVector::from_vec(vec![1.0, 1.0]),
            gram: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            a: 1.0,
        };
        assert!(matches!(singular.minimizer(), Err(Error::SingularGram)));
    }

    #[test]
    fn minimizer_beats_random_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_sample(30, 2, 4);
        let q = build_quadratic(&s, &LossSpec::check(0.5).unwrap(), 0.4).unwrap();
        let b = q.minimizer().unwrap();
        let qb = q.value(&b);
        // reformulated value at the minimiser
        let ag = q.a * &q.gram;
        let reform = -0.5 * (b.transpose() * &ag * &b)[0];
        assert!((qb - reform).abs() < 1e-12);
        assert!(qb <= 0.0);
        for _ in 0..100 {
            let p = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            assert!(q.value(&(&b + p)) >= qb);
        }
    }

    #[test]
    fn reformulation_identity_and_uniqueness() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_sample(40, 3, 6);
        let q = build_quadratic(&s, &LossSpec::huber(1.0).unwrap(), 0.7).unwrap();
        let b = q.minimizer().unwrap();
        let ag = q.a * &q.gram;
        for _ in 0..200 {
            let beta = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let diff = &beta - &b;
            let rhs = 0.5 * (diff.transpose() * &ag * &diff)[0] - 0.5 * (b.transpose() * &ag * &b)[0];
            assert!((q.value(&beta) - rhs).abs() < 1e-10);

            let v = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            assert!(q.value(&(&b + v * 1e-3)) > q.value(&b));
        }
    }

    #[test]
    fn probes_cover_the_ball_deterministically() {
        for d in [1, 2, 3] {
            let p = ball_probes(d, 2.0, 512);
            assert_eq!(p.len(), 512);
            assert_eq!(p[0], DVector::zeros(d));
            assert!(p.iter().all(|b| b.norm() <= 2.0 + 1e-12));
            assert!(p.iter().any(|b| b.norm() > 1.9));
            assert_eq!(p, ball_probes(d, 2.0, 512));
        }
        let one = ball_probes(1, 1.0, 64);
        assert!(one.iter().any(|b| b[0] < -0.5) && one.iter().any(|b| b[0] > 0.5));
    }

    #[test]
    fn approximation_gap_is_deterministic_and_nonnegative() {
        let s = random_sample(200, 1, 9);
        let loss = LossSpec::check(0.5).unwrap();
        let a = analytic_curvature(&loss, &ErrorDensity::standard_normal()).unwrap();
        let g1 = approximation_gap(&s, &loss, a, 2.0, 128).unwrap();
        let g2 = approximation_gap(&s, &loss, a, 2.0, 128).unwrap();
        assert!(g1 >= 0.0);
        assert_eq!(g1, g2);
        // only the origin
        assert_eq!(approximation_gap(&s, &loss, a, 2.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn minimizer_gap_vanishes_without_noise() {
        let x = DMatrix::from_column_slice(20, 1, &(1..=20).map(|i| 0.5 + 0.1 * i as f64).collect::<Vec<_>>());
        let s = LinearSample::from_truth(x, DVector::from_element(1, 1.0), DVector::zeros(20)).unwrap();
        // ψ(0) = 0 for Huber, so the score is zero
        let loss = LossSpec::huber(1.0).unwrap();
        let gap = minimizer_gap(&s, &loss, MollifierKernel::CompactBump, 5.0, 1.0, &SolverOptions::default())
            .unwrap();
        assert!(gap < 1e-7, "{gap}");
    }

    #[test]
    fn plugin_curvature_approaches_analytic() {
        let s = random_sample(20000, 1, 12);
        let loss = LossSpec::check(0.5).unwrap();
        let sm = SmoothedLoss::new(loss, MollifierKernel::CompactBump, 10.0).unwrap();
        let plug = plugin_curvature(&s, &sm).unwrap();
        let exact = analytic_curvature(&loss, &ErrorDensity::standard_normal()).unwrap();
        assert!((plug - exact).abs() < 0.03, "{plug} vs {exact}");
    }

    #[test]
    fn loglog_scale_domain() {
        assert!(matches!(loglog_scale(15), Err(Error::SampleTooSmall(15))));
        let v = loglog_scale(100).unwrap();
        assert!((v - 100f64.powf(-0.25) * 100f64.ln().ln()).abs() < 1e-15);
    }
}

//! Simulation design yᵢ = xᵢθ₀ + eᵢ with xᵢ ~ N(1, 1), θ₀ = 1 and
//! eᵢ = εᵢ − F_ε⁻¹(τ), comparing the exact quantile estimator, the
//! bump-smoothed estimator and the Gaussian convolution baseline (RMSE), and
//! the smoothed minimiser against the quadratic-approximation minimiser
//! (MAD).
//!
//! Each replication draws from its own ChaCha stream seeded by a hash of
//! (base_seed, replication), so results do not depend on thread count or
//! scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{error_quantile_shift, ErrorDensity, ErrorDist};
use crate::error::{Error, Result};
use crate::estimator::{
    fit_convolution_baseline, fit_exact_scalar_quantile, fit_smoothed_with, LinearSample,
    SolverOptions,
};
use crate::kernels::MollifierKernel;
use crate::losses::{expected_curvature, LossSpec};
use crate::mollify::SmoothedLoss;
use crate::quadratic::build_quadratic;

/// True slope in the simulation design.
pub const THETA0: f64 = 1.0;

/// Largest tolerated fraction of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.01;

fn default_kernel() -> MollifierKernel {
    MollifierKernel::CompactBump
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    #[serde(rename = "M")]
    pub replications: usize,
    pub tau: f64,
    pub error_dist: ErrorDist,
    #[serde(default)]
    pub m_list: Vec<f64>,
    #[serde(default)]
    pub h_list: Vec<f64>,
    pub base_seed: u64,
    #[serde(default = "default_kernel")]
    pub kernel: MollifierKernel,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n < 10 {
            return bad(format!("n = {} (need n >= 10)", self.n));
        }
        if self.replications < 1 {
            return bad("M must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau = {} outside (0, 1)", self.tau));
        }
        if let Some(m) = self.m_list.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return bad(format!("m = {m} must be positive"));
        }
        if let Some(h) = self.h_list.iter().find(|h| !(**h > 0.0 && **h < 1.0)) {
            return bad(format!("h = {h} outside (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Rmse,
    Mad,
}

/// A parameter (m or h) and the statistic computed for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamValue {
    pub param: f64,
    pub value: f64,
}

/// Per-replication audit entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub theta_tau: Option<f64>,
    pub theta_m: Vec<f64>,
    pub theta_h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta_m: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl ReplicationRecord {
    pub fn excluded(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub rmse_tau: f64,
    pub rmse_m: Vec<ParamValue>,
    pub rmse_h: Vec<ParamValue>,
    pub mad_m: Vec<ParamValue>,
    pub excluded: usize,
    pub records: Vec<ReplicationRecord>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream for one replication.
pub fn replication_seed(base_seed: u64, replication: usize) -> u64 {
    splitmix64(base_seed ^ splitmix64(replication as u64))
}

/// Uniform draw on the open interval (0, 1).
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Draws the replication's sample. x and ε come from one ChaCha20 stream;
/// t₄ noise uses inverse-CDF sampling through the bisection quantile.
pub fn generate_sample(config: &ExperimentConfig, replication: usize) -> Result<LinearSample> {
    if replication >= config.replications {
        return Err(Error::InvalidConfig(format!(
            "replication {replication} out of range for M = {}",
            config.replications
        )));
    }
    let shift = error_quantile_shift(config.error_dist, config.tau)?;
    let mut rng = ChaCha20Rng::seed_from_u64(replication_seed(config.base_seed, replication));
    let n = config.n;
    let x: Vec<f64> = (0..n)
        .map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let e: Vec<f64> = (0..n)
        .map(|_| {
            let eps = match config.error_dist {
                ErrorDist::Normal01 => rng.sample::<f64, _>(StandardNormal),
                ErrorDist::StudentT4 => ErrorDist::StudentT4.quantile(open_unit(&mut rng)),
            };
            eps - shift
        })
        .collect();
    LinearSample::from_truth(
        DMatrix::from_vec(n, 1, x),
        DVector::from_element(1, THETA0),
        DVector::from_vec(e),
    )
}

/// Runs `f` on every replication's sample in parallel and returns the
/// outputs in replication order.
pub fn replicate_map<T, F>(config: &ExperimentConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &LinearSample) -> Result<T> + Sync,
{
    config.validate()?;
    (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let sample = generate_sample(config, rep)?;
            f(rep, &sample)
        })
        .collect()
}

pub fn run_rmse_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, ExperimentKind::Rmse, &|rep| generate_sample(config, rep))
}

pub fn run_mad_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, ExperimentKind::Mad, &|rep| generate_sample(config, rep))
}

/// As the run functions, with a caller-supplied sample generator.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    kind: ExperimentKind,
    generator: &(dyn Fn(usize) -> Result<LinearSample> + Sync),
) -> Result<ExperimentResult> {
    config.validate()?;
    if kind == ExperimentKind::Mad && config.tau != 0.5 {
        return Err(Error::InvalidConfig(format!(
            "the MAD experiment is defined for median regression (tau = 0.5), got {}",
            config.tau
        )));
    }
    let loss = LossSpec::check(config.tau)?;
    let smoothers = config
        .m_list
        .iter()
        .map(|&m| SmoothedLoss::new(loss, config.kernel, m))
        .collect::<Result<Vec<_>>>()?;
    // a = f_e(0) for the check loss
    let curvature = match kind {
        ExperimentKind::Mad => Some(expected_curvature(
            &loss,
            &ErrorDensity::centred(config.error_dist, config.tau)?,
        )?),
        ExperimentKind::Rmse => None,
    };

    let records: Vec<ReplicationRecord> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = replication_seed(config.base_seed, rep);
            let mut record = ReplicationRecord {
                replication: rep,
                seed,
                theta_tau: None,
                theta_m: Vec::new(),
                theta_h: Vec::new(),
                beta_q: None,
                beta_m: Vec::new(),
                failure: None,
            };
            if let Err(reason) = replicate(config, &loss, &smoothers, curvature, generator, &mut record)
            {
                record.failure = Some(reason);
            }
            record
        })
        .collect();

    let excluded = records.iter().filter(|r| r.excluded()).count();
    if excluded as f64 > MAX_FAILURE_RATE * config.replications as f64 {
        return Err(Error::TooManyFailures {
            excluded,
            total: config.replications,
        });
    }
    Ok(aggregate(config, kind, records, excluded))
}

fn replicate(
    config: &ExperimentConfig,
    loss: &LossSpec,
    smoothers: &[SmoothedLoss],
    curvature: Option<f64>,
    generator: &(dyn Fn(usize) -> Result<LinearSample> + Sync),
    record: &mut ReplicationRecord,
) -> std::result::Result<(), String> {
    let sample = generator(record.replication).map_err(|e| e.to_string())?;
    let opts = &config.solver;
    record.theta_tau =
        Some(fit_exact_scalar_quantile(&sample, config.tau).map_err(|e| e.to_string())?);
    for s in smoothers {
        let fit = fit_smoothed_with(&sample, s, opts).map_err(|e| e.to_string())?;
        if !fit.converged {
            return Err(format!(
                "smoothed fit m = {} did not converge (|grad| = {:e})",
                s.scale(),
                fit.gradient_norm
            ));
        }
        record.theta_m.push(fit.theta_hat[0]);
    }
    for &h in &config.h_list {
        let fit = fit_convolution_baseline(&sample, config.tau, h, opts).map_err(|e| e.to_string())?;
        if !fit.converged {
            return Err(format!(
                "baseline fit h = {h} did not converge (|grad| = {:e})",
                fit.gradient_norm
            ));
        }
        record.theta_h.push(fit.theta_hat[0]);
    }
    if let Some(a) = curvature {
        let q = build_quadratic(&sample, loss, a).map_err(|e| e.to_string())?;
        record.beta_q = Some(q.minimizer().map_err(|e| e.to_string())?[0]);
        let root_n = (sample.n() as f64).sqrt();
        record.beta_m = record
            .theta_m
            .iter()
            .map(|t| root_n * (t - THETA0))
            .collect();
    }
    Ok(())
}

fn rmse<I: Iterator<Item = f64>>(values: I) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| {
        let d = v - THETA0;
        (s + d * d, c + 1)
    });
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

fn aggregate(
    config: &ExperimentConfig,
    kind: ExperimentKind,
    records: Vec<ReplicationRecord>,
    excluded: usize,
) -> ExperimentResult {
    let kept: Vec<&ReplicationRecord> = records.iter().filter(|r| !r.excluded()).collect();
    let rmse_tau = rmse(kept.iter().filter_map(|r| r.theta_tau));
    let rmse_m = config
        .m_list
        .iter()
        .enumerate()
        .map(|(j, &m)| ParamValue {
            param: m,
            value: rmse(kept.iter().map(|r| r.theta_m[j])),
        })
        .collect();
    let rmse_h = config
        .h_list
        .iter()
        .enumerate()
        .map(|(j, &h)| ParamValue {
            param: h,
            value: rmse(kept.iter().map(|r| r.theta_h[j])),
        })
        .collect();
    let mad_m = match kind {
        ExperimentKind::Rmse => Vec::new(),
        ExperimentKind::Mad => config
            .m_list
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let total: f64 = kept
                    .iter()
                    .map(|r| (r.beta_m[j] - r.beta_q.unwrap_or(0.0)).abs())
                    .sum();
                ParamValue {
                    param: m,
                    value: if kept.is_empty() { 0.0 } else { total / kept.len() as f64 },
                }
            })
            .collect(),
    };
    ExperimentResult {
        kind,
        rmse_tau,
        rmse_m,
        rmse_h,
        mad_m,
        excluded,
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n: usize, reps: usize, tau: f64, dist: ErrorDist) -> ExperimentConfig {
        ExperimentConfig {
            n,
            replications: reps,
            tau,
            error_dist: dist,
            m_list: vec![5.0, 10.0, 15.0],
            h_list: vec![0.1, 0.5, 0.9],
            base_seed: 20240601,
            kernel: MollifierKernel::CompactBump,
            solver: SolverOptions::default(),
        }
    }

    #[test]
    fn sample_generation_is_deterministic_and_exact() {
        let c = config(50, 3, 0.3, ErrorDist::StudentT4);
        let a = generate_sample(&c, 1).unwrap();
        let b = generate_sample(&c, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_sample(&c, 2).unwrap());
        let (e, theta0) = a.truth().unwrap();
        let resid = a.y() - a.x() * theta0;
        assert!((resid - e).amax() < 1e-14);
        assert!(generate_sample(&c, 3).is_err());
    }

    #[test]
    fn centred_errors_have_zero_tau_quantile() {
        let c = config(100_000, 1, 0.5, ErrorDist::Normal01);
        let s = generate_sample(&c, 0).unwrap();
        let (e, _) = s.truth().unwrap();
        let frac = e.iter().filter(|v| **v < 0.0).count() as f64 / e.len() as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");

        let c = config(100_000, 1, 0.3, ErrorDist::StudentT4);
        let s = generate_sample(&c, 0).unwrap();
        let (e, _) = s.truth().unwrap();
        let frac = e.iter().filter(|v| **v < 0.0).count() as f64 / e.len() as f64;
        assert!((frac - 0.3).abs() < 0.01, "{frac}");
    }

    #[test]
    fn config_validation() {
        let mut c = config(5, 1, 0.5, ErrorDist::Normal01);
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        c.n = 10;
        c.replications = 0;
        assert!(c.validate().is_err());
        c.replications = 1;
        c.tau = 1.0;
        assert!(c.validate().is_err());
        c.tau = 0.5;
        c.h_list = vec![1.0];
        assert!(c.validate().is_err());
        c.h_list = vec![];
        c.m_list = vec![0.0];
        assert!(c.validate().is_err());
        c.m_list = vec![2.0];
        assert!(c.validate().is_ok());
    }

    #[test]
    fn zero_noise_gives_zero_rmse() {
        let c = ExperimentConfig {
            replications: 1,
            tau: 0.5,
            ..config(30, 1, 0.5, ErrorDist::Normal01)
        };
        let gen = |rep: usize| {
            let s = generate_sample(&c, rep)?;
            LinearSample::from_truth(s.x().clone(), DVector::from_element(1, THETA0), DVector::zeros(30))
        };
        let r = run_experiment_with(&c, ExperimentKind::Rmse, &gen).unwrap();
        assert!(r.rmse_tau < 1e-12);
        for pv in r.rmse_m.iter().chain(&r.rmse_h) {
            assert!(pv.value < 1e-6, "{pv:?}");
        }
    }

    #[test]
    fn records_extend_when_m_grows() {
        let small = config(40, 4, 0.3, ErrorDist::StudentT4);
        let large = ExperimentConfig {
            replications: 8,
            ..small.clone()
        };
        let a = run_rmse_experiment(&small).unwrap();
        let b = run_rmse_experiment(&large).unwrap();
        assert_eq!(a.records[..], b.records[..4]);
    }

    #[test]
    fn mad_requires_median() {
        let c = config(40, 2, 0.3, ErrorDist::Normal01);
        assert!(matches!(run_mad_experiment(&c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn failures_are_recorded_and_gated() {
        let c = ExperimentConfig {
            solver: SolverOptions {
                max_iter: 0,
                ..SolverOptions::default()
            },
            ..config(40, 3, 0.5, ErrorDist::Normal01)
        };
        match run_rmse_experiment(&c) {
            Err(Error::TooManyFailures { excluded, total }) => {
                assert_eq!(total, 3);
                assert!(excluded >= 1);
            }
            other => panic!("expected failure gate, got {other:?}"),
        }
    }

    #[test]
    fn config_json_round_trip_uses_documented_keys() {
        let text = r#"{"n": 100, "M": 10, "tau": 0.3, "error_dist": "StudentT4",
                       "m_list": [5, 10], "h_list": [0.5], "base_seed": 7}"#;
        let c: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.replications, 10);
        assert_eq!(c.kernel, MollifierKernel::CompactBump);
        assert_eq!(c.solver, SolverOptions::default());
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use mollikit::losses::expected_curvature;
use mollikit::mollify::{sup_error, uniform_grid};
use mollikit::montecarlo::{
    replicate_map, run_mad_experiment, run_rmse_experiment, ExperimentConfig, ExperimentKind,
    ExperimentResult,
};
use mollikit::quadratic::{approximation_gap, loglog_scale, loglog_slope, minimizer_gap};
use mollikit::{ErrorDensity, LossSpec, SmoothedLoss};
use serde::Serialize;

use crate::tables::{experiment_table, fmt, write_rows};
use crate::{CliError, CurveArgs, DiagnoseArgs, ExperimentArgs, RateArgs};

const SEED_ENV: &str = "MOLLIKIT_SEED";

fn smoothers(loss: LossSpec, kernel: mollikit::MollifierKernel, ms: &[f64]) -> Result<Vec<SmoothedLoss>, CliError> {
    if ms.is_empty() {
        return Err(CliError::Usage("at least one m is required".into()));
    }
    Ok(ms
        .iter()
        .map(|&m| SmoothedLoss::new(loss, kernel, m))
        .collect::<mollikit::Result<Vec<_>>>()?)
}

pub fn curve(args: &CurveArgs) -> Result<(), CliError> {
    let smoothed = smoothers(args.loss, args.kernel, &args.m)?;
    let mut header = vec!["u".to_string(), "rho".to_string()];
    header.extend(args.m.iter().map(|m| format!("rho_{m}")));
    let rows: Vec<Vec<String>> = args
        .grid
        .points()
        .into_iter()
        .map(|u| {
            let mut row = vec![fmt(u), fmt(args.loss.value(u))];
            row.extend(smoothed.iter().map(|s| fmt(s.value(u))));
            row
        })
        .collect();
    write_rows(&args.out, &header, &rows)
}

pub fn rate(args: &RateArgs) -> Result<(), CliError> {
    let smoothed = smoothers(args.loss, args.kernel, &args.m)?;
    let grid = match args.grid {
        Some(g) => g.points(),
        None => uniform_grid(-3.0, 3.0, 1e-3),
    };
    let rows: Vec<Vec<String>> = smoothed
        .iter()
        .map(|s| vec![fmt(s.scale()), fmt(sup_error(s, &grid))])
        .collect();
    write_rows(&args.out, &["m".into(), "sup_error".into()], &rows)
}

fn seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{s}` is not an unsigned 64-bit integer"))),
        Err(_) => Ok(None),
    }
}

fn load_configs(path: &Path) -> Result<Vec<ExperimentConfig>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed config {}: {e}", path.display())))?;
    let configs = match value {
        serde_json::Value::Array(items) => items
            .into_iter()
            .map(serde_json::from_value)
            .collect::<Result<Vec<ExperimentConfig>, _>>(),
        other => serde_json::from_value(other).map(|c| vec![c]),
    }
    .map_err(|e| CliError::Usage(format!("malformed config {}: {e}", path.display())))?;
    if configs.is_empty() {
        return Err(CliError::Usage(format!("config {} lists no experiments", path.display())));
    }
    Ok(configs)
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    job: impl FnOnce() -> T + Send,
) -> Result<T, CliError> {
    match threads {
        None => Ok(job()),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map(|pool| pool.install(job))
            .map_err(|e| CliError::Usage(format!("cannot start {t} threads: {e}"))),
    }
}

#[derive(Serialize)]
struct ExperimentEntry<'a> {
    config: &'a ExperimentConfig,
    result: &'a ExperimentResult,
}

#[derive(Serialize)]
struct ExperimentReport<'a> {
    generated_at: u64,
    kind: ExperimentKind,
    experiments: Vec<ExperimentEntry<'a>>,
}

pub fn experiment(args: &ExperimentArgs, kind: ExperimentKind) -> Result<(), CliError> {
    let seed = seed_override()?;
    let mut configs = load_configs(&args.config)?;
    for c in &mut configs {
        if let Some(s) = seed {
            c.base_seed = s;
        }
        c.solver = args.solver.apply(c.solver);
        c.validate()?;
    }
    let results = with_threads(args.threads, || {
        configs
            .iter()
            .map(|c| match kind {
                ExperimentKind::Rmse => run_rmse_experiment(c),
                ExperimentKind::Mad => run_mad_experiment(c),
            })
            .collect::<mollikit::Result<Vec<_>>>()
    })??;

    let runs: Vec<(ExperimentConfig, ExperimentResult)> = configs.into_iter().zip(results).collect();
    let report = ExperimentReport {
        generated_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        kind,
        experiments: runs
            .iter()
            .map(|(config, result)| ExperimentEntry { config, result })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&report).expect("report is always serialisable");
    std::fs::write(&args.out, json + "\n")
        .map_err(|e| CliError::io(format!("cannot write {}", args.out.display()), e))?;

    let csv_path = args
        .csv
        .clone()
        .unwrap_or_else(|| args.out.with_extension("csv"));
    let (header, rows) = experiment_table(kind, &runs);
    write_rows(&csv_path, &header, &rows)
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<(), CliError> {
    let loss = LossSpec::check(args.tau)?;
    let density = ErrorDensity::centred(args.dist.into(), args.tau)?;
    let a = expected_curvature(&loss, &density)?;
    if args.n.is_empty() || args.reps == 0 {
        return Err(CliError::Usage("diagnose needs at least one n and one replication".into()));
    }
    let seed = seed_override()?.unwrap_or(args.seed);

    let mut header = vec!["n".to_string(), "median_gap".to_string()];
    header.extend(args.m.iter().map(|m| format!("mean_minimizer_gap_m{m}")));
    header.push("loglog_scale".into());

    let mut rows = Vec::new();
    let mut medians = Vec::new();
    for &n in &args.n {
        let config = ExperimentConfig {
            n,
            replications: args.reps,
            tau: args.tau,
            error_dist: args.dist.into(),
            m_list: args.m.clone(),
            h_list: Vec::new(),
            base_seed: seed,
            kernel: args.kernel,
            solver: args.solver.apply(Default::default()),
        };
        let per_rep = with_threads(args.threads, || {
            replicate_map(&config, |_, sample| {
                let gap = approximation_gap(sample, &loss, a, args.radius, args.probes)?;
                let minimizers = config
                    .m_list
                    .iter()
                    .map(|&m| minimizer_gap(sample, &loss, config.kernel, m, a, &config.solver))
                    .collect::<mollikit::Result<Vec<_>>>()?;
                Ok((gap, minimizers))
            })
        })??;

        let mut gaps: Vec<f64> = per_rep.iter().map(|(g, _)| *g).collect();
        gaps.sort_by(f64::total_cmp);
        let mid = gaps.len() / 2;
        let median = if gaps.len() % 2 == 1 {
            gaps[mid]
        } else {
            0.5 * (gaps[mid - 1] + gaps[mid])
        };
        medians.push((n as f64, median));

        let mut row = vec![n.to_string(), fmt(median)];
        for j in 0..args.m.len() {
            let mean = per_rep.iter().map(|(_, d)| d[j]).sum::<f64>() / per_rep.len() as f64;
            row.push(fmt(mean));
        }
        row.push(loglog_scale(n).map(fmt).unwrap_or_default());
        rows.push(row);
    }
    write_rows(&args.out, &header, &rows)?;
    if medians.len() >= 2 {
        println!("log-log slope of median gap vs n: {:.4}", loglog_slope(&medians));
    }
    Ok(())
}

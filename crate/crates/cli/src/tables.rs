//! CSV writers. Every float is written with 17 significant digits so
//! values round-trip exactly.

use std::path::Path;

use mollikit::montecarlo::{ExperimentConfig, ExperimentKind, ExperimentResult};
use mollikit::ErrorDist;

use crate::CliError;

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::io(format!("cannot write {}", path.display()), e.into()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
        .map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
    Ok(())
}

fn cell_label(c: &ExperimentConfig) -> String {
    let dist = match c.error_dist {
        ErrorDist::Normal01 => "normal",
        ErrorDist::StudentT4 => "t4",
    };
    format!("{dist} tau={} n={}", c.tau, c.n)
}

/// One row per estimator/parameter, one column per (distribution, τ, n)
/// cell. A row missing from a cell is left blank.
pub fn experiment_table(
    kind: ExperimentKind,
    runs: &[(ExperimentConfig, ExperimentResult)],
) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["estimator".to_string()];
    header.extend(runs.iter().map(|(c, _)| cell_label(c)));

    let mut labels: Vec<String> = Vec::new();
    let mut cells: Vec<Vec<(String, f64)>> = Vec::new();
    for (_, r) in runs {
        let mut entries = Vec::new();
        match kind {
            ExperimentKind::Rmse => {
                entries.push(("RMSE_tau".to_string(), r.rmse_tau));
                entries.extend(r.rmse_m.iter().map(|p| (format!("RMSE_m m={}", p.param), p.value)));
                entries.extend(r.rmse_h.iter().map(|p| (format!("RMSE_h h={}", p.param), p.value)));
            }
            ExperimentKind::Mad => {
                entries.extend(r.mad_m.iter().map(|p| (format!("MAD_m m={}", p.param), p.value)));
            }
        }
        entries.push(("excluded".to_string(), r.excluded as f64));
        for (label, _) in &entries {
            if !labels.contains(label) {
                labels.push(label.clone());
            }
        }
        cells.push(entries);
    }
    // keep the bookkeeping row last
    labels.retain(|l| l != "excluded");
    labels.push("excluded".to_string());

    let rows = labels
        .iter()
        .map(|label| {
            let mut row = vec![label.clone()];
            for entries in &cells {
                let v = entries.iter().find(|(l, _)| l == label).map(|(_, v)| *v);
                row.push(match (label.as_str(), v) {
                    ("excluded", Some(v)) => format!("{}", v as usize),
                    (_, Some(v)) => fmt(v),
                    (_, None) => String::new(),
                });
            }
            row
        })
        .collect();
    (header, rows)
}

//! Plain-text summary of a run directory.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let head = r.headers()?.iter().map(str::to_owned).collect();
    let rows = r.records().map(|rec| rec.map(|x| x.iter().map(str::to_owned).collect())).collect::<Result<_, _>>()?;
    Ok((head, rows))
}

/// Summarizes `summary.csv`, `energy.csv` and `solver_log.csv` found in `dir`.
pub fn report(dir: &Path) -> Result<String, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("report: {} is not a directory", dir.display())));
    }
    let mut out = String::new();
    let mut found = false;
    let summary = dir.join("summary.csv");
    if summary.exists() {
        found = true;
        let (_, rows) = read_table(&summary)?;
        let _ = writeln!(out, "run summary ({})", dir.display());
        for r in rows {
            let _ = writeln!(out, "  {:<20} {}", r[0], r.get(1).map(String::as_str).unwrap_or(""));
        }
    }
    let energy = dir.join("energy.csv");
    if energy.exists() {
        found = true;
        let (head, rows) = read_table(&energy)?;
        let col = |name: &str| head.iter().position(|h| h == name);
        if let (Some(first), Some(last), Some(ke)) = (rows.first(), rows.last(), col("kinetic_energy")) {
            let e0: f64 = first[ke].parse().unwrap_or(f64::NAN);
            let e1: f64 = last[ke].parse().unwrap_or(f64::NAN);
            let _ = writeln!(out, "energy: {} rows, KE {e0:.6e} -> {e1:.6e} (ratio {:.6})", rows.len(), e1 / e0);
            if let Some(dv) = col("max_divergence") {
                let m = rows.iter().filter_map(|r| r[dv].parse::<f64>().ok()).fold(0.0, f64::max);
                let _ = writeln!(out, "  max divergence over run: {m:.3e}");
            }
        }
    }
    let log = dir.join("solver_log.csv");
    if log.exists() {
        found = true;
        let (head, rows) = read_table(&log)?;
        for name in ["momentum_iterations", "pressure_iterations"] {
            if let Some(c) = head.iter().position(|h| h == name) {
                let its: Vec<f64> = rows.iter().filter_map(|r| r[c].parse().ok()).collect();
                if !its.is_empty() {
                    let mean = its.iter().sum::<f64>() / its.len() as f64;
                    let max = its.iter().cloned().fold(0.0, f64::max);
                    let _ = writeln!(out, "  {name}: mean {mean:.1}, max {max}");
                }
            }
        }
    }
    let mut stats: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.starts_with("stats_window") || n.ends_with(".vtk") || n.ends_with(".ckpt"))
        .collect();
    stats.sort();
    if !stats.is_empty() {
        let _ = writeln!(out, "other artifacts: {}", stats.join(", "));
    }
    if !found {
        return Err(CliError::Config(format!("report: no run artifacts in {}", dir.display())));
    }
    Ok(out)
}

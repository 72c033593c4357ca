use std::fs;
use std::path::Path;

use serde::Serialize;
use stochmor::sdesim::SimulationResult;

use crate::error::CliResult;
use crate::pipeline::Evaluation;
use crate::sweep::SweepRow;

/// 17 significant digits, scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn write_bounds(path: &Path, e: &Evaluation) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "distance", "e1", "e2", "e3", "u_norm", "bound"])?;
    w.write_record([e.mode.to_string(), opt(e.distance), opt(e.e1), opt(e.e2), opt(e.e3), num(e.u_norm), num(e.bound)])?;
    w.flush()?;
    Ok(())
}

pub fn write_mean_error_curve(path: &Path, result: &SimulationResult) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "mean_error"])?;
    for (t, e) in result.t.iter().zip(&result.mean_error_curve) {
        w.write_record([num(*t), num(*e)])?;
    }
    w.flush()?;
    Ok(())
}

/// Outputs of the full and reduced model on the first path.
pub fn write_sample_trajectory(path: &Path, result: &SimulationResult) -> CliResult<()> {
    let (full, red) = (&result.y_full[0], &result.y_reduced[0]);
    let p = full.nrows();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=p).map(|i| format!("y{i}")));
    header.extend((1..=p).map(|i| format!("y_reduced{i}")));
    w.write_record(&header)?;
    for (k, t) in result.t.iter().enumerate() {
        let mut rec = vec![num(*t)];
        rec.extend(full.column(k).iter().map(|v| num(*v)));
        rec.extend(red.column(k).iter().map(|v| num(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["r", "distance", "E1", "E2", "E3", "sup_error", "std_error", "status"])?;
    for row in rows {
        w.write_record([
            row.r.to_string(),
            opt(row.distance),
            opt(row.e1),
            opt(row.e2),
            opt(row.e3),
            opt(row.sup_error),
            opt(row.std_error),
            row.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock times are kept apart from `sweep.csv` so that reruns of the
/// table are byte-identical.
pub fn write_sweep_runtime(path: &Path, rows: &[SweepRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["r", "runtime_seconds"])?;
    for row in rows {
        w.write_record([row.r.to_string(), num(row.runtime)])?;
    }
    w.flush()?;
    Ok(())
}

use std::io::{self, Write};
use std::path::Path;

use anyhow::anyhow;
use qmem_core::stability::{adev_curve, AdevMode, AdevPoint, CurveOptions, GapPolicy, StabilitySeries, TauGrid};

use crate::io::{fmt_f64, parse_cell, read_table, to_stdout, write_atomic};
use crate::{data, usage, AdevArgs, CliResult};

pub fn write_curve<W: Write + ?Sized>(w: &mut W, curve: &[AdevPoint]) -> io::Result<()> {
    writeln!(w, "tau_s,adev,ci_low,ci_high")?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for p in curve {
        writeln!(w, "{},{},{},{}", p.tau_s, fmt_f64(p.adev), opt(p.ci_low), opt(p.ci_high))?;
    }
    Ok(())
}

/// `(timestamp_s, value)` pairs from a CSV. Rows with an empty value cell are
/// skipped, so they surface as gaps.
pub fn read_series(path: &Path, column: Option<&str>) -> CliResult<Vec<(f64, f64)>> {
    let table = read_table(path)?;
    let t_col = table.column("timestamp").unwrap_or(0);
    let v_col = match column {
        Some(name) => table.column(name).ok_or_else(|| {
            data(anyhow!("{}: no column {name:?} (have {})", path.display(), table.headers.join(", ")))
        })?,
        None if table.headers.len() >= 2 => usize::from(t_col == 0),
        None => return Err(data(anyhow!("{}: need a timestamp and a value column", path.display()))),
    };
    let v_name = &table.headers[v_col];
    let mut points = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let line = i + 2;
        let t = parse_cell(row, t_col, line, &table.headers[t_col])?
            .ok_or_else(|| data(anyhow!("line {line}: missing timestamp")))?;
        let Some(v) = parse_cell(row, v_col, line, v_name)? else { continue };
        if !v.is_finite() {
            return Err(data(anyhow!("line {line}: column {v_name}: non-finite value {v}")));
        }
        points.push((t, v));
    }
    Ok(points)
}

/// ADEV curve of a `(timestamp, value)` CSV; writes `tau_s,adev,ci_low,ci_high`.
pub fn cmd_adev(a: &AdevArgs) -> CliResult<Vec<AdevPoint>> {
    if !(a.tau0_s > 0.0 && a.tau0_s.is_finite()) {
        return Err(usage(anyhow!("--tau0-s must be positive, got {}", a.tau0_s)));
    }
    if !(a.confidence > 0.0 && a.confidence < 1.0) {
        return Err(usage(anyhow!("--confidence must lie in (0,1), got {}", a.confidence)));
    }
    let points = read_series(&a.series, a.column.as_deref())?;
    let policy = if a.interpolate_gaps { GapPolicy::Interpolate } else { GapPolicy::Reject };
    let series = StabilitySeries::from_timestamped(&points, a.tau0_s, policy).map_err(data)?;
    let opts = CurveOptions {
        grid: if a.dense { TauGrid::Dense } else { TauGrid::Octave },
        mode: if a.normalize { AdevMode::Fractional } else { AdevMode::Absolute },
        confidence: a.confidence,
    };
    let curve = adev_curve(&series, &opts).map_err(data)?;
    match &a.out {
        Some(p) => write_atomic(p, |w| write_curve(w, &curve))?,
        None => to_stdout(|w| write_curve(w, &curve))?,
    }
    Ok(curve)
}

use anyhow::anyhow;
use qmem_core::fitting::{fit_exponential, ScanPoint, Weighting};
use qmem_core::FitError;
use serde_json::{json, Value};

use crate::io::{parse_cell, print_json, read_table, sha256_file, write_json};
use crate::{data, usage, CliResult, FitArgs};

/// Fits `y = H·exp(−x/tau)` to an `x,y[,sigma_y]` CSV. `tau` is reported in the units of `x`.
pub fn cmd_fit_lifetime(a: &FitArgs) -> CliResult<Value> {
    let table = read_table(&a.points)?;
    let col = |name: &str, fallback: usize| table.column(name).or((table.headers.len() > fallback).then_some(fallback));
    let (Some(xc), Some(yc)) = (col("x", 0), col("y", 1)) else {
        return Err(data(anyhow!("{}: need x and y columns", a.points.display())));
    };
    let sc = col("sigma_y", 2);
    let mut points = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let line = i + 2;
        let need = |c: usize, name: &str| {
            parse_cell(row, c, line, name)?.ok_or_else(|| data(anyhow!("line {line}: missing {name}")))
        };
        let sigma_y = match sc {
            Some(c) => parse_cell(row, c, line, "sigma_y")?,
            None => None,
        };
        points.push(ScanPoint { x: need(xc, "x")?, y: need(yc, "y")?, sigma_y });
    }
    let weighting = if a.unweighted { Weighting::Unit } else { Weighting::Sigma };
    let fit = fit_exponential(&points, weighting).map_err(|e| match e {
        FitError::TooFewPoints { .. } => usage(e),
        e => data(e),
    })?;
    let doc = json!({
        "model": "y = h * exp(-x / tau)",
        "input": { "path": a.points.display().to_string(), "sha256": sha256_file(&a.points)? },
        "n_points": points.len(),
        "weighting": if fit.absolute_sigma { "sigma" } else { "unit" },
        "fit": serde_json::to_value(&fit).expect("fit serializes"),
    });
    match &a.out {
        Some(p) => write_json(p, &doc)?,
        None => print_json(&doc)?,
    }
    Ok(doc)
}

use std::io::{self, Write};

use anyhow::anyhow;
use qmem_core::metrics::{classical_threshold, ClassicalThreshold};
use serde_json::json;

use crate::io::{print_json, to_stdout, write_atomic, write_json};
use crate::{usage, CliResult, ThresholdArgs};

fn parse_sweep(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || usage(anyhow!("--sweep expects start:stop:points with 0 < start < stop, got {s:?}"));
    let [a, b, n] = parts[..] else { return Err(bad()) };
    let (a, b): (f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    let n: usize = n.parse().map_err(|_| bad())?;
    if !(a > 0.0 && b > a && b.is_finite() && n >= 2) {
        return Err(bad());
    }
    let ratio = (b / a).ln();
    Ok((0..n).map(|i| a * (ratio * i as f64 / (n - 1) as f64).exp()).collect())
}

fn write_strata<W: Write + ?Sized>(w: &mut W, t: &ClassicalThreshold) -> io::Result<()> {
    writeln!(w, "n,p_n,f_n,accepted")?;
    for s in &t.strata {
        writeln!(w, "{},{:e},{},{:e}", s.n, s.p_n, s.f_n, s.accepted)?;
    }
    Ok(())
}

fn write_sweep<W: Write + ?Sized>(w: &mut W, rows: &[(f64, f64)]) -> io::Result<()> {
    writeln!(w, "mu_in,f_class")?;
    for (mu, f) in rows {
        writeln!(w, "{mu},{f}")?;
    }
    Ok(())
}

/// Classical fidelity bound and its stratum table, or a sweep over `mu_in`.
pub fn cmd_threshold(a: &ThresholdArgs) -> CliResult<()> {
    if let Some(spec) = &a.sweep {
        let rows = parse_sweep(spec)?
            .into_iter()
            .map(|mu| classical_threshold(mu, a.eta, a.n_max).map(|t| (mu, t.f_class)).map_err(usage))
            .collect::<CliResult<Vec<_>>>()?;
        return match &a.out {
            Some(p) => write_atomic(p, |w| write_sweep(w, &rows)),
            None => to_stdout(|w| write_sweep(w, &rows)),
        };
    }
    let mu = a.mu.ok_or_else(|| usage(anyhow!("either --mu or --sweep is required")))?;
    let t = classical_threshold(mu, a.eta, a.n_max).map_err(usage)?;
    let doc = json!({
        "mu_in": t.mu_in,
        "eta_accept": t.eta_accept,
        "n_max": t.n_max,
        "tail_bound": t.tail_bound,
        "f_class": t.f_class,
        "strata": t.strata,
    });
    if let Some(p) = &a.strata_csv {
        write_atomic(p, |w| write_strata(w, &t))?;
    }
    match &a.out {
        Some(p) => write_json(p, &doc),
        None => print_json(&doc),
    }
}

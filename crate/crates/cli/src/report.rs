use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use qmem_core::metrics::{analyze, compute_metrics, FoldOptions, MetricsResult, NoiseReference, WindowCounts};
use qmem_core::stability::{adev_at, adev_curve, AdevMode, CurveOptions, StabilitySeries};
use qmem_core::{validate_config, Calibration, ExperimentConfig};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::adev::write_curve;
use crate::io::{ensure_dir, fmt_f64, load_tags, parse_cell, print_json, read_table, write_atomic, write_json};
use crate::simulate::{COUNTS_CSV, MANIFEST};
use crate::{data, usage, CliResult, ReportArgs};

pub const CAMPAIGN_CSV: &str = "campaign.csv";
pub const SUMMARY_JSON: &str = "summary.json";
const ONE_HOUR_S: f64 = 3600.0;

#[derive(Debug, Deserialize)]
struct ManifestPoint {
    index: usize,
    offset_s: f64,
    #[serde(default)]
    signal_file: Option<String>,
    #[serde(default)]
    vacuum_file: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Manifest {
    cadence_s: f64,
    #[serde(default)]
    mode: Option<String>,
    config: Value,
    points: Vec<ManifestPoint>,
}

/// One aggregated campaign row.
#[derive(Debug, Clone)]
pub struct PointMetrics {
    pub timestamp_s: f64,
    pub result: MetricsResult,
}

impl PointMetrics {
    fn eta(&self) -> Option<f64> {
        self.result.eta_e2e.map(|m| m.value)
    }

    fn fidelity(&self) -> Option<f64> {
        self.result.fidelity.map(|m| m.value)
    }
}

fn load_manifest(dir: &Path) -> CliResult<(Manifest, ExperimentConfig)> {
    if !dir.is_dir() {
        return Err(usage(anyhow!("{} is not a directory", dir.display())));
    }
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(usage(anyhow!("{}: no {MANIFEST}; not a campaign directory", dir.display())));
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display())).map_err(usage)?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("{}", path.display())).map_err(usage)?;
    if m.points.is_empty() {
        return Err(usage(anyhow!("{}: campaign has no points", path.display())));
    }
    let cfg = ExperimentConfig::from_json(&m.config.to_string())
        .and_then(validate_config)
        .map_err(|e| usage(anyhow!("{}: config: {e}", path.display())))?;
    Ok((m, cfg))
}

fn counts_from_csv(dir: &Path, cfg: &ExperimentConfig) -> CliResult<Vec<(usize, WindowCounts)>> {
    let path = dir.join(COUNTS_CSV);
    let table = read_table(&path)?;
    let col = |name: &str| table.column(name).ok_or_else(|| data(anyhow!("{}: missing column {name}", path.display())));
    let (ci, cm, cs, cn) = (col("index")?, col("n_mon")?, col("n_sig")?, col("n_noi")?);
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let line = i + 2;
            let get = |c: usize, name: &str| -> CliResult<u64> {
                let v = parse_cell(row, c, line, name)?.ok_or_else(|| data(anyhow!("line {line}: missing {name}")))?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(data(anyhow!("line {line}: {name} must be a non-negative integer, got {v}")));
                }
                Ok(v as u64)
            };
            let counts = WindowCounts {
                n_mon: get(cm, "n_mon")?,
                n_sig: get(cs, "n_sig")?,
                n_noi: get(cn, "n_noi")?,
                f_rep_hz: cfg.f_rep_hz,
                t_int: cfg.t_int,
            };
            Ok((get(ci, "index")? as usize, counts))
        })
        .collect()
}

fn analyze_point(dir: &Path, p: &ManifestPoint, cfg: &ExperimentConfig, cal: &Calibration) -> CliResult<MetricsResult> {
    let file = |f: &Option<String>, what: &str| -> CliResult<PathBuf> {
        f.as_ref().map(|f| dir.join(f)).ok_or_else(|| data(anyhow!("point {}: no {what} file in manifest", p.index)))
    };
    let sig = load_tags(&file(&p.signal_file, "signal")?)?;
    let vac = load_tags(&file(&p.vacuum_file, "vacuum")?)?;
    let windows = cfg.windows().map_err(usage)?;
    let a = analyze(&sig, &NoiseReference::Vacuum(&vac), cal, &windows, &FoldOptions::for_config(cfg))
        .with_context(|| format!("point {}", p.index))
        .map_err(data)?;
    Ok(a.result)
}

/// Metrics of every campaign point, in manifest order.
pub fn campaign_metrics(dir: &Path, no_systematics: bool) -> CliResult<(Vec<PointMetrics>, f64)> {
    let (m, cfg) = load_manifest(dir)?;
    let cal = if no_systematics { cfg.calibration.without_systematics() } else { cfg.calibration.clone() };
    let results: Vec<MetricsResult> = if m.mode.as_deref() == Some("counts") {
        let counts = counts_from_csv(dir, &cfg)?;
        m.points
            .iter()
            .map(|p| {
                let c = counts
                    .iter()
                    .find(|(i, _)| *i == p.index)
                    .ok_or_else(|| data(anyhow!("{COUNTS_CSV}: no row for point {}", p.index)))?;
                compute_metrics(&c.1, &cal).with_context(|| format!("point {}", p.index)).map_err(data)
            })
            .collect::<CliResult<_>>()?
    } else {
        m.points.par_iter().map(|p| analyze_point(dir, p, &cfg, &cal)).collect::<CliResult<_>>()?
    };
    let rows = m
        .points
        .iter()
        .zip(results)
        .map(|(p, result)| PointMetrics { timestamp_s: p.offset_s, result })
        .collect();
    Ok((rows, m.cadence_s))
}

fn stats(values: &[f64]) -> Value {
    if values.is_empty() {
        return json!({ "n": 0, "mean": null, "sd": null });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        None
    };
    json!({ "n": values.len(), "mean": mean, "sd": sd })
}

fn write_rows(path: &Path, rows: &[PointMetrics]) -> CliResult<()> {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    write_atomic(path, |w| {
        writeln!(w, "timestamp,mu_in,eta_e2e,snr,mu_1,F,F_class")?;
        for r in rows {
            let m = &r.result;
            let snr = match m.snr {
                Some(s) => fmt_f64(s.value),
                None if m.counts.n_noi == 0 => "inf".into(),
                None => String::new(),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.timestamp_s,
                fmt_f64(m.mu_in.value),
                opt(r.eta()),
                snr,
                opt(m.mu_1.map(|v| v.value)),
                opt(r.fidelity()),
                opt(m.f_class_e2e),
            )?;
        }
        Ok(())
    })
}

/// Complete series of one metric, or `None` if any point lacks it.
fn series(rows: &[PointMetrics], cadence_s: f64, get: impl Fn(&PointMetrics) -> Option<f64>) -> Option<StabilitySeries> {
    let values: Option<Vec<f64>> = rows.iter().map(get).collect();
    values.map(|v| StabilitySeries { values: v, tau0_s: cadence_s, t_start_s: rows[0].timestamp_s })
}

fn adev_section(out: &Path, name: &str, s: Option<StabilitySeries>) -> CliResult<Value> {
    let Some(s) = s else {
        return Ok(json!({ "available": false, "reason": format!("{name} undefined at some points") }));
    };
    let mut section = json!({ "available": true });
    for (label, mode) in [("absolute", AdevMode::Absolute), ("fractional", AdevMode::Fractional)] {
        let curve = match adev_curve(&s, &CurveOptions { mode, ..Default::default() }) {
            Ok(c) => c,
            Err(e) => return Ok(json!({ "available": false, "reason": e.to_string() })),
        };
        let file = format!("adev_{name}_{label}.csv");
        write_atomic(&out.join(&file), |w| write_curve(w, &curve))?;
        let one_hour = adev_at(&s, ONE_HOUR_S, mode).ok();
        section[label] = json!({
            "curve_file": file,
            "curve": curve,
            "sigma_y_1h": one_hour.map(|(_, v)| v),
            "m_1h": one_hour.map(|(m, _)| m),
        });
    }
    Ok(section)
}

/// Aggregates a campaign directory: `campaign.csv`, ADEV curves and `summary.json`.
pub fn cmd_report(a: &ReportArgs) -> CliResult<Value> {
    let (rows, cadence_s) = campaign_metrics(&a.campaign_dir, a.no_systematics)?;
    let out = a.out.clone().unwrap_or_else(|| a.campaign_dir.join("report"));
    ensure_dir(&out)?;
    write_rows(&out.join(CAMPAIGN_CSV), &rows)?;

    let collect = |get: &dyn Fn(&PointMetrics) -> Option<f64>| rows.iter().filter_map(get).collect::<Vec<f64>>();
    let above = rows
        .iter()
        .filter(|r| matches!((r.fidelity(), r.result.f_class_e2e), (Some(f), Some(c)) if f > c))
        .count();
    let summary = json!({
        "campaign_dir": a.campaign_dir.display().to_string(),
        "n_points": rows.len(),
        "cadence_s": cadence_s,
        "duration_h": rows.last().map(|r| (r.timestamp_s - rows[0].timestamp_s) / 3600.0),
        "mu_in": stats(&collect(&|r| Some(r.result.mu_in.value))),
        "eta_e2e": stats(&collect(&|r| r.eta())),
        "snr": stats(&collect(&|r| r.result.snr.map(|s| s.value))),
        "mu_1": stats(&collect(&|r| r.result.mu_1.map(|v| v.value))),
        "fidelity": stats(&collect(&|r| r.fidelity())),
        "f_class": stats(&collect(&|r| r.result.f_class_e2e)),
        "threshold_trace": {
            "file": CAMPAIGN_CSV,
            "points_above_classical": above,
        },
        "adev": {
            "eta_e2e": adev_section(&out, "eta_e2e", series(&rows, cadence_s, PointMetrics::eta))?,
            "fidelity": adev_section(&out, "fidelity", series(&rows, cadence_s, PointMetrics::fidelity))?,
        },
    });
    write_json(&out.join(SUMMARY_JSON), &summary)?;
    let mut brief = summary.clone();
    for k in ["eta_e2e", "fidelity"] {
        for mode in ["absolute", "fractional"] {
            if let Some(sec) = brief["adev"][k].get_mut(mode) {
                sec.as_object_mut().map(|o| o.remove("curve"));
            }
        }
    }
    print_json(&brief)?;
    Ok(summary)
}

use std::path::Path;

use anyhow::anyhow;
use qmem_core::metrics::{analyze, Analysis, FoldOptions, NoiseReference};
use qmem_core::model::check_windows;
use qmem_core::tagstream::FoldedHistogram;
use qmem_core::{DetectionWindow, ExperimentConfig, Time, Windows};
use serde_json::{json, Value};

use crate::io::{ensure_dir, load_config, load_tags, print_json, sha256_file, write_atomic, write_json};
use crate::{data, usage, AnalyzeArgs, CliResult};

pub const METRICS_JSON: &str = "metrics.json";

/// `[mon_start, mon_end, sig_start, sig_end]` in ns, checked against the shot frame.
pub fn windows_from_ns(cfg: &ExperimentConfig, ns: &[f64]) -> CliResult<Windows> {
    let [a, b, c, d] = ns else {
        return Err(usage(anyhow!("--windows takes four values, got {}", ns.len())));
    };
    let w = |s: f64, e: f64| DetectionWindow::new(Time::from_ns_f64(s), Time::from_ns_f64(e)).map_err(usage);
    let windows = Windows { monitor: w(*a, *b)?, signal: w(*c, *d)? };
    check_windows(&cfg.timing, &windows).map_err(usage)
}

pub fn windows_json(w: &Windows) -> Value {
    let ns = |t: Time| t.as_ns_f64();
    json!({
        "monitor": { "start_ns": ns(w.monitor.start), "end_ns": ns(w.monitor.end) },
        "signal": { "start_ns": ns(w.signal.start), "end_ns": ns(w.signal.end) },
    })
}

fn histogram_json(h: &FoldedHistogram) -> Value {
    json!({ "n_shots": h.n_shots, "total": h.total(), "orphans": h.orphans, "out_of_span": h.out_of_span })
}

fn input_json(path: &Path) -> CliResult<Value> {
    Ok(json!({ "path": path.display().to_string(), "sha256": sha256_file(path)? }))
}

fn write_histogram(path: &Path, h: &FoldedHistogram) -> CliResult<()> {
    write_atomic(path, |w| h.write_csv(w))
}

/// Folds, bins and evaluates one signal run. Writes `metrics.json` and the
/// folded histograms into `--out`, prints the metrics document, and returns it.
pub fn cmd_analyze(a: &AnalyzeArgs) -> CliResult<Value> {
    let cfg = load_config(&a.config)?;
    let (windows, source) = match &a.windows {
        Some(ns) => (windows_from_ns(&cfg, &ns.0)?, "override"),
        None => (cfg.windows().map_err(usage)?, "config"),
    };
    let cal = if a.no_systematics { cfg.calibration.without_systematics() } else { cfg.calibration.clone() };
    let opts = FoldOptions::for_config(&cfg);

    let run = load_tags(&a.tags)?;
    let vac = a.vacuum.as_deref().map(load_tags).transpose()?;
    let noise = match (&vac, a.noise_counts) {
        (Some(v), _) => NoiseReference::Vacuum(v),
        (None, Some(n)) => NoiseReference::Counts(n),
        (None, None) => NoiseReference::None,
    };
    let Analysis { result, monitor_histogram, signal_histogram, vacuum_histogram } =
        analyze(&run, &noise, &cal, &windows, &opts).map_err(data)?;

    let mut inputs = json!({ "tags": input_json(&a.tags)?, "config": input_json(&a.config)? });
    match (&a.vacuum, a.noise_counts) {
        (Some(p), _) => inputs["vacuum"] = input_json(p)?,
        (None, Some(n)) => inputs["noise_counts"] = json!(n),
        _ => {}
    }
    let mut histograms = json!({
        "monitor": histogram_json(&monitor_histogram),
        "signal": histogram_json(&signal_histogram),
    });
    if let Some(h) = &vacuum_histogram {
        histograms["vacuum"] = histogram_json(h);
    }
    let doc = json!({
        "inputs": inputs,
        "windows": windows_json(&windows),
        "windows_source": source,
        "fold": {
            "bin_width_ps": opts.bin_width.as_ps(),
            "origin_ps": opts.origin.as_ps(),
            "span_ps": opts.span.as_ps(),
        },
        "calibration": serde_json::to_value(&cal).expect("calibration serializes"),
        "histograms": histograms,
        "metrics": serde_json::to_value(&result).expect("metrics serialize"),
    });

    ensure_dir(&a.out)?;
    write_histogram(&a.out.join("histogram_monitor.csv"), &monitor_histogram)?;
    write_histogram(&a.out.join("histogram_signal.csv"), &signal_histogram)?;
    if let Some(h) = &vacuum_histogram {
        write_histogram(&a.out.join("histogram_vacuum.csv"), h)?;
    }
    write_json(&a.out.join(METRICS_JSON), &doc)?;
    print_json(&doc["metrics"])?;
    Ok(doc)
}

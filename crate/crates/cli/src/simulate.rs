use std::io;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use qmem_core::simulator::{plan_campaign, simulate_campaign_counts, simulate_run_to, DriftModel};
use qmem_core::ExperimentConfig;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::io::{ensure_dir, load_config, sha256_file, write_atomic, write_json};
use crate::{usage, CliResult, SimulateArgs};

pub const MANIFEST: &str = "manifest.json";
pub const COUNTS_CSV: &str = "counts.csv";

pub fn signal_file(index: usize) -> String {
    format!("point_{index:04}.qtt")
}

pub fn vacuum_file(index: usize) -> String {
    format!("point_{index:04}_vacuum.qtt")
}

fn write_run(path: &Path, cfg: &ExperimentConfig, seed: u64) -> CliResult<u64> {
    let mut written = 0;
    write_atomic(path, |w| {
        written = simulate_run_to(cfg, seed, w).map_err(io::Error::other)?;
        Ok(())
    })?;
    Ok(written)
}

fn run_manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Simulates one run, or a campaign when `--campaign` is set. Returns the manifest.
pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<Value> {
    let cfg = load_config(&a.config)?;
    match a.campaign {
        None => simulate_single(a, cfg),
        Some(n) => simulate_campaign(a, cfg, n),
    }
}

fn simulate_single(a: &SimulateArgs, cfg: ExperimentConfig) -> CliResult<Value> {
    let cfg = if a.vacuum { cfg.vacuum() } else { cfg };
    let records = write_run(&a.out, &cfg, a.seed)?;
    let manifest = json!({
        "kind": "run",
        "seed": a.seed,
        "vacuum": a.vacuum,
        "n_shots": cfg.n_shots(),
        "records": records,
        "file": a.out.file_name().map(|n| n.to_string_lossy().into_owned()),
        "sha256": sha256_file(&a.out)?,
        "config": serde_json::to_value(&cfg).expect("config serializes"),
    });
    write_json(&run_manifest_path(&a.out), &manifest)?;
    Ok(manifest)
}

fn simulate_campaign(a: &SimulateArgs, cfg: ExperimentConfig, n_points: usize) -> CliResult<Value> {
    if n_points == 0 {
        return Err(usage(anyhow!("--campaign needs at least one point")));
    }
    if !(a.cadence_s > 0.0 && a.cadence_s.is_finite()) {
        return Err(usage(anyhow!("--cadence-s must be positive, got {}", a.cadence_s)));
    }
    if !(a.drift >= 0.0 && a.drift.is_finite()) {
        return Err(usage(anyhow!("--drift must be >= 0, got {}", a.drift)));
    }
    ensure_dir(&a.out)?;
    let drift = DriftModel::uniform(a.drift);
    let plan = plan_campaign(&cfg, n_points, a.cadence_s, &drift, a.seed);

    let points: Vec<Value> = if a.counts_only {
        let sampled = simulate_campaign_counts(&cfg, n_points, a.cadence_s, &drift, a.seed).map_err(usage)?;
        write_atomic(&a.out.join(COUNTS_CSV), |w| {
            writeln!(w, "index,offset_s,n_mon,n_sig,n_noi")?;
            for (p, c) in &sampled {
                writeln!(w, "{},{},{},{},{}", p.index, p.offset_s, c.n_mon, c.n_sig, c.n_noi)?;
            }
            Ok(())
        })?;
        plan.iter().map(|p| serde_json::to_value(p).expect("point serializes")).collect()
    } else {
        plan.par_iter()
            .map(|p| {
                let pc = p.config(&cfg);
                write_run(&a.out.join(signal_file(p.index)), &pc, p.signal_seed)?;
                write_run(&a.out.join(vacuum_file(p.index)), &pc.vacuum(), p.vacuum_seed)?;
                let mut v = serde_json::to_value(p).expect("point serializes");
                v["signal_file"] = json!(signal_file(p.index));
                v["vacuum_file"] = json!(vacuum_file(p.index));
                Ok(v)
            })
            .collect::<CliResult<_>>()?
    };

    let manifest = json!({
        "kind": "campaign",
        "seed": a.seed,
        "n_points": n_points,
        "cadence_s": a.cadence_s,
        "drift": drift,
        "mode": if a.counts_only { "counts" } else { "tags" },
        "config": serde_json::to_value(&cfg).expect("config serializes"),
        "points": points,
    });
    // Written last: a manifest means the campaign is complete.
    write_json(&a.out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

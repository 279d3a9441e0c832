//! Run directory layout:
//!
//! ```text
//! manifest.toml        crate version and the full simulation config
//! trace.csv            t,seq,kind,src,dst,block_id
//! ledger.dag           the observer's ledger
//! metrics/summary.csv  name,value
//! metrics/*.csv        per-report tables
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{analyze, AnalysisError, Report, RunView};
use crate::dag::{parse_dag, serialize_dag, BlockDag, BlockId};
use crate::netsim::{format_trace, parse_trace, EventKind, SimConfig, SimResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: SimConfig,
}

/// Contents of a run directory.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub manifest: Manifest,
    pub dag: BlockDag,
    pub arrivals: Vec<(f64, BlockId)>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AnalysisError {
    AnalysisError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), AnalysisError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read(path: &Path) -> Result<String, AnalysisError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Writes a simulation result and its metrics. Returns the report.
pub fn write_run_dir(dir: &Path, result: &SimResult) -> Result<Report, AnalysisError> {
    let metrics = dir.join("metrics");
    fs::create_dir_all(&metrics).map_err(|e| io_err(&metrics, e))?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: result.config.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| AnalysisError::Io(e.to_string()))?;
    write(&dir.join("manifest.toml"), &text)?;
    write(&dir.join("trace.csv"), &format_trace(&result.trace))?;
    write(
        &dir.join("ledger.dag"),
        &serialize_dag(&result.observer_dag),
    )?;

    let report = analyze(&RunView::of(result))?;
    for (name, text) in render_metrics(&result.config, &report) {
        write(&metrics.join(name), &text)?;
    }
    Ok(report)
}

pub fn read_run_dir(dir: &Path) -> Result<RunFiles, AnalysisError> {
    let manifest: Manifest = toml::from_str(&read(&dir.join("manifest.toml"))?)
        .map_err(|e| AnalysisError::Io(format!("manifest.toml: {e}")))?;
    manifest.config.validate()?;
    let dag = parse_dag(&read(&dir.join("ledger.dag"))?)?;
    let observer = manifest.config.observer();
    let arrivals = parse_trace(&read(&dir.join("trace.csv"))?)?
        .into_iter()
        .filter(|r| r.kind == EventKind::AddBlock && r.dst == observer)
        .map(|r| (r.t, r.block))
        .collect();
    Ok(RunFiles {
        manifest,
        dag,
        arrivals,
    })
}

/// Recomputes every report from the ledger, trace and manifest. Fails with
/// [`AnalysisError::Mismatch`] if stored metrics disagree with the replay.
pub fn analyze_run_dir(dir: &Path) -> Result<(Report, Vec<(String, String)>), AnalysisError> {
    let files = read_run_dir(dir)?;
    let view = RunView {
        config: &files.manifest.config,
        dag: &files.dag,
        arrivals: &files.arrivals,
    };
    let report = analyze(&view)?;
    let rendered = render_metrics(&files.manifest.config, &report);
    for (name, text) in &rendered {
        let path: PathBuf = dir.join("metrics").join(name);
        if path.exists() && read(&path)? != *text {
            return Err(AnalysisError::Mismatch { file: name.clone() });
        }
    }
    Ok((report, rendered))
}

/// Metric files as (file name, contents).
pub fn render_metrics(cfg: &SimConfig, r: &Report) -> Vec<(String, String)> {
    let mut files = Vec::new();

    let mut s = String::from("name,value\n");
    let mut row = |k: &str, v: String| {
        let _ = writeln!(s, "{k},{v}");
    };
    row("protocol", format!("{:?}", cfg.protocol).to_lowercase());
    row("n", cfg.n.to_string());
    row("lambda", cfg.lambda.to_string());
    row("sim_time", cfg.sim_time.to_string());
    row("seed", cfg.seed.to_string());
    row("delay_diameter", r.delay_diameter.to_string());
    row("observed_blocks", r.observed_blocks.to_string());
    row("final_height", r.growth.final_height.to_string());
    row("height_rate", r.growth.rate.to_string());
    row("growth_bound", r.growth.bound.to_string());
    row("growth_rel_se", r.growth.rel_se.to_string());
    row(
        "growth_window_fraction",
        r.growth.window_fraction.to_string(),
    );
    row("growth_meets_bound", r.growth.meets_bound().to_string());
    row("rewarded_blocks", r.fairness.total_rewarded.to_string());
    row(
        "fairness_max_deviation",
        r.fairness.max_deviation().to_string(),
    );
    row("tps_measured", r.tps_measured.to_string());
    row("tps_theory", r.tps_theory.to_string());
    if let Some(c) = &r.consensus {
        row("decided_height", c.decided_height.to_string());
        row("confirmed", c.confirmed.to_string());
        row("cluster_rejected", c.cluster_rejected.to_string());
        row("late_rejected", c.late_rejected.to_string());
        row("fallback_windows", c.fallback_windows.to_string());
        row("degenerate_windows", c.degenerate_windows.to_string());
    }
    if let Some(o) = &r.order {
        row("order_len", o.order.order.len().to_string());
        row("order_omitted", o.order.omitted.len().to_string());
        row("order_parent_first", o.parent_first.to_string());
    }
    files.push(("summary.csv".to_string(), s));

    let mut f = String::from("miner,hashrate,rewarded,reward_share,deviation\n");
    for x in &r.fairness.rows {
        let _ = writeln!(
            f,
            "{},{},{},{},{}",
            x.miner, x.hashrate, x.rewarded, x.reward_share, x.deviation
        );
    }
    files.push(("fairness.csv".to_string(), f));

    let mut g = String::from("t,height,bound_height\n");
    for (t, h) in &r.growth.samples {
        let _ = writeln!(g, "{t},{h},{}", r.growth.bound * t);
    }
    files.push(("growth.csv".to_string(), g));

    if r.consensus.is_some() {
        let mut d = String::from(
            "height,confirmed,rejected,window_size,lambda2,conductance,fallback,degenerate\n",
        );
        for x in &r.decisions {
            let _ = writeln!(
                d,
                "{},{},{},{},{},{},{},{}",
                x.height,
                x.confirmed.len(),
                x.rejected.len(),
                x.window_size,
                x.lambda2,
                x.conductance,
                x.fallback,
                x.degenerate
            );
        }
        files.push(("decisions.csv".to_string(), d));
    }
    if let Some(o) = &r.order {
        let mut text = String::new();
        for id in &o.order.order {
            let _ = writeln!(text, "{id}");
        }
        files.push(("order.txt".to_string(), text));
    }
    if let Some(rows) = &r.exclusion {
        let mut e = String::from(
            "height,honest_confirmed,honest_rejected,attacker_confirmed,attacker_rejected,attacker_late,undecided\n",
        );
        for x in rows {
            let _ = writeln!(
                e,
                "{},{},{},{},{},{},{}",
                x.height,
                x.honest_confirmed,
                x.honest_rejected,
                x.attacker_confirmed,
                x.attacker_rejected,
                x.attacker_late,
                x.undecided
            );
        }
        files.push(("exclusion.csv".to_string(), e));
    }
    files
}

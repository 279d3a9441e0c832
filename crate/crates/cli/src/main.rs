//! `uldag` command line: simulate, theory calculators, clustering, ordering
//! and run-directory analysis.
//!
//! Every flag can also be set through an environment variable with the
//! `ULDAG_` prefix, e.g. `ULDAG_SEED=7` or `ULDAG_SIM_TIME=3600`.
//!
//! Exit codes: 0 ok, 1 config or usage error, 2 runtime error, 3 failed
//! checks under `analyze --assert`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;
use uldag::analysis::{analyze_run_dir, write_run_dir, AnalysisError, Report};
use uldag::consensus::{
    min_confirmations, order_blocks, ConsensusEngine, RiskParams, DEFAULT_THETA,
};
use uldag::dag::{read_dag_file, BlockDag, BlockId, DagError};
use uldag::netsim::{run_sim, ConfigError, Protocol, SimConfig, SimError, TraceLevel};
use uldag::spectral::find_clusters;
use uldag::theory::{
    beta_chain_bound, beta_dag_bound, delay_diameter, feasibility, optimal_point, tps_chain,
    tps_dag, NetParams, TheoryError, TheoryParams,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DagError> for CliError {
    fn from(e: DagError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Config(c) => c.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "uldag",
    version,
    about = "Spectral blockDAG consensus simulator and calculators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation and write a run directory.
    Simulate(SimulateArgs),
    /// Evaluate the delay-diameter, growth and throughput formulas.
    Theory(TheoryArgs),
    /// Split a DAG file into two spectral clusters.
    Cluster(ClusterArgs),
    /// Decide every height of a DAG file and print the total order.
    Order(OrderArgs),
    /// Recompute the reports of a run directory from its trace and ledger.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    Chain,
    Dag,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Chain => Protocol::Chain,
            ProtocolArg::Dag => Protocol::Dag,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TraceArg {
    Full,
    Observer,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// TOML config; flags override its values.
    #[arg(long, env = "ULDAG_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "ULDAG_SEED")]
    seed: Option<u64>,
    /// Run directory to create.
    #[arg(long, env = "ULDAG_OUT")]
    out: PathBuf,
    #[arg(long, env = "ULDAG_PROTOCOL")]
    protocol: Option<ProtocolArg>,
    /// Network block rate λ, blocks per second.
    #[arg(long, env = "ULDAG_LAMBDA")]
    lambda: Option<f64>,
    /// Simulated seconds.
    #[arg(long, env = "ULDAG_SIM_TIME")]
    sim_time: Option<f64>,
    /// Confirmations per decided height.
    #[arg(long, env = "ULDAG_K")]
    k: Option<u32>,
    /// Treat bandwidth as megabits, so transmit time is 8·b/R.
    #[arg(long, env = "ULDAG_STRICT_BITS")]
    strict_bits: Option<bool>,
    #[arg(long, env = "ULDAG_TRACE")]
    trace: Option<TraceArg>,
    /// Attacker hashrate share; enables the withholding attacker on node 0.
    #[arg(long, env = "ULDAG_ATTACKER_Q")]
    attacker_q: Option<f64>,
    #[arg(long, env = "ULDAG_ATTACKER_TARGET", default_value_t = 3)]
    attacker_target: u32,
    #[arg(long, env = "ULDAG_ATTACKER_SPAN", default_value_t = 5)]
    attacker_span: u32,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Table2,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    /// Reference network settings (100 nodes, 8 peers, 30 ms, 4 MB, 10 Mbps).
    #[arg(long, env = "ULDAG_PRESET")]
    preset: Option<Preset>,
    #[arg(long, env = "ULDAG_N", default_value_t = 100)]
    n: u32,
    #[arg(long, env = "ULDAG_PEERS", default_value_t = 8)]
    peers: u32,
    /// Per-hop latency, seconds.
    #[arg(long, env = "ULDAG_TP", default_value_t = 0.03)]
    tp: f64,
    /// Block size, MB.
    #[arg(long, env = "ULDAG_BLOCK_MB", default_value_t = 4.0)]
    block_mb: f64,
    /// Bandwidth, Mbps.
    #[arg(long, env = "ULDAG_BANDWIDTH", default_value_t = 10.0)]
    bandwidth: f64,
    /// Block rate λ; prints the growth and throughput bounds when given.
    #[arg(long, env = "ULDAG_LAMBDA")]
    lambda: Option<f64>,
    /// Delay diameter for the bounds; defaults to the non-bit estimate.
    #[arg(long, env = "ULDAG_D")]
    d: Option<f64>,
    /// Chain height N for the finite-N correction.
    #[arg(long = "height", env = "ULDAG_HEIGHT")]
    height: Option<f64>,
    #[arg(long, env = "ULDAG_Q", default_value_t = 0.0)]
    q: f64,
    #[arg(long, env = "ULDAG_EPSILON", default_value_t = 0.05)]
    epsilon: f64,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long, env = "ULDAG_DAG")]
    dag: PathBuf,
    /// Lowest height of the window; default is the whole DAG.
    #[arg(long, env = "ULDAG_FROM")]
    from: Option<u32>,
    #[arg(long, env = "ULDAG_TO")]
    to: Option<u32>,
}

#[derive(Args, Debug)]
struct OrderArgs {
    #[arg(long, env = "ULDAG_DAG")]
    dag: PathBuf,
    #[arg(long, env = "ULDAG_K", default_value_t = 5)]
    k: u32,
    #[arg(long, env = "ULDAG_THETA", default_value_t = DEFAULT_THETA)]
    theta: f64,
    /// Also write `order.txt` and `rejections.csv` into this directory.
    #[arg(long, env = "ULDAG_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long, env = "ULDAG_RUN")]
    run: PathBuf,
    /// Exit with status 3 if any report check fails.
    #[arg(long = "assert")]
    assert_checks: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Theory(a) => theory(a),
        Command::Cluster(a) => cluster(a),
        Command::Order(a) => order(a),
        Command::Analyze(a) => analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn build_config(a: &SimulateArgs) -> Result<SimConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            SimConfig::from_toml(&text)?
        }
        None => SimConfig::new(Protocol::Dag, 1.0, 3600.0, 0),
    };
    if let Some(p) = a.protocol {
        cfg.protocol = p.into();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(t) = a.sim_time {
        cfg.sim_time = t;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(b) = a.strict_bits {
        cfg.link.strict_bits = b;
    }
    if let Some(t) = a.trace {
        cfg.trace = match t {
            TraceArg::Full => TraceLevel::Full,
            TraceArg::Observer => TraceLevel::Observer,
        };
    }
    if let Some(q) = a.attacker_q {
        cfg = cfg.with_attacker(0, q, a.attacker_target, a.attacker_span);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(r: &Report) {
    println!("delay diameter      {:.4} s", r.delay_diameter);
    println!("observed blocks     {}", r.observed_blocks);
    println!(
        "height              {} ({:.6}/s, bound {:.6}/s)",
        r.growth.final_height, r.growth.rate, r.growth.bound
    );
    println!("fairness deviation  {:.4}", r.fairness.max_deviation());
    println!(
        "tps                 {:.1} (theory {:.1})",
        r.tps_measured, r.tps_theory
    );
    if let Some(c) = &r.consensus {
        println!(
            "consensus           decided {} confirmed {} rejected {} cluster / {} late, {} fallback windows",
            c.decided_height, c.confirmed, c.cluster_rejected, c.late_rejected, c.fallback_windows
        );
    }
    if let Some(rows) = &r.exclusion {
        let leaked: u32 = rows.iter().map(|x| x.attacker_confirmed).sum();
        println!("attacker confirmed  {leaked}");
    }
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let cfg = build_config(&a)?;
    let result = run_sim(&cfg)?;
    let report = write_run_dir(&a.out, &result)?;
    println!("run directory       {}", a.out.display());
    print_report(&report);
    Ok(())
}

fn theory(a: TheoryArgs) -> Result<(), CliError> {
    let net = match a.preset {
        Some(Preset::Table2) => NetParams::table2(false),
        None => NetParams {
            n: a.n,
            pe: None,
            peers: Some(a.peers),
            tp: a.tp,
            block_mb: a.block_mb,
            bandwidth: a.bandwidth,
            strict_bits: false,
        },
    };
    let plain = delay_diameter(&net)?;
    let bits = delay_diameter(&NetParams {
        strict_bits: true,
        ..net
    })?;
    println!("name,value,units");
    println!("Nt,{},", plain.peers);
    println!("h,{},", plain.depth);
    println!("transmit_time_bytes,{},s", net.transmit_time());
    println!("D_bytes,{},s", plain.d);
    println!("D_bits,{},s", bits.d);

    let Some(lambda) = a.lambda else {
        return Ok(());
    };
    let p = TheoryParams {
        n: a.height,
        q: a.q,
        epsilon: a.epsilon,
        block_mb: net.block_mb,
        ..TheoryParams::new(lambda, a.d.unwrap_or(plain.d))
    };
    let opt = optimal_point(&p)?;
    let dag = tps_dag(&p);
    let f = feasibility(&p);
    let beta = beta_chain_bound(&p)?;
    println!("lambda,{lambda},blocks/s");
    println!("D,{},s", p.d);
    println!("beta_chain,{beta},blocks/s");
    println!("beta_chain_per_day,{},blocks/day", beta * 86400.0);
    println!("beta_dag,{},heights/s", beta_dag_bound(&p)?);
    println!("tps_chain,{},tx/s", tps_chain(&p)?);
    println!("lambda_star,{},blocks/s", opt.lambda_star);
    println!("tps_star,{},tx/s", opt.tps_star);
    println!("mu2,{},", opt.mu2);
    println!("tps_dag,{},tx/s", dag.exact);
    println!("tps_dag_approx,{},tx/s", dag.approx);
    println!("attacker_margin,{},", f.attacker_margin);
    println!("rate_margin,{},", f.rate_margin);
    println!("feasible,{},", f.feasible());
    if p.q < 1.0 {
        let k = min_confirmations(&RiskParams {
            lambda,
            d: p.d,
            q: p.q,
            epsilon: p.epsilon,
        })
        .map_err(|e| CliError::Config(e.to_string()))?;
        println!("min_confirmations,{k},blocks");
    }
    Ok(())
}

fn load_dag(path: &Path) -> Result<BlockDag, CliError> {
    read_dag_file(path).map_err(|e| match e {
        DagError::Io(_) => CliError::Config(format!("{}: {e}", path.display())),
        other => CliError::Runtime(format!("{}: {other}", path.display())),
    })
}

fn join(ids: &BTreeSet<BlockId>) -> String {
    ids.iter()
        .map(|id| id.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn cluster(a: ClusterArgs) -> Result<(), CliError> {
    let dag = load_dag(&a.dag)?;
    let lo = a.from.unwrap_or(0);
    let hi = a.to.unwrap_or(dag.max_height());
    let window = dag.blocks_in_heights(lo, hi);
    let r = find_clusters(&dag, &window).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("C1: {}", join(&r.c1));
    println!("C2: {}", join(&r.c2));
    Ok(())
}

fn order(a: OrderArgs) -> Result<(), CliError> {
    if !(a.theta > 0.0) {
        return Err(CliError::Config("theta must be positive".into()));
    }
    let dag = load_dag(&a.dag)?;
    let mut engine = ConsensusEngine::new(a.k, a.theta);
    engine
        .tick(&dag)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let ord = order_blocks(&dag, engine.blue_list());
    for id in &ord.order {
        println!("{id}");
    }
    if let Some(dir) = &a.out {
        let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let text: String = ord.order.iter().map(|id| format!("{id}\n")).collect();
        fs::write(dir.join("order.txt"), text).map_err(io)?;
        let mut csv = String::from("height,block_id,reason\n");
        for (h, id, reason) in engine.blue_list().rejected() {
            csv.push_str(&format!("{h},{id},{reason}\n"));
        }
        fs::write(dir.join("rejections.csv"), csv).map_err(io)?;
    }
    eprintln!(
        "decided height {}, {} ordered, {} omitted",
        engine.blue_list().decided_height(),
        ord.order.len(),
        ord.omitted.len()
    );
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    if !a.run.join("manifest.toml").is_file() {
        return Err(CliError::Config(format!(
            "{}: not a run directory",
            a.run.display()
        )));
    }
    let (report, _) = analyze_run_dir(&a.run)?;
    print_report(&report);
    let failed = report.failed_checks();
    for f in &failed {
        println!("check failed: {f}");
    }
    if a.assert_checks && !failed.is_empty() {
        return Err(CliError::Check(format!("{} check(s) failed", failed.len())));
    }
    Ok(())
}

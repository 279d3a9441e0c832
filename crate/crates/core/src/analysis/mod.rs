//! Reports computed from what an observer saw: its ledger, the order in which
//! blocks reached it, and the run configuration. Consensus is replayed from
//! the arrival order, so the same reports come out of a live simulation and
//! of a run directory read back from disk.

mod rundir;

use std::collections::BTreeMap;

use thiserror::Error;

pub use rundir::{
    analyze_run_dir, read_run_dir, render_metrics, write_run_dir, Manifest, RunFiles,
};

use crate::consensus::{
    order_blocks, BlueList, ConsensusEngine, ConsensusError, OrdList, RejectReason,
};
use crate::dag::{BlockDag, BlockId, DagError, NodeId};
use crate::netsim::{ConfigError, Protocol, SimConfig, SimResult};
use crate::theory::{beta_chain_bound, beta_dag_bound, tps_dag, TheoryError, TheoryParams};

/// Largest tolerated gap between a miner's reward share and hashrate share.
pub const FAIRNESS_TOLERANCE: f64 = 0.05;
pub const GROWTH_WINDOWS: usize = 10;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("replayed metrics differ from {file}")]
    Mismatch { file: String },
}

/// Inputs every report is computed from.
#[derive(Clone, Copy, Debug)]
pub struct RunView<'a> {
    pub config: &'a SimConfig,
    pub dag: &'a BlockDag,
    /// Observer arrival order.
    pub arrivals: &'a [(f64, BlockId)],
}

impl<'a> RunView<'a> {
    pub fn of(result: &'a SimResult) -> Self {
        Self {
            config: &result.config,
            dag: &result.observer_dag,
            arrivals: &result.observer_arrivals,
        }
    }
}

/// Observer state rebuilt from the arrival order.
#[derive(Clone, Debug)]
pub struct Replay {
    pub engine: Option<ConsensusEngine>,
    pub head: Option<BlockId>,
    /// (time, height) each time the observer's height grew: main-chain height
    /// for the chain protocol, DAG height otherwise.
    pub growth: Vec<(f64, u32)>,
}

impl Replay {
    pub fn blue_list(&self) -> Option<&BlueList> {
        self.engine.as_ref().map(ConsensusEngine::blue_list)
    }
}

pub fn replay(view: &RunView) -> Result<Replay, AnalysisError> {
    let cfg = view.config;
    let genesis = view.dag.genesis().ok_or(DagError::EmptyWindow)?;
    let mut dag = BlockDag::with_genesis(view.dag.get(&genesis).expect("genesis present").clone());
    let mut engine =
        (cfg.protocol == Protocol::Dag).then(|| ConsensusEngine::new(cfg.k, cfg.theta));
    let mut head = genesis;
    let mut head_height = 0;
    let mut growth = vec![(0.0, 0)];
    for (t, id) in view.arrivals {
        let block = view.dag.get(id).ok_or(DagError::UnknownBlock(*id))?.clone();
        let stored = dag.add_block(block)?.clone();
        if stored.height > head_height {
            head = stored.id;
            head_height = stored.height;
            growth.push((*t, head_height));
        }
        if let Some(e) = engine.as_mut() {
            if e.on_block(&stored) {
                e.tick(&dag)?;
            }
        }
    }
    Ok(Replay {
        engine,
        head: (cfg.protocol == Protocol::Chain).then_some(head),
        growth,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FairnessRow {
    pub miner: NodeId,
    pub hashrate: f64,
    pub rewarded: u64,
    pub reward_share: f64,
    /// reward_share − hashrate.
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FairnessReport {
    pub rows: Vec<FairnessRow>,
    pub total_rewarded: u64,
}

impl FairnessReport {
    pub fn from_counts(hashrates: &[f64], counts: &BTreeMap<NodeId, u64>) -> Self {
        let total: u64 = counts.values().sum();
        let rows = hashrates
            .iter()
            .enumerate()
            .filter(|(_, h)| **h > 0.0)
            .map(|(m, h)| {
                let rewarded = counts.get(&(m as NodeId)).copied().unwrap_or(0);
                let share = if total == 0 {
                    0.0
                } else {
                    rewarded as f64 / total as f64
                };
                FairnessRow {
                    miner: m as NodeId,
                    hashrate: *h,
                    rewarded,
                    reward_share: share,
                    deviation: share - h,
                }
            })
            .collect();
        Self {
            rows,
            total_rewarded: total,
        }
    }

    /// Rewards summed over several runs with the same hashrates.
    pub fn pooled(reports: &[FairnessReport]) -> Self {
        let mut counts = BTreeMap::new();
        let mut hashrates = Vec::new();
        for r in reports {
            for row in &r.rows {
                *counts.entry(row.miner).or_insert(0) += row.rewarded;
                let m = row.miner as usize;
                if hashrates.len() <= m {
                    hashrates.resize(m + 1, 0.0);
                }
                hashrates[m] = row.hashrate;
            }
        }
        Self::from_counts(&hashrates, &counts)
    }

    pub fn max_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.deviation.abs())
            .fold(0.0, f64::max)
    }

    /// Row of the miner with the largest hashrate (lowest id on ties).
    pub fn largest_miner(&self) -> Option<&FairnessRow> {
        self.rows
            .iter()
            .reduce(|best, r| if r.hashrate > best.hashrate { r } else { best })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrowthReport {
    pub samples: Vec<(f64, u32)>,
    pub final_height: u32,
    /// Heights per second over the whole run.
    pub rate: f64,
    /// Theoretical lower bound, heights per second.
    pub bound: f64,
    /// Relative standard error of `rate`, 1/√height.
    pub rel_se: f64,
    /// Fraction of equal time windows whose growth meets the bound.
    pub window_fraction: f64,
}

impl GrowthReport {
    /// Rate is at least the bound, allowing two standard errors.
    pub fn meets_bound(&self) -> bool {
        self.rate >= self.bound * (1.0 - 2.0 * self.rel_se)
    }
}

fn growth_report(
    view: &RunView,
    samples: Vec<(f64, u32)>,
    d: f64,
) -> Result<GrowthReport, AnalysisError> {
    let cfg = view.config;
    let params = TheoryParams::new(cfg.lambda, d);
    let bound = match cfg.protocol {
        Protocol::Chain => beta_chain_bound(&params)?,
        Protocol::Dag => beta_dag_bound(&params)?,
    };
    let final_height = samples.last().map_or(0, |s| s.1);
    let t = cfg.sim_time;
    let rate = if t > 0.0 {
        final_height as f64 / t
    } else {
        0.0
    };
    let rel_se = if final_height > 0 {
        1.0 / (final_height as f64).sqrt()
    } else {
        1.0
    };

    let height_at = |time: f64| -> u32 {
        let i = samples.partition_point(|s| s.0 <= time);
        if i == 0 {
            0
        } else {
            samples[i - 1].1
        }
    };
    let mut good = 0;
    if t > 0.0 {
        let w = t / GROWTH_WINDOWS as f64;
        for i in 0..GROWTH_WINDOWS {
            let grown = height_at(w * (i + 1) as f64) - height_at(w * i as f64);
            if grown as f64 >= bound * w {
                good += 1;
            }
        }
    }
    Ok(GrowthReport {
        samples,
        final_height,
        rate,
        bound,
        rel_se,
        window_fraction: good as f64 / GROWTH_WINDOWS as f64,
    })
}

/// Confusion counts at one height: ground truth (honest or attacker miner)
/// against the consensus decision.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExclusionRow {
    pub height: u32,
    pub honest_confirmed: u32,
    pub honest_rejected: u32,
    pub attacker_confirmed: u32,
    pub attacker_rejected: u32,
    /// Attacker blocks rejected because they arrived after the decision.
    pub attacker_late: u32,
    pub undecided: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusSummary {
    pub decided_height: u32,
    pub confirmed: usize,
    pub cluster_rejected: usize,
    pub late_rejected: usize,
    pub fallback_windows: usize,
    pub degenerate_windows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderSummary {
    pub order: OrdList,
    pub parent_first: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub protocol: Protocol,
    pub delay_diameter: f64,
    pub observed_blocks: usize,
    pub growth: GrowthReport,
    pub fairness: FairnessReport,
    /// Transactions per second in rewarded blocks.
    pub tps_measured: f64,
    /// Chain: β·bK at the growth bound. DAG: (λD/(1+D))·bK.
    pub tps_theory: f64,
    pub consensus: Option<ConsensusSummary>,
    pub order: Option<OrderSummary>,
    pub exclusion: Option<Vec<ExclusionRow>>,
    pub decisions: Vec<crate::consensus::Decision>,
}

impl Report {
    /// Names of failed checks, empty when everything holds.
    pub fn failed_checks(&self) -> Vec<String> {
        let mut failed = Vec::new();
        if !self.growth.meets_bound() {
            failed.push(format!(
                "growth: rate {:.6}/s below bound {:.6}/s (2 SE)",
                self.growth.rate, self.growth.bound
            ));
        }
        if self.fairness.max_deviation() > FAIRNESS_TOLERANCE {
            failed.push(format!(
                "fairness: max deviation {:.4}",
                self.fairness.max_deviation()
            ));
        }
        if let Some(o) = &self.order {
            if !o.parent_first {
                failed.push("order: a block precedes one of its parents".into());
            }
        }
        if let Some(rows) = &self.exclusion {
            let leaked: u32 = rows.iter().map(|r| r.attacker_confirmed).sum();
            if leaked > 0 {
                failed.push(format!("exclusion: {leaked} attacker blocks confirmed"));
            }
        }
        failed
    }
}

/// True when every block comes after all of its parents that are listed.
pub fn is_parent_first(dag: &BlockDag, order: &[BlockId]) -> bool {
    let pos: BTreeMap<BlockId, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    order.iter().enumerate().all(|(i, id)| {
        dag.get(id)
            .is_some_and(|b| b.parents.iter().all(|p| pos.get(p).is_none_or(|&j| j < i)))
    })
}

pub fn main_chain(dag: &BlockDag, head: BlockId) -> Vec<BlockId> {
    let mut chain = Vec::new();
    let mut cur = Some(head);
    while let Some(id) = cur {
        chain.push(id);
        cur = dag.get(&id).and_then(|b| b.parents.first().copied());
    }
    chain.reverse();
    chain
}

pub fn analyze(view: &RunView) -> Result<Report, AnalysisError> {
    let cfg = view.config;
    let d = cfg.delay_diameter().map_or(0.0, |x| x.d);
    let rep = replay(view)?;

    let rewarded: Vec<BlockId> = match (&rep.head, rep.blue_list()) {
        (Some(head), _) => main_chain(view.dag, *head).into_iter().skip(1).collect(),
        (None, Some(blue)) => blue.confirmed_set().into_iter().collect(),
        (None, None) => Vec::new(),
    };
    let mut counts: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut txs = 0u64;
    for id in &rewarded {
        let b = view.dag.get(id).ok_or(DagError::UnknownBlock(*id))?;
        if let Some(m) = b.miner {
            *counts.entry(m).or_insert(0) += 1;
        }
        txs += b.tx_count;
    }
    let fairness = FairnessReport::from_counts(&cfg.hashrates, &counts);
    let growth = growth_report(view, rep.growth.clone(), d.max(f64::MIN_POSITIVE))?;
    let tps_measured = if cfg.sim_time > 0.0 {
        txs as f64 / cfg.sim_time
    } else {
        0.0
    };
    let theory = TheoryParams {
        block_mb: cfg.link.block_mb,
        k_per_kb: cfg.link.k_per_kb,
        ..TheoryParams::new(cfg.lambda, d.max(f64::MIN_POSITIVE))
    };
    let tps_theory = match cfg.protocol {
        Protocol::Chain => growth.bound * theory.txs_per_block(),
        Protocol::Dag => tps_dag(&theory).exact,
    };

    let (consensus, order, exclusion, decisions) = match &rep.engine {
        Some(engine) => {
            let blue = engine.blue_list();
            let ds = engine.decisions();
            let late = blue
                .rejected()
                .filter(|r| r.2 == RejectReason::Late)
                .count();
            let summary = ConsensusSummary {
                decided_height: blue.decided_height(),
                confirmed: blue.len(),
                cluster_rejected: ds.iter().map(|d| d.rejected.len()).sum(),
                late_rejected: late,
                fallback_windows: ds.iter().filter(|d| d.fallback).count(),
                degenerate_windows: ds.iter().filter(|d| d.degenerate).count(),
            };
            let ord = order_blocks(view.dag, blue);
            let parent_first = is_parent_first(view.dag, &ord.order);
            let exclusion = cfg
                .attacker
                .map(|a| exclusion_rows(view.dag, blue, a.node, a.target_height, a.k_release));
            (
                Some(summary),
                Some(OrderSummary {
                    order: ord,
                    parent_first,
                }),
                exclusion,
                ds.to_vec(),
            )
        }
        None => (None, None, None, Vec::new()),
    };

    Ok(Report {
        protocol: cfg.protocol,
        delay_diameter: d,
        observed_blocks: view.dag.len(),
        growth,
        fairness,
        tps_measured,
        tps_theory,
        consensus,
        order,
        exclusion,
        decisions,
    })
}

/// Confusion counts for heights `target .. target + span`.
pub fn exclusion_rows(
    dag: &BlockDag,
    blue: &BlueList,
    attacker: NodeId,
    target: u32,
    span: u32,
) -> Vec<ExclusionRow> {
    let late: BTreeMap<BlockId, RejectReason> =
        blue.rejected().map(|(_, id, r)| (*id, r)).collect();
    (target..target + span)
        .map(|h| {
            let mut row = ExclusionRow {
                height: h,
                ..Default::default()
            };
            for id in dag.blocks_at_height(h) {
                let is_attacker = dag.get(id).and_then(|b| b.miner) == Some(attacker);
                if h > blue.decided_height() {
                    row.undecided += 1;
                    continue;
                }
                let confirmed = blue.contains(id);
                match (is_attacker, confirmed) {
                    (false, true) => row.honest_confirmed += 1,
                    (false, false) => row.honest_rejected += 1,
                    (true, true) => row.attacker_confirmed += 1,
                    (true, false) => {
                        row.attacker_rejected += 1;
                        if late.get(id) == Some(&RejectReason::Late) {
                            row.attacker_late += 1;
                        }
                    }
                }
            }
            row
        })
        .collect()
}

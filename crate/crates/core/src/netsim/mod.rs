//! Deterministic discrete-event simulation of a proof-of-work P2P network.
//!
//! Blocks propagate with a four-message exchange: the holder announces an
//! `inv`, the receiver answers `get_block`, the holder sends the `block`, and
//! the receiver verifies it and `addblock`s it into its ledger. Mining is a
//! Poisson process per miner, restarted after every local ledger update.

mod config;
mod engine;
mod topology;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use config::{
    AttackerConfig, ConfigError, ConsensusClients, LinkParams, Protocol, SimConfig, TraceLevel,
    DEFAULT_PROFILE,
};
pub use engine::run_sim;
pub use topology::{gen_topology, Topology};

use crate::consensus::{BlueList, ConsensusEngine, ConsensusError, RiskTrial};
use crate::dag::{Block, BlockDag, BlockId, DagError, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Dag(#[from] DagError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    MineBlock,
    Inv,
    GetBlock,
    Block,
    AddBlock,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::MineBlock => "mine_block",
            EventKind::Inv => "inv",
            EventKind::GetBlock => "get_block",
            EventKind::Block => "block",
            EventKind::AddBlock => "addblock",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "mine_block" => EventKind::MineBlock,
            "inv" => EventKind::Inv,
            "get_block" => EventKind::GetBlock,
            "block" => EventKind::Block,
            "addblock" => EventKind::AddBlock,
            other => return Err(format!("unknown event kind {other:?}")),
        })
    }
}

/// One processed event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub block: BlockId,
}

pub const TRACE_HEADER: &str = "t,seq,kind,src,dst,block_id";

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(48 * (records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.t, r.seq, r.kind, r.src, r.dst, r.block
        ));
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, DagError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        _ => {
            return Err(DagError::Malformed {
                line: 1,
                reason: "missing trace header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DagError::Malformed {
            line: i + 1,
            reason,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(malformed(format!("expected 6 fields, got {}", f.len())));
        }
        out.push(TraceRecord {
            t: f[0].parse().map_err(|e| malformed(format!("t: {e}")))?,
            seq: f[1].parse().map_err(|e| malformed(format!("seq: {e}")))?,
            kind: f[2].parse().map_err(malformed)?,
            src: f[3].parse().map_err(|e| malformed(format!("src: {e}")))?,
            dst: f[4].parse().map_err(|e| malformed(format!("dst: {e}")))?,
            block: f[5].parse().map_err(malformed)?,
        });
    }
    Ok(out)
}

/// A block together with its propagation statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockRecord {
    pub block: Block,
    /// Creation time, or release time for withheld blocks.
    pub broadcast_time: f64,
    pub secret: bool,
    /// Latest time any node added the block.
    pub max_arrival: f64,
    /// Number of nodes holding the block at the end.
    pub receivers: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttackRecord {
    /// First honest block at the target height seen by the observer.
    pub victim: Option<BlockId>,
    pub secret: Vec<BlockId>,
    pub release_time: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub config: SimConfig,
    pub topology: Topology,
    /// Every block created, genesis first, in creation order.
    pub blocks: Vec<BlockRecord>,
    pub observer_dag: BlockDag,
    /// Blocks in the order the observer added them.
    pub observer_arrivals: Vec<(f64, BlockId)>,
    /// Longest-chain head at the observer.
    pub observer_head: Option<BlockId>,
    /// Observer consensus state (dag protocol).
    pub consensus: Option<ConsensusEngine>,
    /// Final blue lists of every client when all clients run consensus.
    pub client_blue_lists: Vec<BlueList>,
    pub attack: Option<AttackRecord>,
    /// Blocks created per node.
    pub created_per_miner: Vec<u64>,
    pub trace: Vec<TraceRecord>,
    pub events_processed: u64,
    /// Blocks held by each node at the end.
    pub known_counts: Vec<usize>,
}

impl SimResult {
    /// Longest-chain main chain at the observer, genesis first.
    pub fn main_chain(&self) -> Vec<BlockId> {
        let mut chain = Vec::new();
        let mut cur = self.observer_head;
        while let Some(id) = cur {
            chain.push(id);
            cur = self
                .observer_dag
                .get(&id)
                .and_then(|b| b.parents.first().copied());
        }
        chain.reverse();
        chain
    }

    /// Largest (last arrival − broadcast time) over blocks that reached every node.
    pub fn max_propagation_delay(&self) -> Option<f64> {
        let n = self.config.n;
        self.blocks
            .iter()
            .skip(1)
            .filter(|r| r.receivers == n)
            .map(|r| r.max_arrival - r.broadcast_time)
            .max_by(f64::total_cmp)
    }

    pub fn total_created(&self) -> u64 {
        self.created_per_miner.iter().sum()
    }

    /// Double-spend trial on the observer's ledger.
    pub fn risk_trial(&self) -> Option<RiskTrial> {
        let attack = self.attack.as_ref()?;
        let victim = attack.victim?;
        let conflict = attack
            .secret
            .first()
            .copied()
            .filter(|id| self.observer_dag.contains(id));
        Some(RiskTrial {
            dag: self.observer_dag.clone(),
            victim,
            conflict,
        })
    }
}

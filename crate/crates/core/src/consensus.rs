//! Windowed spectral confirmation, deterministic ordering of confirmed
//! blocks, and the double-spend risk calculus.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::dag::{Block, BlockDag, BlockId, DagError};
use crate::spectral::{find_clusters_with_virtual, SpectralError};

/// Cut-to-volume ratio at or above which a window is considered to have no
/// sparse cut, so every block at the decided height is confirmed.
pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("dag height {have} is below the {need} needed to decide")]
    InsufficientHeight { have: u32, need: u32 },
    #[error("height {0} is not the next undecided height")]
    OutOfOrder(u32),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Dag(#[from] DagError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectReason {
    /// Assigned to the second cluster.
    Cluster,
    /// Arrived after its height was decided.
    Late,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Cluster => "cluster",
            RejectReason::Late => "late",
        })
    }
}

/// Outcome of deciding one height.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub height: u32,
    pub confirmed: BTreeSet<BlockId>,
    pub rejected: BTreeSet<BlockId>,
    pub window_size: usize,
    pub lambda2: f64,
    pub conductance: f64,
    /// No sparse cut was found and all height-N blocks were confirmed.
    pub fallback: bool,
    pub degenerate: bool,
}

/// Confirmed blocks grouped by height. Decisions are final: blocks are only
/// ever added.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlueList {
    confirmed: BTreeMap<u32, BTreeSet<BlockId>>,
    rejected: BTreeMap<u32, BTreeMap<BlockId, RejectReason>>,
    decided_height: u32,
}

impl BlueList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Highest decided height. Height 0 (genesis) is decided from the start.
    pub fn decided_height(&self) -> u32 {
        self.decided_height
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.confirmed.values().any(|s| s.contains(id))
    }

    pub fn confirmed_at(&self, height: u32) -> impl Iterator<Item = &BlockId> {
        self.confirmed.get(&height).into_iter().flatten()
    }

    pub fn confirmed(&self) -> impl Iterator<Item = (u32, &BlockId)> {
        self.confirmed
            .iter()
            .flat_map(|(h, s)| s.iter().map(move |id| (*h, id)))
    }

    pub fn confirmed_set(&self) -> BTreeSet<BlockId> {
        self.confirmed.values().flatten().copied().collect()
    }

    pub fn rejected(&self) -> impl Iterator<Item = (u32, &BlockId, RejectReason)> {
        self.rejected
            .iter()
            .flat_map(|(h, m)| m.iter().map(move |(id, r)| (*h, id, *r)))
    }

    pub fn len(&self) -> usize {
        self.confirmed.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a decision for the next undecided height.
    pub fn apply(&mut self, d: &Decision) -> Result<(), ConsensusError> {
        if d.height != self.decided_height + 1 {
            return Err(ConsensusError::OutOfOrder(d.height));
        }
        self.confirmed
            .entry(d.height)
            .or_default()
            .extend(d.confirmed.iter().copied());
        let rejected = self.rejected.entry(d.height).or_default();
        for id in &d.rejected {
            rejected.insert(*id, RejectReason::Cluster);
        }
        self.decided_height = d.height;
        Ok(())
    }

    /// Rejects a block that showed up at an already decided height.
    pub fn reject_late(&mut self, height: u32, id: BlockId) {
        self.rejected
            .entry(height)
            .or_default()
            .insert(id, RejectReason::Late);
    }
}

/// Decides the blocks at height `n` from the window of heights `n..=n+k+1`.
///
/// A virtual block referencing every block of the window that has no child
/// inside the window is added before clustering. The `C1` members at height
/// `n` are confirmed unless the window has no sparse cut (cut weight at least
/// `theta` times the smaller cluster volume), in which case every height-`n`
/// block is confirmed.
pub fn find_list(dag: &BlockDag, k: u32, n: u32, theta: f64) -> Result<Decision, ConsensusError> {
    let top = n + k + 1;
    if dag.max_height() < top {
        return Err(ConsensusError::InsufficientHeight {
            have: dag.max_height(),
            need: top,
        });
    }
    let window = dag.blocks_in_heights(n, top);
    let tips: BTreeSet<BlockId> = window
        .iter()
        .filter(|id| !dag.children(id).any(|c| window.contains(c)))
        .copied()
        .collect();
    let clusters = find_clusters_with_virtual(dag, &window, &tips)?;

    let at_height: BTreeSet<BlockId> = dag.blocks_at_height(n).copied().collect();
    let conductance = clusters.conductance();
    let fallback = conductance >= theta;
    let (confirmed, rejected) = if fallback {
        (at_height, BTreeSet::new())
    } else {
        at_height
            .into_iter()
            .partition(|id| clusters.c1.contains(id))
    };
    Ok(Decision {
        height: n,
        confirmed,
        rejected,
        window_size: window.len(),
        lambda2: clusters.lambda2,
        conductance,
        fallback,
        degenerate: clusters.degenerate,
    })
}

/// Incremental client state: decides every height as soon as the local DAG
/// is tall enough.
#[derive(Clone, Debug)]
pub struct ConsensusEngine {
    pub k: u32,
    pub theta: f64,
    blue: BlueList,
    decisions: Vec<Decision>,
}

impl ConsensusEngine {
    pub fn new(k: u32, theta: f64) -> Self {
        Self {
            k,
            theta,
            blue: BlueList::new(),
            decisions: Vec::new(),
        }
    }

    pub fn blue_list(&self) -> &BlueList {
        &self.blue
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    /// Must be called for every block added to the local DAG. Blocks landing
    /// on an already decided height are rejected as late.
    pub fn on_block(&mut self, block: &Block) -> bool {
        if !block.is_genesis() && block.height <= self.blue.decided_height() {
            self.blue.reject_late(block.height, block.id);
            return false;
        }
        true
    }

    /// Decides all heights that have become decidable. Returns how many.
    pub fn tick(&mut self, dag: &BlockDag) -> Result<usize, ConsensusError> {
        let mut count = 0;
        loop {
            let n = self.blue.decided_height() + 1;
            if dag.max_height() < n + self.k + 1 {
                return Ok(count);
            }
            let d = find_list(dag, self.k, n, self.theta)?;
            self.blue.apply(&d)?;
            self.decisions.push(d);
            count += 1;
        }
    }
}

/// Deterministic linearization of the confirmed blocks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OrdList {
    pub order: Vec<BlockId>,
    /// Confirmed blocks not reachable from genesis through confirmed blocks.
    pub omitted: Vec<BlockId>,
}

/// Orders genesis and the confirmed blocks. A block becomes ready once all
/// of its confirmed parents are ordered; among ready blocks the lowest
/// digest goes first.
pub fn order_blocks(dag: &BlockDag, blue: &BlueList) -> OrdList {
    let Some(genesis) = dag.genesis() else {
        return OrdList::default();
    };
    let mut included = blue.confirmed_set();
    included.retain(|id| dag.contains(id));
    included.insert(genesis);

    let mut remaining: HashMap<BlockId, usize> = included
        .iter()
        .map(|id| {
            let n = dag.get(id).map_or(0, |b| {
                b.parents.iter().filter(|p| included.contains(p)).count()
            });
            (*id, n)
        })
        .collect();

    let mut ready = BinaryHeap::from([Reverse(genesis)]);
    let mut order = Vec::with_capacity(included.len());
    while let Some(Reverse(id)) = ready.pop() {
        order.push(id);
        for child in dag.children(&id) {
            if let Some(r) = remaining.get_mut(child) {
                *r -= 1;
                if *r == 0 {
                    ready.push(Reverse(*child));
                }
            }
        }
    }
    let emitted: BTreeSet<BlockId> = order.iter().copied().collect();
    let omitted = included.difference(&emitted).copied().collect();
    OrdList { order, omitted }
}

/// Parameters of the confirmation bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskParams {
    pub lambda: f64,
    pub d: f64,
    pub q: f64,
    pub epsilon: f64,
}

impl RiskParams {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        let bad = |m: &str| Err(ConsensusError::InvalidParams(m.into()));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return bad("D must be positive");
        }
        if !(0.0..1.0).contains(&self.q) {
            return bad("q must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        Ok(())
    }

    /// Honest reference rate λ(1−q)D.
    pub fn r1(&self) -> f64 {
        self.lambda * (1.0 - self.q) * self.d
    }

    /// Total reference rate λD.
    pub fn r2(&self) -> f64 {
        self.lambda * self.d
    }

    /// The bound before rounding: 3(λD+1)(1−ε) / (4[λ(1−q)D+1]).
    pub fn raw_confirmations(&self) -> f64 {
        3.0 * (self.r2() + 1.0) * (1.0 - self.epsilon) / (4.0 * (self.r1() + 1.0))
    }
}

/// Smallest number of confirmations for risk tolerance `epsilon`, at least 1.
pub fn min_confirmations(p: &RiskParams) -> Result<u32, ConsensusError> {
    p.validate()?;
    let raw = p.raw_confirmations();
    // guard against 2.0000000000000004 style rounding pushing one step up
    let k = (raw - 1e-12).ceil();
    Ok((k as u32).max(1))
}

/// One simulated double-spend: the victim `B` and the attacker's conflicting
/// block `B′`, if the attacker managed to create one.
#[derive(Clone, Debug)]
pub struct RiskTrial {
    pub dag: BlockDag,
    pub victim: BlockId,
    pub conflict: Option<BlockId>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskEstimate {
    pub risk: f64,
    pub risky: usize,
    pub used: usize,
    /// Trials without a conflicting block.
    pub skipped: usize,
}

/// Whether the attacker's block outweighs the victim after `k` confirmations:
/// Σ_{i=N+1}^{N+k+1} |future^i(B)| < |future^{N+k+1}(B′)|, with N the height of B.
pub fn trial_is_risky(t: &RiskTrial, conflict: &BlockId, k: u32) -> Result<bool, ConsensusError> {
    let n = t
        .dag
        .height_of(&t.victim)
        .ok_or(DagError::UnknownBlock(t.victim))?;
    let top = n + k + 1;
    let honest = t
        .dag
        .future(&t.victim)?
        .into_iter()
        .filter(|id| (n + 1..=top).contains(&t.dag.height_of(id).unwrap_or(0)))
        .count();
    let attacker = t.dag.future_at_height(conflict, top)?.len();
    Ok(honest < attacker)
}

pub fn empirical_risk(trials: &[RiskTrial], k: u32) -> Result<RiskEstimate, ConsensusError> {
    let (mut risky, mut used, mut skipped) = (0, 0, 0);
    for t in trials {
        let Some(conflict) = t.conflict else {
            skipped += 1;
            continue;
        };
        used += 1;
        if trial_is_risky(t, &conflict, k)? {
            risky += 1;
        }
    }
    let risk = if used == 0 {
        0.0
    } else {
        risky as f64 / used as f64
    };
    Ok(RiskEstimate {
        risk,
        risky,
        used,
        skipped,
    })
}

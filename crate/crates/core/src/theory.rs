//! Closed-form throughput and growth-rate calculators.
//!
//! Rates are in blocks per second, times in seconds, block sizes in MB and
//! `k_per_kb` in transactions per KB.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_PEERS: u32 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("N = {0} too small: bound denominator is not positive")]
    NTooSmall(f64),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, TheoryError> {
    Err(TheoryError::InvalidParams(msg.into()))
}

/// Network inputs of the delay-diameter estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub n: u32,
    /// Edge probability; only used when `peers` is not given.
    pub pe: Option<f64>,
    pub peers: Option<u32>,
    /// Per-hop latency, seconds.
    pub tp: f64,
    pub block_mb: f64,
    /// Bandwidth, Mbps.
    pub bandwidth: f64,
    /// Convert MB to megabits before dividing by the bandwidth.
    pub strict_bits: bool,
}

impl NetParams {
    /// The reference network: 100 nodes, 8 peers, 30 ms links, 4 MB blocks,
    /// 10 Mbps.
    pub fn table2(strict_bits: bool) -> Self {
        Self {
            n: 100,
            pe: None,
            peers: Some(DEFAULT_PEERS),
            tp: 0.03,
            block_mb: 4.0,
            bandwidth: 10.0,
            strict_bits,
        }
    }

    /// Serialization time of one block on one link.
    pub fn transmit_time(&self) -> f64 {
        let bits = if self.strict_bits { 8.0 } else { 1.0 };
        self.block_mb * bits / self.bandwidth
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelayDiameter {
    pub peers: u32,
    pub depth: u32,
    pub d: f64,
}

/// Smallest h with Nt^h ≥ n(Nt−1)+1, i.e. the depth of an Nt-ary
/// broadcast tree covering n nodes. Exact integer arithmetic.
pub fn tree_depth(n: u32, peers: u32) -> u32 {
    let target = n as u128 * (peers as u128 - 1) + 1;
    let mut reach = 1u128;
    let mut h = 0;
    while reach < target {
        reach *= peers as u128;
        h += 1;
    }
    h
}

/// D = h(Tp + b/R·Nt).
pub fn delay_diameter(p: &NetParams) -> Result<DelayDiameter, TheoryError> {
    if p.n < 2 {
        return invalid("n must be at least 2");
    }
    if !(p.bandwidth > 0.0) {
        return invalid("bandwidth must be positive");
    }
    if p.tp < 0.0 || p.block_mb < 0.0 {
        return invalid("Tp and block size must be non-negative");
    }
    let peers = match (p.peers, p.pe) {
        (Some(k), _) => k,
        (None, Some(pe)) if (0.0..=1.0).contains(&pe) => ((p.n - 1) as f64 * pe).round() as u32,
        (None, Some(_)) => return invalid("edge probability must be in [0, 1]"),
        (None, None) => DEFAULT_PEERS,
    };
    if peers < 2 {
        return invalid("peer degree must be at least 2");
    }
    let depth = tree_depth(p.n, peers);
    let d = depth as f64 * (p.tp + p.transmit_time() * peers as f64);
    Ok(DelayDiameter { peers, depth, d })
}

/// Protocol parameters of the growth and throughput bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryParams {
    pub lambda: f64,
    pub d: f64,
    pub block_mb: f64,
    pub k_per_kb: f64,
    /// Chain height; `None` for the asymptotic forms.
    pub n: Option<f64>,
    pub delta: f64,
    pub q: f64,
    pub epsilon: f64,
}

impl TheoryParams {
    pub fn new(lambda: f64, d: f64) -> Self {
        Self {
            lambda,
            d,
            block_mb: 4.0,
            k_per_kb: 4.0,
            n: None,
            delta: DEFAULT_DELTA,
            q: 0.0,
            epsilon: 0.05,
        }
    }

    fn check_rates(&self) -> Result<(), TheoryError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return invalid("lambda must be non-negative");
        }
        if !(self.d > 0.0) {
            return invalid("D must be positive");
        }
        Ok(())
    }

    /// (3+δ)/√N, zero when N is infinite.
    pub fn finite_n_term(&self) -> f64 {
        match self.n {
            Some(n) => (3.0 + self.delta) / n.sqrt(),
            None => 0.0,
        }
    }

    fn positive_denominator(&self, den: f64) -> Result<f64, TheoryError> {
        if den > 0.0 {
            Ok(den)
        } else {
            Err(TheoryError::NTooSmall(self.n.unwrap_or(f64::INFINITY)))
        }
    }

    /// Transactions per block.
    pub fn txs_per_block(&self) -> f64 {
        self.block_mb * 1000.0 * self.k_per_kb
    }
}

/// Main-chain growth lower bound λ/(1 + λD − (3+δ)/√N).
pub fn beta_chain_bound(p: &TheoryParams) -> Result<f64, TheoryError> {
    p.check_rates()?;
    let den = p.positive_denominator(1.0 + p.lambda * p.d - p.finite_n_term())?;
    Ok(p.lambda / den)
}

/// DAG height growth lower bound λD/(1 + D − (3+δ)/√N).
pub fn beta_dag_bound(p: &TheoryParams) -> Result<f64, TheoryError> {
    p.check_rates()?;
    let den = p.positive_denominator(1.0 + p.d - p.finite_n_term())?;
    Ok(p.lambda * p.d / den)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimalPoint {
    pub lambda_star: f64,
    pub tps_star: f64,
    /// Multiplier of the λD ≤ 1 constraint at the optimum.
    pub mu2: f64,
    pub mu2_positive: bool,
}

/// λ* = 1/D and the chain throughput bK/(2D) there.
pub fn optimal_point(p: &TheoryParams) -> Result<OptimalPoint, TheoryError> {
    p.check_rates()?;
    let c = p.finite_n_term();
    let mu2 = (1.0 - c) / ((2.0 - c).powi(2) * p.d);
    Ok(OptimalPoint {
        lambda_star: 1.0 / p.d,
        tps_star: p.txs_per_block() / (2.0 * p.d),
        mu2,
        mu2_positive: mu2 > 0.0,
    })
}

/// Chain throughput at rate λ: β·bK with β the growth bound.
pub fn tps_chain(p: &TheoryParams) -> Result<f64, TheoryError> {
    Ok(beta_chain_bound(p)? * p.txs_per_block())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feasibility {
    /// q(1 − (3+δ)/√N + λD) < 1.
    pub attacker_ok: bool,
    pub attacker_margin: f64,
    /// λD ≤ 1.
    pub rate_ok: bool,
    pub rate_margin: f64,
}

impl Feasibility {
    pub fn feasible(&self) -> bool {
        self.attacker_ok && self.rate_ok
    }
}

/// Margins are positive when the constraint holds strictly.
pub fn feasibility(p: &TheoryParams) -> Feasibility {
    let attacker = p.q * (1.0 - p.finite_n_term() + p.lambda * p.d);
    let rate = p.lambda * p.d;
    Feasibility {
        attacker_ok: attacker < 1.0,
        attacker_margin: 1.0 - attacker,
        // tolerate rounding when λ is exactly 1/D
        rate_ok: rate <= 1.0 + 1e-12,
        rate_margin: 1.0 - rate,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DagTps {
    /// (λD/(1+D))·bK.
    pub exact: f64,
    /// λbK.
    pub approx: f64,
}

pub fn tps_dag(p: &TheoryParams) -> DagTps {
    let per_block = p.txs_per_block();
    DagTps {
        exact: p.lambda * p.d / (1.0 + p.d) * per_block,
        approx: p.lambda * per_block,
    }
}

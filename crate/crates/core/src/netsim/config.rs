use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::DEFAULT_THETA;
use crate::dag::NodeId;
use crate::theory::{delay_diameter, DelayDiameter, NetParams, DEFAULT_PEERS};

/// Hashrate shares of the bundled 13-miner profile, largest first.
pub const DEFAULT_PROFILE: [f64; 13] = [
    0.20, 0.16, 0.13, 0.11, 0.09, 0.07, 0.06, 0.05, 0.04, 0.03, 0.03, 0.02, 0.01,
];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Chain,
    Dag,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    /// Every processed event.
    Full,
    /// Block creations and the observer's block additions.
    #[default]
    Observer,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusClients {
    #[default]
    Observer,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    /// One-way latency per message, seconds.
    pub tp: f64,
    pub block_mb: f64,
    /// Mbps.
    pub bandwidth: f64,
    #[serde(default = "default_strict_bits")]
    pub strict_bits: bool,
    /// Transactions per KB.
    #[serde(default = "default_k_per_kb")]
    pub k_per_kb: f64,
}

fn default_strict_bits() -> bool {
    true
}

fn default_k_per_kb() -> f64 {
    4.0
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            tp: 0.03,
            block_mb: 4.0,
            bandwidth: 10.0,
            strict_bits: true,
            k_per_kb: 4.0,
        }
    }
}

impl LinkParams {
    /// Link settings whose delay diameter is exactly 10 s on a 100-node,
    /// 8-peer network: 4·(0.03 + 8·0.30875) = 10.
    pub fn ten_second() -> Self {
        Self {
            tp: 0.03,
            block_mb: 3.0875,
            bandwidth: 10.0,
            strict_bits: false,
            k_per_kb: 4.0,
        }
    }

    /// Seconds to push one block through one link.
    pub fn transmit_time(&self) -> f64 {
        let bits = if self.strict_bits { 8.0 } else { 1.0 };
        self.block_mb * bits / self.bandwidth
    }

    pub fn tx_per_block(&self) -> u64 {
        (self.block_mb * 1000.0 * self.k_per_kb).round() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerConfig {
    pub node: NodeId,
    pub q: f64,
    /// Height of the first secret block.
    pub target_height: u32,
    /// Secret chain length, and the number of heights above the victim the
    /// observer must see before the chain is released.
    pub k_release: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub protocol: Protocol,
    pub n: u32,
    /// Network-wide block creation rate, blocks/s.
    pub lambda: f64,
    pub sim_time: f64,
    /// Hashrate share of nodes 0, 1, ...; nodes past the list do not mine.
    #[serde(default = "default_hashrates")]
    pub hashrates: Vec<f64>,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to the last node.
    #[serde(default)]
    pub observer: Option<NodeId>,
    #[serde(default = "default_peers")]
    pub peers: u32,
    #[serde(default)]
    pub link: LinkParams,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub trace: TraceLevel,
    #[serde(default)]
    pub consensus_clients: ConsensusClients,
    #[serde(default)]
    pub attacker: Option<AttackerConfig>,
}

fn default_hashrates() -> Vec<f64> {
    DEFAULT_PROFILE.to_vec()
}

fn default_k() -> u32 {
    5
}

fn default_peers() -> u32 {
    DEFAULT_PEERS
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}

impl SimConfig {
    /// 100 nodes, the 13-miner profile and the 10 s link settings.
    pub fn new(protocol: Protocol, lambda: f64, sim_time: f64, seed: u64) -> Self {
        Self {
            protocol,
            n: 100,
            lambda,
            sim_time,
            hashrates: default_hashrates(),
            k: default_k(),
            seed,
            observer: None,
            peers: DEFAULT_PEERS,
            link: LinkParams::ten_second(),
            theta: DEFAULT_THETA,
            trace: TraceLevel::Observer,
            consensus_clients: ConsensusClients::Observer,
            attacker: None,
        }
    }

    /// Gives `node` the share `q` and scales every other share by `1 − q`.
    pub fn with_attacker(
        mut self,
        node: NodeId,
        q: f64,
        target_height: u32,
        k_release: u32,
    ) -> Self {
        let idx = node as usize;
        if self.hashrates.len() <= idx {
            self.hashrates.resize(idx + 1, 0.0);
        }
        let others: f64 = self
            .hashrates
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != idx)
            .map(|(_, s)| s)
            .sum();
        for (i, s) in self.hashrates.iter_mut().enumerate() {
            *s = if i == idx {
                q
            } else if others > 0.0 {
                *s / others * (1.0 - q)
            } else {
                0.0
            };
        }
        self.attacker = Some(AttackerConfig {
            node,
            q,
            target_height,
            k_release,
        });
        self
    }

    pub fn observer(&self) -> NodeId {
        self.observer.unwrap_or(self.n.saturating_sub(1))
    }

    pub fn share(&self, node: NodeId) -> f64 {
        self.hashrates.get(node as usize).copied().unwrap_or(0.0)
    }

    pub fn net_params(&self) -> NetParams {
        NetParams {
            n: self.n,
            pe: None,
            peers: Some(self.peers),
            tp: self.link.tp,
            block_mb: self.link.block_mb,
            bandwidth: self.link.bandwidth,
            strict_bits: self.link.strict_bits,
        }
    }

    /// Delay diameter implied by the link settings.
    pub fn delay_diameter(&self) -> Option<DelayDiameter> {
        delay_diameter(&self.net_params()).ok()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return invalid("n must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return invalid("lambda must be a non-negative number");
        }
        if !(self.sim_time >= 0.0 && self.sim_time.is_finite()) {
            return invalid("sim_time must be a non-negative number");
        }
        if self.hashrates.len() > self.n as usize {
            return invalid(format!(
                "{} hashrates for {} nodes",
                self.hashrates.len(),
                self.n
            ));
        }
        if self.hashrates.iter().any(|s| !(*s >= 0.0)) {
            return invalid("hashrates must be non-negative");
        }
        let total: f64 = self.hashrates.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("hashrates sum to {total}, not 1"));
        }
        if self.observer() >= self.n {
            return invalid(format!("observer {} out of range", self.observer()));
        }
        if self.peers == 0 {
            return invalid("peers must be positive");
        }
        let l = &self.link;
        if !(l.tp >= 0.0 && l.block_mb >= 0.0 && l.bandwidth > 0.0 && l.k_per_kb >= 0.0) {
            return invalid("link parameters out of range");
        }
        if !(self.theta > 0.0) {
            return invalid("theta must be positive");
        }
        if let Some(a) = &self.attacker {
            if self.protocol != Protocol::Dag {
                return invalid("the attacker is only supported with the dag protocol");
            }
            if a.node >= self.n {
                return invalid(format!("attacker node {} out of range", a.node));
            }
            if a.node == self.observer() {
                return invalid("attacker cannot be the observer");
            }
            if (self.share(a.node) - a.q).abs() > 1e-9 {
                return invalid(format!(
                    "attacker q = {} but node {} has share {}",
                    a.q,
                    a.node,
                    self.share(a.node)
                ));
            }
            if a.target_height == 0 || a.k_release == 0 {
                return invalid("attacker target_height and k_release must be positive");
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

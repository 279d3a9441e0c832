use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{
    gen_topology, AttackRecord, AttackerConfig, BlockRecord, ConsensusClients, EventKind, Protocol,
    SimConfig, SimError, SimResult, Topology, TraceLevel, TraceRecord,
};
use crate::consensus::ConsensusEngine;
use crate::dag::{Block, BlockDag, BlockId, NodeId};

type Idx = u32;

#[derive(Clone, Copy, Debug)]
enum Ev {
    Mine { node: NodeId, epoch: u64 },
    Inv { src: NodeId, dst: NodeId, blk: Idx },
    GetBlock { src: NodeId, dst: NodeId, blk: Idx },
    Block { src: NodeId, dst: NodeId, blk: Idx },
    Add { node: NodeId, blk: Idx },
}

#[derive(Clone, Copy, Debug)]
struct Event {
    t: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap and we pop the earliest (t, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Honest,
    Secret,
    /// Secret chain complete, waiting for release.
    Idle,
    Released,
}

struct Attack {
    cfg: AttackerConfig,
    phase: Phase,
    secret: Vec<Idx>,
    victim: Option<Idx>,
    release_time: Option<f64>,
}

struct Client {
    dag: BlockDag,
    engine: ConsensusEngine,
}

struct Node {
    peers: Vec<NodeId>,
    known: Vec<bool>,
    requested: Vec<bool>,
    /// Blocks waiting for the keyed parent.
    parked: HashMap<Idx, Vec<Idx>>,
    tips: BTreeSet<BlockId>,
    head: Idx,
    max_height: u32,
    epoch: u64,
    client: Option<Client>,
}

impl Node {
    fn knows(&self, blk: Idx) -> bool {
        self.known.get(blk as usize).copied().unwrap_or(false)
    }

    fn requested(&self, blk: Idx) -> bool {
        self.requested.get(blk as usize).copied().unwrap_or(false)
    }

    fn set(v: &mut Vec<bool>, blk: Idx) {
        let i = blk as usize;
        if v.len() <= i {
            v.resize(i + 1, false);
        }
        v[i] = true;
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    arena: Vec<BlockRecord>,
    ids: HashMap<BlockId, Idx>,
    queue: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    transmit: f64,
    observer: NodeId,
    obs_dag: BlockDag,
    obs_arrivals: Vec<(f64, BlockId)>,
    engine: Option<ConsensusEngine>,
    attack: Option<Attack>,
    created: Vec<u64>,
    trace: Vec<TraceRecord>,
    events: u64,
    nonce: u64,
}

/// Runs one simulation to `cfg.sim_time`.
pub fn run_sim(cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let topology = gen_topology(cfg.n, cfg.peers, &mut rng);
    let genesis = Block::genesis();
    let dag_protocol = cfg.protocol == Protocol::Dag;

    let nodes = topology
        .peers
        .iter()
        .map(|peers| Node {
            peers: peers.clone(),
            known: vec![true],
            requested: vec![true],
            parked: HashMap::new(),
            tips: BTreeSet::from([genesis.id]),
            head: 0,
            max_height: 0,
            epoch: 0,
            client: (dag_protocol && cfg.consensus_clients == ConsensusClients::All).then(|| {
                Client {
                    dag: BlockDag::with_genesis(genesis.clone()),
                    engine: ConsensusEngine::new(cfg.k, cfg.theta),
                }
            }),
        })
        .collect();

    let mut sim = Sim {
        cfg,
        rng,
        nodes,
        arena: vec![BlockRecord {
            block: genesis.clone(),
            broadcast_time: 0.0,
            secret: false,
            max_arrival: 0.0,
            receivers: cfg.n,
        }],
        ids: HashMap::from([(genesis.id, 0)]),
        queue: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        transmit: cfg.link.transmit_time(),
        observer: cfg.observer(),
        obs_dag: BlockDag::with_genesis(genesis),
        obs_arrivals: Vec::new(),
        engine: dag_protocol.then(|| ConsensusEngine::new(cfg.k, cfg.theta)),
        attack: cfg.attacker.map(|a| Attack {
            cfg: a,
            phase: Phase::Honest,
            secret: Vec::new(),
            victim: None,
            release_time: None,
        }),
        created: vec![0; cfg.n as usize],
        trace: Vec::new(),
        events: 0,
        nonce: 0,
    };

    for node in 0..cfg.n {
        sim.schedule_mining(node);
    }
    sim.run()?;
    Ok(sim.finish(topology))
}

impl Sim<'_> {
    fn push(&mut self, t: f64, ev: Ev) {
        assert!(
            t >= self.now,
            "event scheduled in the past: {t} < {}",
            self.now
        );
        self.seq += 1;
        self.queue.push(Event {
            t,
            seq: self.seq,
            ev,
        });
    }

    fn record(&mut self, seq: u64, kind: EventKind, src: NodeId, dst: NodeId, blk: Idx) {
        let keep = match self.cfg.trace {
            TraceLevel::Full => true,
            TraceLevel::Observer => {
                kind == EventKind::MineBlock
                    || (kind == EventKind::AddBlock && dst == self.observer)
            }
        };
        if keep {
            self.trace.push(TraceRecord {
                t: self.now,
                seq,
                kind,
                src,
                dst,
                block: self.arena[blk as usize].block.id,
            });
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(e) = self.queue.peek() {
            if e.t > self.cfg.sim_time {
                break;
            }
            let e = self.queue.pop().expect("peeked");
            debug_assert!(e.t >= self.now);
            self.now = e.t;
            match e.ev {
                Ev::Mine { node, epoch } => {
                    if epoch != self.nodes[node as usize].epoch {
                        continue;
                    }
                    self.events += 1;
                    if let Some(blk) = self.mine(node) {
                        self.record(e.seq, EventKind::MineBlock, node, node, blk);
                    }
                }
                Ev::Inv { src, dst, blk } => {
                    self.events += 1;
                    self.record(e.seq, EventKind::Inv, src, dst, blk);
                    let node = &mut self.nodes[dst as usize];
                    if !node.knows(blk) && !node.requested(blk) {
                        Node::set(&mut node.requested, blk);
                        let t = self.now + self.cfg.link.tp;
                        self.push(
                            t,
                            Ev::GetBlock {
                                src: dst,
                                dst: src,
                                blk,
                            },
                        );
                    }
                }
                Ev::GetBlock { src, dst, blk } => {
                    self.events += 1;
                    self.record(e.seq, EventKind::GetBlock, src, dst, blk);
                    let peers = &self.nodes[dst as usize].peers;
                    // uploads to the out-peers go one after another
                    let slot = peers
                        .iter()
                        .position(|&p| p == src)
                        .unwrap_or(peers.len().saturating_sub(1));
                    let t = self.now + self.cfg.link.tp + (slot + 1) as f64 * self.transmit;
                    self.push(
                        t,
                        Ev::Block {
                            src: dst,
                            dst: src,
                            blk,
                        },
                    );
                }
                Ev::Block { src, dst, blk } => {
                    self.events += 1;
                    self.record(e.seq, EventKind::Block, src, dst, blk);
                    self.receive(dst, blk);
                }
                Ev::Add { node, blk } => {
                    if self.nodes[node as usize].knows(blk) {
                        continue;
                    }
                    self.events += 1;
                    self.record(e.seq, EventKind::AddBlock, node, node, blk);
                    self.add(node, blk)?;
                }
            }
        }
        Ok(())
    }

    fn receive(&mut self, dst: NodeId, blk: Idx) {
        let node = &self.nodes[dst as usize];
        if node.knows(blk) {
            return;
        }
        let missing = self.arena[blk as usize]
            .block
            .parents
            .iter()
            .map(|p| self.ids[p])
            .find(|p| !node.knows(*p));
        match missing {
            Some(parent) => self.nodes[dst as usize]
                .parked
                .entry(parent)
                .or_default()
                .push(blk),
            None => self.push(self.now, Ev::Add { node: dst, blk }),
        }
    }

    fn add(&mut self, node_id: NodeId, blk: Idx) -> Result<(), SimError> {
        let protocol = self.cfg.protocol;
        let released = self
            .attack
            .as_ref()
            .is_some_and(|a| a.phase == Phase::Released);
        let rec = &mut self.arena[blk as usize];
        rec.receivers += 1;
        rec.max_arrival = rec.max_arrival.max(self.now);
        let withheld = rec.secret && !released;
        let block = rec.block.clone();

        let node = &mut self.nodes[node_id as usize];
        Node::set(&mut node.known, blk);
        match protocol {
            Protocol::Dag => {
                for p in &block.parents {
                    node.tips.remove(p);
                }
                node.tips.insert(block.id);
            }
            Protocol::Chain => {
                // first received wins ties
                if block.height > self.arena[node.head as usize].block.height {
                    node.head = blk;
                }
            }
        }
        node.max_height = node.max_height.max(block.height);
        if let Some(client) = node.client.as_mut() {
            let stored = client.dag.add_block(block)?.clone();
            if client.engine.on_block(&stored) {
                client.engine.tick(&client.dag)?;
            }
        }

        if node_id == self.observer {
            self.observe(blk)?;
        }

        if !withheld {
            let t = self.now + self.cfg.link.tp;
            for i in 0..self.nodes[node_id as usize].peers.len() {
                let dst = self.nodes[node_id as usize].peers[i];
                self.push(
                    t,
                    Ev::Inv {
                        src: node_id,
                        dst,
                        blk,
                    },
                );
            }
        }
        if let Some(children) = self.nodes[node_id as usize].parked.remove(&blk) {
            for c in children {
                self.push(
                    self.now,
                    Ev::Block {
                        src: node_id,
                        dst: node_id,
                        blk: c,
                    },
                );
            }
        }
        self.schedule_mining(node_id);
        Ok(())
    }

    fn observe(&mut self, blk: Idx) -> Result<(), SimError> {
        let block = self.arena[blk as usize].block.clone();
        self.obs_arrivals.push((self.now, block.id));
        let stored = self.obs_dag.add_block(block)?.clone();
        if let Some(engine) = self.engine.as_mut() {
            if engine.on_block(&stored) {
                engine.tick(&self.obs_dag)?;
            }
        }
        if let Some(a) = self.attack.as_mut() {
            if a.victim.is_none()
                && stored.height == a.cfg.target_height
                && stored.miner != Some(a.cfg.node)
            {
                a.victim = Some(blk);
            }
        }
        self.maybe_release();
        Ok(())
    }

    /// Releases the secret chain once it is complete and the observer sees
    /// `k_release` heights above the victim.
    fn maybe_release(&mut self) {
        let obs_height = self.obs_dag.max_height();
        let Some(a) = self.attack.as_mut() else {
            return;
        };
        if a.phase != Phase::Idle || obs_height < a.cfg.target_height + a.cfg.k_release {
            return;
        }
        a.phase = Phase::Released;
        a.release_time = Some(self.now);
        let secret = a.secret.clone();
        let attacker = a.cfg.node;
        let t = self.now + self.cfg.link.tp;
        for blk in secret {
            self.arena[blk as usize].broadcast_time = self.now;
            for i in 0..self.nodes[attacker as usize].peers.len() {
                let dst = self.nodes[attacker as usize].peers[i];
                self.push(
                    t,
                    Ev::Inv {
                        src: attacker,
                        dst,
                        blk,
                    },
                );
            }
        }
        self.schedule_mining(attacker);
    }

    fn may_mine(&self, node: NodeId) -> bool {
        !self
            .attack
            .as_ref()
            .is_some_and(|a| a.cfg.node == node && a.phase == Phase::Idle)
    }

    fn schedule_mining(&mut self, node: NodeId) {
        self.nodes[node as usize].epoch += 1;
        if !self.may_mine(node) {
            return;
        }
        let rate = self.cfg.lambda * self.cfg.share(node);
        if rate <= 0.0 {
            return;
        }
        let dt = Exp::new(rate).expect("positive rate").sample(&mut self.rng);
        let epoch = self.nodes[node as usize].epoch;
        self.push(self.now + dt, Ev::Mine { node, epoch });
    }

    fn honest_parents(&self, node: NodeId) -> Vec<BlockId> {
        let n = &self.nodes[node as usize];
        match self.cfg.protocol {
            Protocol::Dag => n.tips.iter().copied().collect(),
            Protocol::Chain => vec![self.arena[n.head as usize].block.id],
        }
    }

    fn mine(&mut self, node: NodeId) -> Option<Idx> {
        let mut secret = false;
        let parents = match self.attack.as_ref().filter(|a| a.cfg.node == node) {
            Some(a) => match a.phase {
                Phase::Honest
                    if self.nodes[node as usize].max_height + 1 >= a.cfg.target_height =>
                {
                    secret = true;
                    let base = a.cfg.target_height - 1;
                    let known = &self.nodes[node as usize];
                    let mut ps: Vec<BlockId> = self
                        .arena
                        .iter()
                        .enumerate()
                        .filter(|(i, r)| r.block.height == base && known.knows(*i as Idx))
                        .map(|(_, r)| r.block.id)
                        .collect();
                    ps.sort_unstable();
                    ps
                }
                Phase::Secret => {
                    secret = true;
                    vec![
                        self.arena[*a.secret.last().expect("secret chain started") as usize]
                            .block
                            .id,
                    ]
                }
                Phase::Idle => return None,
                _ => self.honest_parents(node),
            },
            None => self.honest_parents(node),
        };

        let height = parents
            .iter()
            .map(|p| self.arena[self.ids[p] as usize].block.height)
            .max()
            .unwrap_or(0)
            + 1;
        let tx = self.cfg.link.tx_per_block();
        let mut block = Block::mined(
            node,
            self.now,
            parents.clone(),
            height,
            self.nonce,
            self.cfg.link.block_mb,
            tx,
        );
        self.nonce += 1;
        while self.ids.contains_key(&block.id) {
            block = Block::mined(
                node,
                self.now,
                parents.clone(),
                height,
                self.nonce,
                self.cfg.link.block_mb,
                tx,
            );
            self.nonce += 1;
        }

        let blk = self.arena.len() as Idx;
        self.ids.insert(block.id, blk);
        self.arena.push(BlockRecord {
            block,
            broadcast_time: self.now,
            secret,
            max_arrival: self.now,
            receivers: 0,
        });
        self.created[node as usize] += 1;

        if secret {
            let a = self.attack.as_mut().expect("attacker present");
            a.secret.push(blk);
            a.phase = if a.secret.len() as u32 >= a.cfg.k_release {
                Phase::Idle
            } else {
                Phase::Secret
            };
        }
        self.push(self.now, Ev::Add { node, blk });
        self.maybe_release();
        Some(blk)
    }

    fn finish(self, topology: Topology) -> SimResult {
        let id = |i: Idx| self.arena[i as usize].block.id;
        let observer_head = (self.cfg.protocol == Protocol::Chain)
            .then(|| id(self.nodes[self.observer as usize].head));
        let attack = self.attack.as_ref().map(|a| AttackRecord {
            victim: a.victim.map(id),
            secret: a.secret.iter().map(|&i| id(i)).collect(),
            release_time: a.release_time,
        });
        let known_counts = self
            .nodes
            .iter()
            .map(|n| n.known.iter().filter(|k| **k).count())
            .collect();
        let client_blue_lists = self
            .nodes
            .iter()
            .filter_map(|n| n.client.as_ref().map(|c| c.engine.blue_list().clone()))
            .collect();
        SimResult {
            config: self.cfg.clone(),
            topology,
            blocks: self.arena,
            observer_dag: self.obs_dag,
            observer_arrivals: self.obs_arrivals,
            observer_head,
            consensus: self.engine,
            client_blue_lists,
            attack,
            created_per_miner: self.created,
            trace: self.trace,
            events_processed: self.events,
            known_counts,
        }
    }
}

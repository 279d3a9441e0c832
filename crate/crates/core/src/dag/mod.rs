//! Ledger data model: blocks with multi-parent references, the locally
//! observed DAG, heights and futures.

mod io;
mod laplacian;

pub use io::{parse_dag, read_dag_file, serialize_dag, write_dag_file, DAG_HEADER};
pub use laplacian::{build_laplacian, build_laplacian_with_virtual, LaplacianBundle};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Index of a node (client or miner) in the P2P network.
pub type NodeId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum DagError {
    #[error("block {block} references unknown parent {parent}")]
    UnknownParent { block: BlockId, parent: BlockId },
    #[error("block {0} already present")]
    DuplicateId(BlockId),
    #[error("block {block} lists parent {parent} twice")]
    DuplicateParent { block: BlockId, parent: BlockId },
    #[error("second genesis block {0}")]
    SecondGenesis(BlockId),
    #[error("block {block} created at {time} is not later than parent {parent}")]
    NonMonotoneTime {
        block: BlockId,
        parent: BlockId,
        time: f64,
    },
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("window is empty")]
    EmptyWindow,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

/// 64-bit non-cryptographic content digest identifying a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u64);

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl BlockId {
    /// Digest of the canonical block content. `parents` must already be sorted.
    pub fn digest(
        miner: Option<NodeId>,
        create_time: f64,
        parents: &[BlockId],
        nonce: u64,
    ) -> Self {
        let mut h = FNV_OFFSET;
        let mut feed = |word: u64| {
            for byte in word.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(FNV_PRIME);
            }
        };
        feed(miner.map_or(u64::MAX, u64::from));
        feed(create_time.to_bits());
        feed(parents.len() as u64);
        for p in parents {
            feed(p.0);
        }
        feed(nonce);
        // splitmix64 finalizer so that nearby inputs spread over the whole range
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        BlockId(z ^ (z >> 31))
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for BlockId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 16 {
            return Err(format!("block id `{s}` is not 16 hex digits"));
        }
        u64::from_str_radix(s, 16)
            .map(BlockId)
            .map_err(|e| format!("block id `{s}`: {e}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub id: BlockId,
    /// Sorted by digest; empty only for genesis.
    pub parents: Vec<BlockId>,
    /// `None` for genesis.
    pub miner: Option<NodeId>,
    pub create_time: f64,
    pub height: u32,
    pub size_mb: f64,
    pub tx_count: u64,
}

impl Block {
    pub fn genesis() -> Self {
        Block {
            id: BlockId::digest(None, 0.0, &[], 0),
            parents: Vec::new(),
            miner: None,
            create_time: 0.0,
            height: 0,
            size_mb: 0.0,
            tx_count: 0,
        }
    }

    /// Builds a mined block. Parents are sorted and the digest derived from
    /// the content; `height` is whatever the miner computed from its view.
    pub fn mined(
        miner: NodeId,
        create_time: f64,
        mut parents: Vec<BlockId>,
        height: u32,
        nonce: u64,
        size_mb: f64,
        tx_count: u64,
    ) -> Self {
        parents.sort_unstable();
        let id = BlockId::digest(Some(miner), create_time, &parents, nonce);
        Block {
            id,
            parents,
            miner: Some(miner),
            create_time,
            height,
            size_mb,
            tx_count,
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.parents.is_empty()
    }
}

/// A locally observed blockDAG. All collections are ordered so that equality
/// and iteration do not depend on insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockDag {
    blocks: BTreeMap<BlockId, Block>,
    children: BTreeMap<BlockId, BTreeSet<BlockId>>,
    tips: BTreeSet<BlockId>,
    by_height: BTreeMap<u32, BTreeSet<BlockId>>,
    genesis: Option<BlockId>,
}

impl BlockDag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_genesis(genesis: Block) -> Self {
        let mut dag = Self::new();
        dag.add_block(genesis).expect("empty dag accepts a genesis");
        dag
    }

    /// Inserts `block`, computing its height from its parents. Fails without
    /// modifying the DAG if a parent is missing (the caller must queue the
    /// block until the parent arrives).
    pub fn add_block(&mut self, mut block: Block) -> Result<&Block, DagError> {
        if self.blocks.contains_key(&block.id) {
            return Err(DagError::DuplicateId(block.id));
        }
        if block.parents.is_empty() {
            if self.genesis.is_some() {
                return Err(DagError::SecondGenesis(block.id));
            }
            block.height = 0;
        } else {
            let mut max_height = 0;
            for (i, p) in block.parents.iter().enumerate() {
                if block.parents[..i].contains(p) {
                    return Err(DagError::DuplicateParent {
                        block: block.id,
                        parent: *p,
                    });
                }
                let parent = self.blocks.get(p).ok_or(DagError::UnknownParent {
                    block: block.id,
                    parent: *p,
                })?;
                if parent.create_time >= block.create_time {
                    return Err(DagError::NonMonotoneTime {
                        block: block.id,
                        parent: *p,
                        time: block.create_time,
                    });
                }
                max_height = max_height.max(parent.height);
            }
            block.height = max_height + 1;
        }

        let id = block.id;
        for p in &block.parents {
            self.tips.remove(p);
            self.children.entry(*p).or_default().insert(id);
        }
        if block.parents.is_empty() {
            self.genesis = Some(id);
        }
        self.tips.insert(id);
        self.by_height.entry(block.height).or_default().insert(id);
        Ok(self.blocks.entry(id).or_insert(block))
    }

    pub fn get(&self, id: &BlockId) -> Option<&Block> {
        self.blocks.get(id)
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.blocks.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn genesis(&self) -> Option<BlockId> {
        self.genesis
    }

    /// Blocks in ascending digest order.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    pub fn tips(&self) -> &BTreeSet<BlockId> {
        &self.tips
    }

    pub fn children(&self, id: &BlockId) -> impl Iterator<Item = &BlockId> {
        self.children.get(id).into_iter().flatten()
    }

    pub fn height_of(&self, id: &BlockId) -> Option<u32> {
        self.blocks.get(id).map(|b| b.height)
    }

    pub fn max_height(&self) -> u32 {
        self.by_height.keys().next_back().copied().unwrap_or(0)
    }

    pub fn blocks_at_height(&self, height: u32) -> impl Iterator<Item = &BlockId> {
        self.by_height.get(&height).into_iter().flatten()
    }

    /// Block ids with heights in `lo..=hi`.
    pub fn blocks_in_heights(&self, lo: u32, hi: u32) -> BTreeSet<BlockId> {
        if lo > hi {
            return BTreeSet::new();
        }
        self.by_height
            .range(lo..=hi)
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect()
    }

    /// Child-to-parent reference edges in deterministic order.
    pub fn edges(&self) -> impl Iterator<Item = (BlockId, BlockId)> + '_ {
        self.blocks
            .values()
            .flat_map(|b| b.parents.iter().map(move |p| (b.id, *p)))
    }

    /// Blocks in a parent-before-child order: ascending height, then digest.
    pub fn topological(&self) -> impl Iterator<Item = &Block> {
        self.by_height
            .values()
            .flat_map(|ids| ids.iter())
            .map(|id| &self.blocks[id])
    }

    /// All blocks that reach `id` through child-to-parent references.
    pub fn future(&self, id: &BlockId) -> Result<BTreeSet<BlockId>, DagError> {
        self.future_bounded(id, u32::MAX)
    }

    /// `future^i(B)`: blocks at height `height` that reach `id`.
    pub fn future_at_height(
        &self,
        id: &BlockId,
        height: u32,
    ) -> Result<BTreeSet<BlockId>, DagError> {
        let reach = self.future_bounded(id, height)?;
        Ok(reach
            .into_iter()
            .filter(|b| self.blocks[b].height == height)
            .collect())
    }

    fn future_bounded(&self, id: &BlockId, max_height: u32) -> Result<BTreeSet<BlockId>, DagError> {
        if !self.blocks.contains_key(id) {
            return Err(DagError::UnknownBlock(*id));
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([*id]);
        while let Some(cur) = queue.pop_front() {
            for child in self.children(&cur) {
                // heights strictly increase toward children
                if self.blocks[child].height <= max_height && seen.insert(*child) {
                    queue.push_back(*child);
                }
            }
        }
        Ok(seen)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Block with a hand-picked id; fixtures use readable small digests.
    pub(crate) fn fixture_block(id: u64, parents: &[u64], miner: u32, t: f64) -> Block {
        let mut parents: Vec<BlockId> = parents.iter().map(|p| BlockId(*p)).collect();
        parents.sort_unstable();
        Block {
            id: BlockId(id),
            parents,
            miner: if id == 0 { None } else { Some(miner) },
            create_time: t,
            height: 0,
            size_mb: 1.0,
            tx_count: 10,
        }
    }

    /// Builds a DAG from `(id, parents)` pairs listed parent-first.
    pub(crate) fn fixture_dag(spec: &[(u64, &[u64])]) -> BlockDag {
        let mut dag = BlockDag::new();
        for (i, (id, parents)) in spec.iter().enumerate() {
            dag.add_block(fixture_block(*id, parents, 1, i as f64))
                .unwrap();
        }
        dag
    }

    #[test]
    fn genesis_only() {
        let dag = fixture_dag(&[(0, &[])]);
        assert_eq!(
            dag.tips().iter().copied().collect::<Vec<_>>(),
            vec![BlockId(0)]
        );
        assert_eq!(dag.height_of(&BlockId(0)), Some(0));
        assert_eq!(dag.genesis(), Some(BlockId(0)));
    }

    #[test]
    fn chain_height() {
        let dag = fixture_dag(&[(0, &[]), (1, &[0]), (2, &[1])]);
        assert_eq!(dag.height_of(&BlockId(2)), Some(2));
        assert_eq!(dag.tips().len(), 1);
        assert!(dag.tips().contains(&BlockId(2)));
    }

    #[test]
    fn diamond_height_takes_max_parent() {
        // b at height 1, c at height 2, d references both
        let dag = fixture_dag(&[(0, &[]), (1, &[0]), (2, &[0]), (3, &[2]), (4, &[1, 3])]);
        assert_eq!(dag.height_of(&BlockId(1)), Some(1));
        assert_eq!(dag.height_of(&BlockId(3)), Some(2));
        assert_eq!(dag.height_of(&BlockId(4)), Some(3));
        assert_eq!(
            dag.tips().iter().copied().collect::<Vec<_>>(),
            vec![BlockId(4)]
        );
    }

    #[test]
    fn add_block_errors() {
        let mut dag = fixture_dag(&[(0, &[]), (1, &[0])]);
        assert_eq!(
            dag.add_block(fixture_block(5, &[9], 1, 10.0)).unwrap_err(),
            DagError::UnknownParent {
                block: BlockId(5),
                parent: BlockId(9)
            }
        );
        assert_eq!(
            dag.add_block(fixture_block(1, &[0], 1, 10.0)).unwrap_err(),
            DagError::DuplicateId(BlockId(1))
        );
        assert!(matches!(
            dag.add_block(fixture_block(6, &[], 1, 10.0)),
            Err(DagError::SecondGenesis(_))
        ));
        assert!(matches!(
            dag.add_block(fixture_block(7, &[1], 1, 0.5)),
            Err(DagError::NonMonotoneTime { .. })
        ));
        let mut dup = fixture_block(8, &[0], 1, 10.0);
        dup.parents = vec![BlockId(0), BlockId(0)];
        assert!(matches!(
            dag.add_block(dup),
            Err(DagError::DuplicateParent { .. })
        ));
        // failed inserts leave the dag untouched
        assert_eq!(dag.len(), 2);
    }

    #[test]
    fn future_at_height_examples() {
        let dag = fixture_dag(&[(0, &[]), (1, &[0]), (2, &[1])]);
        assert!(dag.future_at_height(&BlockId(1), 1).unwrap().is_empty());
        assert_eq!(
            dag.future_at_height(&BlockId(0), 2).unwrap(),
            BTreeSet::from([BlockId(2)])
        );
        assert_eq!(
            dag.future_at_height(&BlockId(42), 2).unwrap_err(),
            DagError::UnknownBlock(BlockId(42))
        );
    }

    #[test]
    fn secret_chain_absent_from_future() {
        // honest 1..3 build on genesis; secret 15 -> 16 -> 17 forks from genesis
        // and is never referenced by honest blocks
        let dag = fixture_dag(&[
            (0, &[]),
            (1, &[0]),
            (2, &[0]),
            (3, &[0]),
            (15, &[0]),
            (4, &[1, 2, 3]),
            (16, &[15]),
            (5, &[4]),
            (17, &[16]),
        ]);
        let fut = dag.future(&BlockId(3)).unwrap();
        assert_eq!(fut, BTreeSet::from([BlockId(4), BlockId(5)]));
        for secret in [15, 16, 17] {
            assert!(!fut.contains(&BlockId(secret)));
        }
    }

    #[test]
    fn digest_is_deterministic_and_content_sensitive() {
        let a = BlockId::digest(Some(1), 1.5, &[BlockId(3)], 7);
        assert_eq!(a, BlockId::digest(Some(1), 1.5, &[BlockId(3)], 7));
        assert_ne!(a, BlockId::digest(Some(1), 1.5, &[BlockId(3)], 8));
        assert_ne!(a, BlockId::digest(Some(2), 1.5, &[BlockId(3)], 7));
        assert_ne!(a, BlockId::digest(Some(1), 1.5000001, &[BlockId(3)], 7));
    }

    #[test]
    fn block_id_text_form() {
        let id = BlockId(0xabc);
        assert_eq!(id.to_string(), "0000000000000abc");
        assert_eq!("0000000000000abc".parse::<BlockId>().unwrap(), id);
        assert!("abc".parse::<BlockId>().is_err());
        assert!("zzzzzzzzzzzzzzzz".parse::<BlockId>().is_err());
    }
}

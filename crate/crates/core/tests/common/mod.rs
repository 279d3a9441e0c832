#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uldag::dag::{Block, BlockDag, BlockId};

/// Block with a hand-picked id. Fixture time is the position in the spec list.
pub fn block(id: u64, parents: &[u64], t: f64) -> Block {
    let mut ps: Vec<BlockId> = parents.iter().map(|p| BlockId(*p)).collect();
    ps.sort_unstable();
    Block {
        id: BlockId(id),
        parents: ps,
        miner: if parents.is_empty() {
            None
        } else {
            Some((id % 7) as u32)
        },
        create_time: t,
        height: 0,
        size_mb: 1.0,
        tx_count: 10,
    }
}

pub fn dag_from(spec: &[(u64, &[u64])]) -> BlockDag {
    let mut dag = BlockDag::new();
    for (i, (id, ps)) in spec.iter().enumerate() {
        dag.add_block(block(*id, ps, i as f64)).unwrap();
    }
    dag
}

pub fn ids(v: impl IntoIterator<Item = u64>) -> BTreeSet<BlockId> {
    v.into_iter().map(BlockId).collect()
}

/// Honest lattice with three blocks per height over heights 1..=4 and a
/// five-block secret chain forking from genesis; the attacker's tip is
/// referenced by the final honest block.
pub fn fig1_spec() -> Vec<(u64, Vec<u64>)> {
    vec![
        (0, vec![]),
        (1, vec![0]),
        (2, vec![0]),
        (3, vec![0]),
        (15, vec![0]),
        (4, vec![1, 2, 3]),
        (5, vec![1, 2, 3]),
        (6, vec![1, 2, 3]),
        (16, vec![15]),
        (7, vec![4, 5, 6]),
        (8, vec![4, 5, 6]),
        (9, vec![4, 5, 6]),
        (17, vec![16]),
        (10, vec![7, 8, 9]),
        (11, vec![7, 8, 9]),
        (12, vec![7, 8, 9]),
        (18, vec![17]),
        (13, vec![10, 11, 12]),
        (14, vec![13, 18]),
        (19, vec![18]),
    ]
}

pub fn fig1() -> BlockDag {
    let spec = fig1_spec();
    let refs: Vec<(u64, &[u64])> = spec.iter().map(|(i, p)| (*i, p.as_slice())).collect();
    dag_from(&refs)
}

/// The fig1 ledger grown by one more height so two heights can be decided
/// with four confirmations.
pub fn fig3() -> BlockDag {
    let mut spec = fig1_spec();
    spec.push((20, vec![14, 19]));
    let refs: Vec<(u64, &[u64])> = spec.iter().map(|(i, p)| (*i, p.as_slice())).collect();
    dag_from(&refs)
}

/// Random DAG where every block references 1..=3 earlier blocks, drawn with
/// a bias toward recent ones.
pub fn random_dag(blocks: usize, seed: u64) -> BlockDag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dag = BlockDag::new();
    let mut order: Vec<u64> = Vec::new();
    for i in 0..blocks {
        let id = rng.random_range(1..u64::MAX / 2);
        let parents: Vec<u64> = if order.is_empty() {
            vec![]
        } else {
            let k = rng.random_range(1..=3.min(order.len()));
            let lo = order.len().saturating_sub(6);
            let mut ps: Vec<u64> = (0..k)
                .map(|_| order[rng.random_range(lo..order.len())])
                .collect();
            ps.sort_unstable();
            ps.dedup();
            ps
        };
        dag.add_block(block(id, &parents, i as f64)).unwrap();
        order.push(id);
    }
    dag
}

/// Applies `f` to every id, keeping the structure.
pub fn relabel(dag: &BlockDag, f: impl Fn(BlockId) -> BlockId) -> BlockDag {
    let mut out = BlockDag::new();
    for b in dag.topological() {
        let mut parents: Vec<BlockId> = b.parents.iter().map(|p| f(*p)).collect();
        parents.sort_unstable();
        out.add_block(Block {
            id: f(b.id),
            parents,
            height: 0,
            ..b.clone()
        })
        .unwrap();
    }
    out
}

/// Random strictly increasing id map over the blocks of `dag`.
pub fn monotone_relabeling(dag: &BlockDag, rng: &mut impl Rng) -> BTreeMap<BlockId, BlockId> {
    let mut next = 0u64;
    dag.blocks()
        .map(|b| {
            next += rng.random_range(1..1_000_000);
            (b.id, BlockId(next))
        })
        .collect()
}

/// Cyclic Jacobi eigenvalue iteration for a dense symmetric matrix.
/// Returns eigenvalues ascending with matching unit eigenvectors (columns).
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(i == j)).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| m[x][x].total_cmp(&m[y][y]));
    let values = idx.iter().map(|&i| m[i][i]).collect();
    let vectors = idx
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// Undirected adjacency of a window, rows in ascending id order.
pub fn window_adjacency(dag: &BlockDag, window: &BTreeSet<BlockId>) -> Vec<Vec<f64>> {
    let index: Vec<BlockId> = window.iter().copied().collect();
    let n = index.len();
    let mut a = vec![vec![0.0; n]; n];
    for (i, id) in index.iter().enumerate() {
        for p in &dag.get(id).unwrap().parents {
            if let Ok(j) = index.binary_search(p) {
                a[i][j] = 1.0;
                a[j][i] = 1.0;
            }
        }
    }
    a
}

pub fn laplacian_of(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| {
            let d: f64 = a[i].iter().sum();
            (0..n)
                .map(|j| if i == j { d - a[i][j] } else { -a[i][j] })
                .collect()
        })
        .collect()
}

/// cut(S, S̄)·(1/|S| + 1/|S̄|).
pub fn ratio_cut(a: &[Vec<f64>], in_s: &[bool]) -> f64 {
    let n = a.len();
    let s = in_s.iter().filter(|x| **x).count();
    if s == 0 || s == n {
        return f64::INFINITY;
    }
    let mut cut = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            if in_s[i] != in_s[j] {
                cut += a[i][j];
            }
        }
    }
    cut * (1.0 / s as f64 + 1.0 / (n - s) as f64)
}

/// Exhaustive minimum ratio cut. Vertex 0 is kept in S to skip mirror images.
pub fn brute_min_ratio_cut(a: &[Vec<f64>]) -> (f64, Vec<bool>) {
    let n = a.len();
    assert!(n <= 22, "exhaustive search is exponential");
    let mut best = (f64::INFINITY, vec![false; n]);
    for mask in 0u32..(1 << (n - 1)) {
        let in_s: Vec<bool> = (0..n)
            .map(|i| i == 0 || (mask >> (i - 1)) & 1 == 1)
            .collect();
        let r = ratio_cut(a, &in_s);
        if r < best.0 - 1e-12 {
            best = (r, in_s);
        }
    }
    best
}

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;

use crate::dag::NodeId;

/// Directed out-peer lists. Blocks are announced to out-peers only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    pub peers: Vec<Vec<NodeId>>,
}

impl Topology {
    pub fn n(&self) -> usize {
        self.peers.len()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n()];
        for list in &self.peers {
            for &p in list {
                deg[p as usize] += 1;
            }
        }
        deg
    }

    fn reaches_all(&self, reverse: bool) -> bool {
        let n = self.n();
        if n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for (u, list) in self.peers.iter().enumerate() {
            for &v in list {
                if reverse {
                    adj[v as usize].push(u);
                } else {
                    adj[u].push(v as usize);
                }
            }
        }
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0]);
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == n
    }

    pub fn strongly_connected(&self) -> bool {
        self.reaches_all(false) && self.reaches_all(true)
    }

    /// Longest shortest-path hop count between any two nodes.
    pub fn hop_diameter(&self) -> usize {
        let n = self.n();
        let mut worst = 0;
        for s in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.peers[u] {
                    let v = v as usize;
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            worst = worst.max(dist.into_iter().max().unwrap_or(0));
        }
        worst
    }
}

/// Each node draws `peers` distinct random out-peers (all other nodes when
/// `n ≤ peers`). Draws are repeated until every node can reach every other.
pub fn gen_topology<R: Rng>(n: u32, peers: u32, rng: &mut R) -> Topology {
    let n_us = n as usize;
    loop {
        let lists = (0..n_us)
            .map(|i| {
                if n_us <= peers as usize + 1 {
                    (0..n).filter(|&j| j as usize != i).collect()
                } else {
                    // draw from the n−1 other nodes, skipping self
                    sample(rng, n_us - 1, peers as usize)
                        .into_iter()
                        .map(|j| if j >= i { j as NodeId + 1 } else { j as NodeId })
                        .collect()
                }
            })
            .collect();
        let topo = Topology { peers: lists };
        if topo.strongly_connected() {
            return topo;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_network_is_complete() {
        let t = gen_topology(9, 8, &mut ChaCha8Rng::seed_from_u64(1));
        for (i, list) in t.peers.iter().enumerate() {
            assert_eq!(list.len(), 8);
            assert!(!list.contains(&(i as NodeId)));
        }
    }

    #[test]
    fn deterministic_distinct_no_self_loops() {
        let a = gen_topology(100, 8, &mut ChaCha8Rng::seed_from_u64(5));
        let b = gen_topology(100, 8, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        for (i, list) in a.peers.iter().enumerate() {
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 8);
            assert!(!list.contains(&(i as NodeId)));
        }
        assert!(a.strongly_connected());
        assert_eq!(a.in_degrees().iter().sum::<usize>(), 800);
    }

    #[test]
    fn single_node() {
        let t = gen_topology(1, 8, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.peers, vec![Vec::<NodeId>::new()]);
        assert_eq!(t.hop_diameter(), 0);
    }
}

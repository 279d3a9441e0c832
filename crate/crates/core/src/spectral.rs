//! Two-way spectral partitioning of a symmetrized DAG window.
//!
//! The cluster indicator is the Fiedler vector: the unit eigenvector of the
//! graph Laplacian for its second-smallest eigenvalue, orthogonal to the
//! all-ones vector. Vertices with a nonnegative entry form `C1`, the rest `C2`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DVector, SymmetricEigen};
use thiserror::Error;

use crate::dag::{
    build_laplacian, build_laplacian_with_virtual, BlockDag, BlockId, DagError, LaplacianBundle,
};

/// Two eigenvalues closer than this are treated as one repeated eigenvalue.
pub const DEGENERACY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 10_000;
const RESIDUAL_TOL: f64 = 1e-8;
const ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("need at least 2 vertices, got {0}")]
    DimensionTooSmall(usize),
    #[error("eigensolver did not converge")]
    NonConvergence,
    #[error(transparent)]
    Dag(#[from] DagError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fiedler {
    pub lambda2: f64,
    /// Unit norm, orthogonal to the all-ones vector, oriented so that the
    /// anchor row is nonnegative.
    pub vector: DVector<f64>,
    /// The second-smallest eigenvalue is repeated and a canonical vector of
    /// its eigenspace was chosen.
    pub degenerate: bool,
    /// Connected components of the symmetrized graph.
    pub components: usize,
}

/// Fiedler eigenpair, oriented so that row 0 (lowest digest) is nonnegative.
pub fn fiedler(bundle: &LaplacianBundle) -> Result<Fiedler, SpectralError> {
    fiedler_anchored(bundle, 0)
}

/// Fiedler eigenpair, oriented so that `anchor`'s cluster gets the
/// nonnegative sign.
pub fn fiedler_anchored(bundle: &LaplacianBundle, anchor: usize) -> Result<Fiedler, SpectralError> {
    let n = bundle.dim();
    if n < 2 {
        return Err(SpectralError::DimensionTooSmall(n));
    }
    assert!(anchor < n, "anchor row {anchor} out of range");
    let labels = component_labels(bundle);
    let components = labels.iter().max().map_or(0, |m| m + 1);

    let (mut x, degenerate) = if components > 1 {
        // zero eigenvalue is repeated: use the vector that is constant on the
        // anchor's component and constant (negative) on everything else
        (component_indicator(&labels, labels[anchor]), false)
    } else {
        connected_fiedler(bundle)?
    };

    // Entries that are zero up to solver noise would otherwise flip sides
    // between runs and relabelings.
    let zero = ZERO_TOL * x.amax();
    x.apply(|v| {
        if v.abs() <= zero {
            *v = 0.0;
        }
    });
    let pivot = if x[anchor] != 0.0 {
        x[anchor]
    } else {
        x.iter().copied().find(|v| *v != 0.0).unwrap_or(0.0)
    };
    if pivot < 0.0 {
        x.neg_mut();
    }
    let lx = &bundle.laplacian * &x;
    let lambda2 = x.dot(&lx).max(0.0);
    if (lx - &x * lambda2).norm() > RESIDUAL_TOL {
        return Err(SpectralError::NonConvergence);
    }
    Ok(Fiedler {
        lambda2,
        vector: x,
        degenerate,
        components,
    })
}

fn connected_fiedler(bundle: &LaplacianBundle) -> Result<(DVector<f64>, bool), SpectralError> {
    let n = bundle.dim();
    let eig = SymmetricEigen::try_new(bundle.laplacian.clone(), f64::EPSILON, MAX_SWEEPS)
        .ok_or(SpectralError::NonConvergence)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambda2 = eig.eigenvalues[order[1]];

    let space: Vec<usize> = order[1..]
        .iter()
        .copied()
        .take_while(|&i| (eig.eigenvalues[i] - lambda2).abs() <= DEGENERACY_TOL)
        .collect();
    let degenerate = space.len() > 1;

    let mut x = if degenerate {
        // Canonical member of the eigenspace: the projection of the first
        // basis vector (in digest order) that is not orthogonal to it. This
        // does not depend on which basis the solver returned.
        let mut chosen = None;
        for row in 0..n {
            let mut v = DVector::zeros(n);
            for &k in &space {
                let u = eig.eigenvectors.column(k);
                v += u * u[row];
            }
            if v.norm() > 1e-6 {
                chosen = Some(v);
                break;
            }
        }
        chosen.ok_or(SpectralError::NonConvergence)?
    } else {
        eig.eigenvectors.column(order[1]).into_owned()
    };

    let mean = x.mean();
    x.add_scalar_mut(-mean);
    let norm = x.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(SpectralError::NonConvergence);
    }
    x /= norm;
    Ok((x, degenerate))
}

fn component_labels(bundle: &LaplacianBundle) -> Vec<usize> {
    let adj = bundle.neighbors();
    let n = adj.len();
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if labels[v] == usize::MAX {
                    labels[v] = next;
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    labels
}

fn component_indicator(labels: &[usize], keep: usize) -> DVector<f64> {
    let n = labels.len() as f64;
    let s = labels.iter().filter(|&&l| l == keep).count() as f64;
    let pos = ((n - s) / (n * s)).sqrt();
    let neg = -(s / (n * (n - s))).sqrt();
    DVector::from_iterator(
        labels.len(),
        labels.iter().map(|&l| if l == keep { pos } else { neg }),
    )
}

/// Output of one FIND-CLUSTERS run over a window.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub lambda2: f64,
    /// Matrix row order; the virtual block, when present, is the extra last
    /// entry of `x`.
    pub index: Vec<BlockId>,
    pub x: DVector<f64>,
    pub c1: BTreeSet<BlockId>,
    pub c2: BTreeSet<BlockId>,
    /// Block whose cluster was oriented to `C1`.
    pub anchor: BlockId,
    pub degenerate: bool,
    pub components: usize,
    /// Number of undirected edges crossing the partition (virtual block included).
    pub cut_weight: f64,
    pub volume_c1: f64,
    pub volume_c2: f64,
}

impl ClusterResult {
    pub fn value_of(&self, id: &BlockId) -> Option<f64> {
        self.index.binary_search(id).ok().map(|i| self.x[i])
    }

    /// Cut weight relative to the smaller cluster volume. Large values mean
    /// the split did not find a sparse cut.
    pub fn conductance(&self) -> f64 {
        let smaller = self.volume_c1.min(self.volume_c2);
        if smaller == 0.0 {
            if self.cut_weight == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.cut_weight / smaller
        }
    }
}

/// Partitions the window spanned by `window` into two clusters.
pub fn find_clusters(
    dag: &BlockDag,
    window: &BTreeSet<BlockId>,
) -> Result<ClusterResult, SpectralError> {
    let bundle = build_laplacian(dag, window)?;
    cluster_bundle(dag, bundle)
}

/// As [`find_clusters`], with an extra virtual vertex referencing
/// `virtual_refs`. The virtual vertex shapes the eigenvector but is not
/// reported in either cluster.
pub fn find_clusters_with_virtual(
    dag: &BlockDag,
    window: &BTreeSet<BlockId>,
    virtual_refs: &BTreeSet<BlockId>,
) -> Result<ClusterResult, SpectralError> {
    let bundle = build_laplacian_with_virtual(dag, window, virtual_refs)?;
    cluster_bundle(dag, bundle)
}

fn cluster_bundle(dag: &BlockDag, bundle: LaplacianBundle) -> Result<ClusterResult, SpectralError> {
    let anchor = anchor_row(dag, &bundle);
    let f = fiedler_anchored(&bundle, anchor)?;

    let mut c1 = BTreeSet::new();
    let mut c2 = BTreeSet::new();
    for (i, id) in bundle.index.iter().enumerate() {
        if f.vector[i] >= 0.0 {
            c1.insert(*id);
        } else {
            c2.insert(*id);
        }
    }

    let n = bundle.dim();
    let side = |i: usize| f.vector[i] >= 0.0;
    let mut cut_weight = 0.0;
    let (mut volume_c1, mut volume_c2) = (0.0, 0.0);
    for i in 0..n {
        if side(i) {
            volume_c1 += bundle.degree_of(i);
        } else {
            volume_c2 += bundle.degree_of(i);
        }
        for j in (i + 1)..n {
            if side(i) != side(j) {
                cut_weight += bundle.adjacency[(i, j)];
            }
        }
    }

    Ok(ClusterResult {
        lambda2: f.lambda2,
        anchor: bundle.index[anchor],
        index: bundle.index,
        x: f.vector,
        c1,
        c2,
        degenerate: f.degenerate,
        components: f.components,
        cut_weight,
        volume_c1,
        volume_c2,
    })
}

/// The window base: lowest height, then highest degree, then lowest digest.
fn anchor_row(dag: &BlockDag, bundle: &LaplacianBundle) -> usize {
    let mut best = 0;
    let mut best_key = (u32::MAX, f64::NEG_INFINITY);
    for (i, id) in bundle.index.iter().enumerate() {
        let height = dag.height_of(id).unwrap_or(u32::MAX);
        let degree = bundle.degree_of(i);
        // index is digest-ascending, so strict comparison keeps the lowest digest on ties
        if height < best_key.0 || (height == best_key.0 && degree > best_key.1) {
            best = i;
            best_key = (height, degree);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::tests::fixture_dag;
    use nalgebra::DMatrix;

    fn bundle_from_adjacency(a: &[&[f64]]) -> LaplacianBundle {
        let n = a.len();
        let adj = DMatrix::from_fn(n, n, |i, j| a[i][j]);
        let deg =
            DMatrix::from_diagonal(&DVector::from_iterator(n, (0..n).map(|i| adj.row(i).sum())));
        LaplacianBundle {
            index: (0..n as u64).map(BlockId).collect(),
            has_virtual: false,
            adjacency_directed: adj.clone(),
            laplacian: &deg - &adj,
            adjacency: adj,
            degree: deg,
        }
    }

    #[test]
    fn two_isolated_vertices() {
        let b = bundle_from_adjacency(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let f = fiedler(&b).unwrap();
        assert_eq!(f.lambda2, 0.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((f.vector[0] - h).abs() < 1e-12);
        assert!((f.vector[1] + h).abs() < 1e-12);
    }

    #[test]
    fn path_p4_sign_pattern() {
        let b = bundle_from_adjacency(&[
            &[0.0, 1.0, 0.0, 0.0],
            &[1.0, 0.0, 1.0, 0.0],
            &[0.0, 1.0, 0.0, 1.0],
            &[0.0, 0.0, 1.0, 0.0],
        ]);
        let f = fiedler(&b).unwrap();
        assert!((f.lambda2 - (2.0 - 2f64.sqrt())).abs() < 1e-10);
        let signs: Vec<bool> = f.vector.iter().map(|v| *v >= 0.0).collect();
        assert_eq!(signs, vec![true, true, false, false]);
    }

    #[test]
    fn complete_k3_is_degenerate() {
        let b = bundle_from_adjacency(&[&[0.0, 1.0, 1.0], &[1.0, 0.0, 1.0], &[1.0, 1.0, 0.0]]);
        let f = fiedler(&b).unwrap();
        assert!((f.lambda2 - 3.0).abs() < 1e-10);
        assert!(f.degenerate);
        assert!(f.vector.sum().abs() < 1e-10);
        // canonical choice: projection of e_0 onto the eigenspace
        let expected = DVector::from_vec(vec![2.0, -1.0, -1.0]).normalize();
        assert!((&f.vector - expected).norm() < 1e-10);
    }

    #[test]
    fn too_small() {
        let b = bundle_from_adjacency(&[&[0.0]]);
        assert_eq!(
            fiedler(&b).unwrap_err(),
            SpectralError::DimensionTooSmall(1)
        );
    }

    #[test]
    fn two_disjoint_chains_are_the_clusters() {
        let dag = fixture_dag(&[
            (0, &[]),
            (1, &[0]),
            (2, &[1]),
            (3, &[2]),
            (4, &[0]),
            (5, &[4]),
            (6, &[5]),
        ]);
        // drop genesis so that the two chains are disconnected
        let window: BTreeSet<BlockId> = (1..=6).map(BlockId).collect();
        let r = find_clusters(&dag, &window).unwrap();
        let a: BTreeSet<BlockId> = (1..=3).map(BlockId).collect();
        let b: BTreeSet<BlockId> = (4..=6).map(BlockId).collect();
        assert_eq!(r.components, 2);
        assert_eq!(r.lambda2, 0.0);
        assert!((r.c1 == a && r.c2 == b) || (r.c1 == b && r.c2 == a));
        assert_eq!(r.cut_weight, 0.0);
    }

    #[test]
    fn virtual_vertex_excluded_from_output() {
        let dag = fixture_dag(&[(0, &[]), (1, &[0]), (2, &[0]), (3, &[1, 2])]);
        let window: BTreeSet<BlockId> = (0..=3).map(BlockId).collect();
        let r = find_clusters_with_virtual(&dag, &window, &BTreeSet::from([BlockId(3)])).unwrap();
        assert_eq!(r.x.len(), 5);
        assert_eq!(r.c1.len() + r.c2.len(), 4);
    }

    #[test]
    fn anchor_prefers_best_connected_base_block() {
        // 1 and 9 both at height 1; 9 is a lone fork, 1 is built upon twice
        let dag = fixture_dag(&[
            (0, &[]),
            (1, &[0]),
            (9, &[0]),
            (2, &[1]),
            (3, &[1]),
            (4, &[2, 3]),
        ]);
        let window: BTreeSet<BlockId> = [1, 9, 2, 3, 4].into_iter().map(BlockId).collect();
        let r = find_clusters(&dag, &window).unwrap();
        assert_eq!(r.anchor, BlockId(1));
        assert!(r.c1.contains(&BlockId(1)));
        assert!(r.c2.contains(&BlockId(9)));
    }
}

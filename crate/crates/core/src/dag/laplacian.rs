use std::collections::BTreeSet;

use nalgebra::DMatrix;

use super::{BlockDag, BlockId, DagError};

/// Matrices of a DAG window: directed adjacency, its symmetrization, the
/// degree matrix and the graph Laplacian.
///
/// Rows follow `index` (ascending digest). When `has_virtual` is set an extra
/// last row stands for a virtual block referencing the window's tips.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianBundle {
    pub index: Vec<BlockId>,
    pub has_virtual: bool,
    pub adjacency_directed: DMatrix<f64>,
    pub adjacency: DMatrix<f64>,
    pub degree: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
}

impl LaplacianBundle {
    /// Matrix dimension, including the virtual row if present.
    pub fn dim(&self) -> usize {
        self.laplacian.nrows()
    }

    pub fn position(&self, id: &BlockId) -> Option<usize> {
        self.index.binary_search(id).ok()
    }

    /// Row of the virtual block, if any.
    pub fn virtual_row(&self) -> Option<usize> {
        self.has_virtual.then_some(self.index.len())
    }

    /// Undirected neighbor lists derived from `adjacency`.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).filter(|&j| self.adjacency[(i, j)] != 0.0).collect())
            .collect()
    }

    pub fn degree_of(&self, row: usize) -> f64 {
        self.degree[(row, row)]
    }
}

pub fn build_laplacian(
    dag: &BlockDag,
    window: &BTreeSet<BlockId>,
) -> Result<LaplacianBundle, DagError> {
    build(dag, window, None)
}

/// Like [`build_laplacian`] but appends a virtual vertex with references to
/// `virtual_refs` (which must be window members).
pub fn build_laplacian_with_virtual(
    dag: &BlockDag,
    window: &BTreeSet<BlockId>,
    virtual_refs: &BTreeSet<BlockId>,
) -> Result<LaplacianBundle, DagError> {
    build(dag, window, Some(virtual_refs))
}

fn build(
    dag: &BlockDag,
    window: &BTreeSet<BlockId>,
    virtual_refs: Option<&BTreeSet<BlockId>>,
) -> Result<LaplacianBundle, DagError> {
    if window.is_empty() {
        return Err(DagError::EmptyWindow);
    }
    let index: Vec<BlockId> = window.iter().copied().collect();
    let real = index.len();
    let n = real + usize::from(virtual_refs.is_some());
    let pos = |id: &BlockId| index.binary_search(id).ok();

    let mut ad = DMatrix::<f64>::zeros(n, n);
    for (i, id) in index.iter().enumerate() {
        let block = dag.get(id).ok_or(DagError::UnknownBlock(*id))?;
        // only references internal to the window count
        for p in &block.parents {
            if let Some(j) = pos(p) {
                ad[(i, j)] = 1.0;
            }
        }
    }
    if let Some(refs) = virtual_refs {
        for r in refs {
            let j = pos(r).ok_or(DagError::UnknownBlock(*r))?;
            ad[(real, j)] = 1.0;
        }
    }

    let a = &ad + ad.transpose();
    // an acyclic graph never has references in both directions
    debug_assert!(a.iter().all(|&v| v == 0.0 || v == 1.0));
    let degrees: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let deg = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(degrees));
    let l = &deg - &a;

    Ok(LaplacianBundle {
        index,
        has_virtual: virtual_refs.is_some(),
        adjacency_directed: ad,
        adjacency: a,
        degree: deg,
        laplacian: l,
    })
}

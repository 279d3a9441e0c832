//! Spectral-clustering consensus for block DAGs, with an event-driven network
//! simulator and analysis reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod consensus;
pub mod dag;
pub mod netsim;
pub mod spectral;
pub mod theory;

pub use dag::{Block, BlockDag, BlockId, DagError, NodeId};

//! Threshold-pruned graph neural networks for D2D power allocation.

// negated float comparisons are used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod netsim;
pub mod nn;
pub mod quad;
pub mod special;
pub mod stochgeo;

//! Structured pruning through zero-invariant groups.
//!
//! The pipeline has three stages:
//!
//! 1. [`partition`] traces a [`graph::ComputationGraph`] and splits its
//!    trainable parameters into zero-invariant groups (ZIGs): minimal sets of
//!    parameters that, once all zero, make the corresponding channels
//!    contribute nothing downstream.
//! 2. [`dhspg`] trains the network with the dual half-space projected
//!    gradient method, which drives exactly `K` groups to zero.
//! 3. [`compression`] removes the zero groups and the parameters that consume
//!    them, producing a smaller graph with the same outputs.
//!
//! [`autograd`] provides forward/backward passes over the graph operators and
//! [`harness`] ties the stages together for experiments and the CLI.

pub mod autograd;
pub mod compression;
pub mod dhspg;
pub mod graph;
pub mod harness;
pub mod partition;

pub use graph::{
    build_graph, count_flops_params, export_dot, infer_shapes, ComputationGraph, GraphDocument,
    GraphError, TensorShape, VertexId, VertexKind,
};

pub use partition::{partition, PartitionError, PartitionResult, ZeroInvariantGroup};

//! Shared fixtures for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zigprune_core::dhspg::{group_specs, GroupSpec};
use zigprune_core::graph::{chain_net, init_parameters, ParamLayout};
use zigprune_core::{partition, ComputationGraph};

/// A chain graph with about `vertices` vertices.
pub fn chain_with_vertices(vertices: usize) -> ComputationGraph {
    chain_net((vertices.saturating_sub(1) / 3).max(1))
}

/// Initialized graph, its groups and a flat parameter/gradient pair.
pub struct OptimizerFixture {
    pub graph: ComputationGraph,
    pub groups: Vec<GroupSpec>,
    pub x: Vec<f64>,
    pub grad: Vec<f64>,
}

pub fn optimizer_fixture(mut graph: ComputationGraph, seed: u64) -> OptimizerFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_parameters(&mut graph, &mut rng);
    let layout = ParamLayout::new(&graph);
    let part = partition(&graph).expect("builder graphs partition");
    let groups = group_specs(&part, &layout);
    let x = layout.gather(&graph);
    let grad = (0..x.len())
        .map(|_| rng.random_range(-1e-2..1e-2))
        .collect();
    OptimizerFixture {
        graph,
        groups,
        x,
        grad,
    }
}

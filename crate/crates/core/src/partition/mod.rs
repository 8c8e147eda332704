//! Automated zero-invariant group partition.
//!
//! The trace graph is cut into dependency components:
//!
//! 1. [`seed_components`]: connected components over accessory,
//!    shape-dependent joint and unknown vertices.
//! 2. [`grow_components`]: each component absorbs the stems feeding it;
//!    growth stops at stems and shape-independent joints. Stems absorbed by
//!    nobody become singleton components.
//! 3. [`merge_components`]: components sharing a vertex are merged.
//! 4. [`form_zigs`]: output channel `j` of every stem in a component forms
//!    group `j`, joined by the per-channel parameters of every batch norm whose
//!    channel traces back to it (possibly through a concatenation).
//!
//! Components whose channels reach a graph output, or that touch an unknown
//! operator, do not form groups.

mod components;
mod origins;
mod zigs;

use std::ops::Range;

use rustc_hash::FxHashMap as HashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{infer_shapes, ComputationGraph, GraphError, TensorRole, VertexId};

pub use components::{grow_components, merge_components, seed_components};
pub use origins::{ChannelOrigins, GroupRef};
pub use zigs::form_zigs;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("stems in component {component} have different widths: {widths:?}")]
    InconsistentStemWidths {
        component: usize,
        widths: Vec<usize>,
    },
    #[error("operands of joint {0} carry channels from different groups")]
    UnsupportedCoupling(VertexId),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyComponent {
    /// Members in topological order.
    pub vertex_ids: Vec<VertexId>,
    pub stem_ids: Vec<VertexId>,
    /// Non-stem members (accessories, shape-dependent joints, unknowns).
    pub accessory_ids: Vec<VertexId>,
    pub contains_unknown: bool,
    pub adjacent_to_output: bool,
}

/// A contiguous run of rows (weights) or elements (bias, gamma, beta) of one
/// tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub vertex: VertexId,
    pub role: TensorRole,
    pub range: Range<usize>,
}

impl ParamSlice {
    pub fn new(vertex: VertexId, role: TensorRole, range: Range<usize>) -> Self {
        Self {
            vertex,
            role,
            range,
        }
    }

    /// Number of scalars covered.
    pub fn numel(&self, g: &ComputationGraph) -> usize {
        let unit = g.params(self.vertex).map_or(1, |p| p.unit(self.role));
        self.range.len() * unit
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroInvariantGroup {
    pub component: usize,
    pub index: usize,
    pub slices: Vec<ParamSlice>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    OutputAdjacent,
    ContainsUnknown,
    /// Channels originate at a graph input rather than at a stem.
    InputRooted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedComponent {
    pub component: usize,
    pub reason: ExclusionReason,
    pub slices: Vec<ParamSlice>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub components: Vec<DependencyComponent>,
    pub zigs: Vec<ZeroInvariantGroup>,
    pub excluded: Vec<ExcludedComponent>,
}

impl PartitionResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("partition serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Component owning each stem.
    pub fn stem_components(&self) -> HashMap<VertexId, usize> {
        self.components
            .iter()
            .enumerate()
            .flat_map(|(c, comp)| comp.stem_ids.iter().map(move |&s| (s, c)))
            .collect()
    }

    /// Indices into `zigs` of the groups of one component.
    pub fn groups_of(&self, component: usize) -> Vec<usize> {
        self.zigs
            .iter()
            .enumerate()
            .filter(|(_, z)| z.component == component)
            .map(|(i, _)| i)
            .collect()
    }

    /// Components that own at least one group, in order.
    pub fn prunable_components(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.zigs.iter().map(|z| z.component).collect();
        out.dedup();
        out
    }

    pub fn is_excluded(&self, component: usize) -> bool {
        self.excluded.iter().any(|e| e.component == component)
    }

    /// Component label per vertex, for DOT coloring.
    pub fn coloring(&self) -> HashMap<VertexId, usize> {
        self.components
            .iter()
            .enumerate()
            .flat_map(|(c, comp)| comp.vertex_ids.iter().map(move |&v| (v, c)))
            .collect()
    }

    /// For every group, the component index (dense, aligned with `zigs`).
    pub fn group_components(&self) -> Vec<usize> {
        self.zigs.iter().map(|z| z.component).collect()
    }
}

/// Runs the full partition on a graph (shapes are inferred if missing).
pub fn partition(g: &ComputationGraph) -> Result<PartitionResult, PartitionError> {
    let shaped;
    let g = if g.shapes_inferred() {
        g
    } else {
        shaped = infer_shapes(g)?;
        &shaped
    };
    let seeds = seed_components(g);
    let grown = grow_components(g, seeds);
    let merged = merge_components(g, grown);
    form_zigs(g, merged)
}

#[cfg(test)]
mod tests;

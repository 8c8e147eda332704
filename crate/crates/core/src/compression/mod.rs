//! Construction of the compressed graph from zeroed groups.
//!
//! A zero group contributes an all-zero channel wherever its channels flow:
//! the stem rows and biases are zero, and so are the batch-norm affine terms
//! on every channel traced back to it. Removing those channels, and the
//! matching input slices of every consumer stem, therefore leaves eval-mode
//! outputs unchanged.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustc_hash::FxHashMap as HashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{forward, AutogradError, Mode, Tensor};
use crate::graph::{
    build_graph, count_flops_params, infer_shapes, ComputationGraph, GraphError, Matrix,
    ParameterSet, Port, VertexId, VertexKind,
};
use crate::partition::{ChannelOrigins, PartitionError, PartitionResult};

#[derive(Debug, Error)]
pub enum CompressionError {
    #[error("every group of component {component} is zero; refusing to remove the whole layer")]
    AllGroupsZeroInComponent { component: usize },
    #[error("compressed graph is inconsistent: {0}")]
    ShapeMismatchAfterPrune(String),
    #[error("mask has {found} entries for {expected} groups")]
    MaskLength { expected: usize, found: usize },
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
}

/// Which groups are zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMask {
    /// Aligned with `PartitionResult::zigs`.
    pub zero: Vec<bool>,
    /// Surviving group indices per prunable component.
    pub survivors: BTreeMap<usize, Vec<usize>>,
}

impl PruneMask {
    /// Builds a mask from zeroed indices into `partition.zigs`.
    pub fn from_zeroed(
        partition: &PartitionResult,
        zeroed: &[usize],
    ) -> Result<Self, CompressionError> {
        let mut zero = vec![false; partition.zigs.len()];
        for &z in zeroed {
            zero[z] = true;
        }
        Self::from_flags(partition, zero)
    }

    pub fn from_flags(
        partition: &PartitionResult,
        zero: Vec<bool>,
    ) -> Result<Self, CompressionError> {
        if zero.len() != partition.zigs.len() {
            return Err(CompressionError::MaskLength {
                expected: partition.zigs.len(),
                found: zero.len(),
            });
        }
        let mut survivors: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for c in partition.prunable_components() {
            survivors.insert(c, Vec::new());
        }
        for (z, &is_zero) in partition.zigs.iter().zip(&zero) {
            if !is_zero {
                survivors.entry(z.component).or_default().push(z.index);
            }
        }
        if let Some((&component, _)) = survivors.iter().find(|(_, s)| s.is_empty()) {
            return Err(CompressionError::AllGroupsZeroInComponent { component });
        }
        Ok(Self { zero, survivors })
    }

    pub fn is_empty(&self) -> bool {
        !self.zero.iter().any(|&z| z)
    }

    pub fn zeroed(&self) -> Vec<usize> {
        (0..self.zero.len()).filter(|&i| self.zero[i]).collect()
    }

    fn is_zero(&self, partition: &PartitionResult, component: usize, group: usize) -> bool {
        // zigs are sorted by (component, index)
        partition
            .zigs
            .binary_search_by(|z| (z.component, z.index).cmp(&(component, group)))
            .map(|i| self.zero[i])
            .unwrap_or(false)
    }
}

fn slice_is_zero(g: &ComputationGraph, s: &crate::partition::ParamSlice) -> bool {
    let Some(p) = g.params(s.vertex) else {
        return true;
    };
    let unit = p.unit(s.role);
    p.tensor(s.role)
        .map(|t| {
            t[s.range.start * unit..s.range.end * unit]
                .iter()
                .all(|&v| v == 0.0)
        })
        .unwrap_or(true)
}

/// Flags every group whose slices are all exactly zero.
pub fn detect_zero_groups(
    g: &ComputationGraph,
    partition: &PartitionResult,
) -> Result<PruneMask, CompressionError> {
    let zero = partition
        .zigs
        .iter()
        .map(|z| z.slices.iter().all(|s| slice_is_zero(g, s)))
        .collect();
    PruneMask::from_flags(partition, zero)
}

/// Sets every slice of the masked groups to zero.
pub fn zero_masked_groups(g: &mut ComputationGraph, partition: &PartitionResult, mask: &PruneMask) {
    for (z, &is_zero) in partition.zigs.iter().zip(&mask.zero) {
        if !is_zero {
            continue;
        }
        for s in &z.slices {
            if let Some(p) = g.params_mut(s.vertex) {
                let unit = p.unit(s.role);
                if let Some(t) = p.tensor_mut(s.role) {
                    t[s.range.start * unit..s.range.end * unit].fill(0.0);
                }
            }
        }
    }
}

/// Surviving channel (or flattened feature) indices of every port, in
/// increasing order of the original index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelMap {
    per_vertex: HashMap<VertexId, Vec<usize>>,
    inputs: Vec<Vec<usize>>,
}

impl ChannelMap {
    pub fn port(&self, p: Port) -> &[usize] {
        match p {
            Port::Input(slot) => &self.inputs[slot],
            Port::Vertex(id) => &self.per_vertex[&id],
        }
    }

    pub fn vertex(&self, id: VertexId) -> &[usize] {
        &self.per_vertex[&id]
    }
}

/// A channel survives unless it traces back to a zeroed group. Through a
/// concatenation the surviving indices shift by the operand offsets; through
/// a flatten each surviving channel expands to its block of `H·W` features.
pub fn build_channel_maps(
    g: &ComputationGraph,
    partition: &PartitionResult,
    mask: &PruneMask,
) -> Result<ChannelMap, CompressionError> {
    let shaped;
    let g = if g.shapes_inferred() {
        g
    } else {
        shaped = infer_shapes(g)?;
        &shaped
    };
    let origins = ChannelOrigins::compute(g, &partition.stem_components())?;
    let keep = |o: &[Option<crate::partition::GroupRef>]| -> Vec<usize> {
        o.iter()
            .enumerate()
            .filter(|(_, r)| match r {
                Some(r) => !mask.is_zero(partition, r.component as usize, r.group as usize),
                None => true,
            })
            .map(|(i, _)| i)
            .collect()
    };
    let per_vertex = g
        .topo_order()
        .map(|v| (v.id, keep(origins.vertex(v.id))))
        .collect();
    let inputs = (0..g.inputs().len())
        .map(|s| keep(origins.port(Port::Input(s))))
        .collect();
    Ok(ChannelMap { per_vertex, inputs })
}

fn take_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * m.cols);
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    Matrix::from_vec(rows.len(), m.cols, data)
}

/// Keeps the column blocks `block` wide whose block index is listed.
fn take_col_blocks(m: &Matrix, blocks: &[usize], block: usize) -> Matrix {
    let cols = blocks.len() * block;
    let mut data = Vec::with_capacity(m.rows * cols);
    for r in 0..m.rows {
        let row = m.row(r);
        for &b in blocks {
            data.extend_from_slice(&row[b * block..(b + 1) * block]);
        }
    }
    Matrix::from_vec(m.rows, cols, data)
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Removes zeroed structures and the consumer slices affiliated with them.
pub fn prune(
    g: &ComputationGraph,
    maps: &ChannelMap,
) -> Result<ComputationGraph, CompressionError> {
    let mut doc = g.to_document();
    for v in &mut doc.vertices {
        let preds = g.predecessors(v.id);
        let out = maps.vertex(v.id);
        let input = maps.port(preds[0]);
        match (&mut v.kind, v.params.as_mut()) {
            (
                VertexKind::Conv2d {
                    kernel,
                    in_channels,
                    out_channels,
                    ..
                },
                Some(ParameterSet::Stem { weight, bias }),
            ) => {
                let w = take_rows(weight, out);
                *weight = take_col_blocks(&w, input, *kernel * *kernel);
                if let Some(b) = bias.as_mut() {
                    *b = pick(b, out);
                }
                *in_channels = input.len();
                *out_channels = out.len();
            }
            (
                VertexKind::Linear {
                    in_features,
                    out_features,
                    ..
                },
                Some(ParameterSet::Stem { weight, bias }),
            ) => {
                let w = take_rows(weight, out);
                *weight = take_col_blocks(&w, input, 1);
                if let Some(b) = bias.as_mut() {
                    *b = pick(b, out);
                }
                *in_features = input.len();
                *out_features = out.len();
            }
            (
                VertexKind::BatchNorm { channels },
                Some(ParameterSet::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                }),
            ) => {
                for t in [gamma, beta, running_mean, running_var] {
                    *t = pick(t, out);
                }
                *channels = out.len();
            }
            _ => {}
        }
        v.out_shape = None;
    }
    let pruned =
        build_graph(doc).map_err(|e| CompressionError::ShapeMismatchAfterPrune(e.to_string()))?;
    let shaped = infer_shapes(&pruned)
        .map_err(|e| CompressionError::ShapeMismatchAfterPrune(e.to_string()))?;
    for v in shaped.vertices() {
        let got = shaped.shape(v.id)?.channels();
        if got != maps.vertex(v.id).len() {
            return Err(CompressionError::ShapeMismatchAfterPrune(format!(
                "vertex {} has {got} channels, map keeps {}",
                v.id,
                maps.vertex(v.id).len()
            )));
        }
    }
    Ok(if g.shapes_inferred() { shaped } else { pruned })
}

/// Removed groups and cost before and after compression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    /// Zeroed group indices per component.
    pub removed_groups: BTreeMap<usize, Vec<usize>>,
    pub flops_before: u64,
    pub flops_after: u64,
    pub params_before: u64,
    pub params_after: u64,
}

impl CompressionReport {
    pub fn flops_ratio(&self) -> f64 {
        self.flops_after as f64 / self.flops_before as f64
    }

    pub fn params_ratio(&self) -> f64 {
        self.params_after as f64 / self.params_before as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Detects zero groups in `g` and builds the compressed graph.
pub fn compress(
    g: &ComputationGraph,
    partition: &PartitionResult,
) -> Result<(ComputationGraph, CompressionReport), CompressionError> {
    let mask = detect_zero_groups(g, partition)?;
    compress_with(g, partition, &mask)
}

pub fn compress_with(
    g: &ComputationGraph,
    partition: &PartitionResult,
    mask: &PruneMask,
) -> Result<(ComputationGraph, CompressionReport), CompressionError> {
    let maps = build_channel_maps(g, partition, mask)?;
    let out = prune(g, &maps)?;
    let before = count_flops_params(g)?;
    let after = count_flops_params(&out)?;
    let mut removed_groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (z, &is_zero) in partition.zigs.iter().zip(&mask.zero) {
        if is_zero {
            removed_groups.entry(z.component).or_default().push(z.index);
        }
    }
    Ok((
        out,
        CompressionReport {
            removed_groups,
            flops_before: before.flops,
            flops_after: after.flops,
            params_before: before.params,
            params_after: after.params,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub trials: usize,
    pub batch: usize,
    pub tolerance: f64,
    pub max_abs_diff: f64,
    pub passed: bool,
}

impl EquivalenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Maximum absolute eval-mode output difference over `trials` batches of
/// standard-normal inputs.
pub fn verify_equivalence<R: Rng + ?Sized>(
    full: &ComputationGraph,
    compressed: &ComputationGraph,
    trials: usize,
    batch: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<EquivalenceReport, CompressionError> {
    let mut max_abs_diff: f64 = 0.0;
    for _ in 0..trials {
        let inputs: Vec<Tensor> = full
            .inputs()
            .iter()
            .map(|s| {
                let shape = s.with_batch(batch);
                let data = (0..shape.numel())
                    .map(|_| StandardNormal.sample(&mut *rng))
                    .collect();
                Tensor::new(shape, data)
            })
            .collect::<Result<_, _>>()?;
        let a = forward(full, &inputs, Mode::Eval)?;
        let b = forward(compressed, &inputs, Mode::Eval)?;
        for (x, y) in a.outputs().into_iter().zip(b.outputs()) {
            let d = x.max_abs_diff(y).unwrap_or(f64::INFINITY);
            max_abs_diff = max_abs_diff.max(d);
        }
    }
    Ok(EquivalenceReport {
        trials,
        batch,
        tolerance,
        max_abs_diff,
        passed: max_abs_diff < tolerance,
    })
}

#[cfg(test)]
mod tests;

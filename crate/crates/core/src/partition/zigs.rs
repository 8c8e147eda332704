use std::collections::BTreeMap;

use rustc_hash::FxHashMap as HashMap;

use super::{
    ChannelOrigins, DependencyComponent, ExcludedComponent, ExclusionReason, ParamSlice,
    PartitionError, PartitionResult, ZeroInvariantGroup,
};
use crate::graph::{ComputationGraph, Port, TensorRole, VertexKind};

/// Forms the zero-invariant groups of merged components.
///
/// Group `j` of a component holds filter row `j` and bias element `j` of
/// every stem in it, plus `gamma[c]`/`beta[c]` of every batch norm whose
/// channel `c` originates from output channel `j` of those stems. A batch norm
/// behind a concatenation therefore splits across the groups of several
/// components.
pub fn form_zigs(
    g: &ComputationGraph,
    mut components: Vec<DependencyComponent>,
) -> Result<PartitionResult, PartitionError> {
    let mut stem_component = HashMap::default();
    let mut widths = Vec::with_capacity(components.len());
    for (c, comp) in components.iter().enumerate() {
        let ws: Vec<usize> = comp
            .stem_ids
            .iter()
            .map(|&s| g.vertex(s).kind.stem_width().expect("stem"))
            .collect();
        if ws.windows(2).any(|w| w[0] != w[1]) {
            return Err(PartitionError::InconsistentStemWidths {
                component: c,
                widths: ws,
            });
        }
        widths.push(ws.first().copied());
        for &s in &comp.stem_ids {
            stem_component.insert(s, c);
        }
    }

    let origins = ChannelOrigins::compute(g, &stem_component)?;

    // Channels reaching an output or an unknown operator taint their
    // producing component.
    for v in g.topo_order() {
        let output = v.kind == VertexKind::Output;
        let unknown = matches!(v.kind, VertexKind::Unknown { .. });
        if !(output || unknown) {
            continue;
        }
        for &p in g.predecessors(v.id) {
            for r in origins.port(p).iter().flatten() {
                let comp = &mut components[r.component as usize];
                comp.adjacent_to_output |= output;
                comp.contains_unknown |= unknown;
            }
        }
    }

    let mut reasons: BTreeMap<usize, ExclusionReason> = BTreeMap::new();
    for (c, comp) in components.iter().enumerate() {
        if comp.contains_unknown {
            reasons.insert(c, ExclusionReason::ContainsUnknown);
        } else if comp.adjacent_to_output {
            reasons.insert(c, ExclusionReason::OutputAdjacent);
        }
    }

    // Groups of component `c` are `groups[base[c]..base[c] + width]`, in
    // component order; excluded components collect whole tensors instead.
    let mut base: Vec<Option<usize>> = vec![None; components.len()];
    let mut owners: Vec<(usize, usize)> = Vec::new();
    for (c, w) in widths.iter().enumerate() {
        if let (Some(w), false) = (w, reasons.contains_key(&c)) {
            base[c] = Some(owners.len());
            owners.extend((0..*w).map(|j| (c, j)));
        }
    }
    let mut groups: Vec<Vec<ParamSlice>> = owners
        .iter()
        .map(|&(c, _)| Vec::with_capacity(2 * components[c].vertex_ids.len()))
        .collect();
    let mut excluded_slices: BTreeMap<usize, Vec<ParamSlice>> = BTreeMap::new();

    for (c, comp) in components.iter().enumerate() {
        let Some(width) = widths[c] else { continue };
        for &s in &comp.stem_ids {
            let has_bias = g
                .params(s)
                .and_then(|p| p.tensor(TensorRole::Bias))
                .is_some();
            if reasons.contains_key(&c) {
                let slices = excluded_slices.entry(c).or_default();
                slices.push(ParamSlice::new(s, TensorRole::FilterRow, 0..width));
                if has_bias {
                    slices.push(ParamSlice::new(s, TensorRole::Bias, 0..width));
                }
                continue;
            }
            let first = base[c].expect("prunable component has groups");
            for (j, slices) in groups[first..first + width].iter_mut().enumerate() {
                slices.push(ParamSlice::new(s, TensorRole::FilterRow, j..j + 1));
                if has_bias {
                    slices.push(ParamSlice::new(s, TensorRole::Bias, j..j + 1));
                }
            }
        }
    }

    let mut own_component = HashMap::default();
    for (c, comp) in components.iter().enumerate() {
        for &v in &comp.vertex_ids {
            own_component.insert(v, c);
        }
    }

    for v in g.topo_order() {
        if !matches!(v.kind, VertexKind::BatchNorm { .. }) {
            continue;
        }
        let input: Port = g.predecessors(v.id)[0];
        for (ch, origin) in origins.port(input).iter().enumerate() {
            let target = match origin {
                Some(r) => {
                    let c = r.component as usize;
                    match base[c] {
                        Some(first) if !reasons.contains_key(&c) => {
                            &mut groups[first + r.group as usize]
                        }
                        _ => excluded_slices.entry(c).or_default(),
                    }
                }
                None => {
                    let c = own_component[&v.id];
                    reasons.entry(c).or_insert(ExclusionReason::InputRooted);
                    excluded_slices.entry(c).or_default()
                }
            };
            target.push(ParamSlice::new(v.id, TensorRole::BnGamma, ch..ch + 1));
            target.push(ParamSlice::new(v.id, TensorRole::BnBeta, ch..ch + 1));
        }
    }

    let zigs = owners
        .into_iter()
        .zip(groups)
        .map(|((component, index), slices)| ZeroInvariantGroup {
            component,
            index,
            slices: canonical(g, slices),
        })
        .collect();
    let excluded = reasons
        .into_iter()
        .map(|(component, reason)| ExcludedComponent {
            component,
            reason,
            slices: canonical(g, excluded_slices.remove(&component).unwrap_or_default()),
        })
        .collect();

    Ok(PartitionResult {
        components,
        zigs,
        excluded,
    })
}

/// Sorts by (topological index, role, start) and fuses adjacent ranges of the
/// same tensor.
fn canonical(g: &ComputationGraph, mut slices: Vec<ParamSlice>) -> Vec<ParamSlice> {
    slices.sort_unstable_by_key(|s| (g.topo_index(s.vertex), s.role, s.range.start));
    slices.dedup_by(|s, last| {
        let fuse =
            last.vertex == s.vertex && last.role == s.role && last.range.end == s.range.start;
        if fuse {
            last.range.end = s.range.end;
        }
        fuse
    });
    slices
}

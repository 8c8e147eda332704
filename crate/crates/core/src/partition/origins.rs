use std::ops::Range;

use rustc_hash::FxHashMap as HashMap;
use serde::{Deserialize, Serialize};

use super::PartitionError;
use crate::graph::{ComputationGraph, GraphError, Port, VertexId, VertexKind};

/// Group that produced a channel: output channel `group` of the stems in
/// `component`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupRef {
    pub component: u32,
    pub group: u32,
}

/// Per-vertex table mapping each output channel (or flattened feature) to the
/// stem group it comes from. `None` marks channels that come straight from a
/// graph input.
#[derive(Clone, Debug)]
pub struct ChannelOrigins {
    /// Every table back to back: graph inputs first, then vertices.
    data: Vec<Option<GroupRef>>,
    vertices: HashMap<VertexId, Range<usize>>,
    inputs: Vec<Range<usize>>,
}

impl ChannelOrigins {
    /// `stem_component` maps a stem to its dependency component.
    pub fn compute(
        g: &ComputationGraph,
        stem_component: &HashMap<VertexId, usize>,
    ) -> Result<Self, PartitionError> {
        let mut me = Self {
            data: Vec::new(),
            vertices: HashMap::with_capacity_and_hasher(g.len(), Default::default()),
            inputs: Vec::with_capacity(g.inputs().len()),
        };
        for s in g.inputs() {
            let start = me.data.len();
            me.data.resize(start + s.channels(), None);
            me.inputs.push(start..me.data.len());
        }
        for v in g.topo_order() {
            let preds = g.predecessors(v.id);
            let start = me.data.len();
            match v.kind {
                VertexKind::Conv2d {
                    out_channels: width,
                    ..
                }
                | VertexKind::Linear {
                    out_features: width,
                    ..
                } => {
                    let component = stem_component[&v.id] as u32;
                    me.data
                        .extend((0..width as u32).map(|group| Some(GroupRef { component, group })));
                }
                VertexKind::Flatten => {
                    let shape = g
                        .port_shape(preds[0])
                        .ok_or(GraphError::MissingShape(v.id))?;
                    let plane = shape.plane();
                    for i in me.span(preds[0]) {
                        let o = me.data[i];
                        me.data.extend(std::iter::repeat_n(o, plane));
                    }
                }
                VertexKind::Concat => {
                    for &p in preds {
                        me.data.extend_from_within(me.span(p));
                    }
                }
                VertexKind::Add | VertexKind::Mul => {
                    let first = me.port(preds[0]);
                    if preds[1..].iter().any(|&p| me.port(p) != first) {
                        return Err(PartitionError::UnsupportedCoupling(v.id));
                    }
                    me.data.extend_from_within(me.span(preds[0]));
                }
                _ => me.data.extend_from_within(me.span(preds[0])),
            }
            me.vertices.insert(v.id, start..me.data.len());
        }
        Ok(me)
    }

    fn span(&self, p: Port) -> Range<usize> {
        match p {
            Port::Input(slot) => self.inputs[slot].clone(),
            Port::Vertex(id) => self.vertices[&id].clone(),
        }
    }

    /// Origins of the channels carried by a port.
    pub fn port(&self, p: Port) -> &[Option<GroupRef>] {
        &self.data[self.span(p)]
    }

    pub fn vertex(&self, id: VertexId) -> &[Option<GroupRef>] {
        self.port(Port::Vertex(id))
    }
}

//! Typed computation-graph IR.
//!
//! A [`ComputationGraph`] is a DAG of operator vertices. Graph inputs are not
//! vertices; edges name their source as a [`Port`], which is either a graph
//! input slot or another vertex. The order in which edges into the same vertex
//! appear in the edge list is the operand order (it matters for `Concat`).
//!
//! Graphs are built from a [`GraphDocument`], the JSON description format, and
//! serialize back to the same document.

mod builders;
mod cost;
mod dot;
mod params;
mod shape;

use std::fmt;

use rustc_hash::FxHashMap as HashMap;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub use builders::{chain_net, demo_net, residual_block_net, stacked_unets_mini};
pub use cost::{count_flops_params, CostSummary};
pub use dot::export_dot;
pub use params::{init_parameters, Matrix, ParamLayout, ParameterSet, TensorEntry, TensorRole};
pub use shape::infer_shapes;

pub type VertexId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph contains a cycle through vertex {0}")]
    CycleDetected(VertexId),
    #[error("edge references missing vertex {0}")]
    DanglingEdge(VertexId),
    #[error("edge references missing graph input {0}")]
    DanglingInput(usize),
    #[error("unknown operator kind `{0}`")]
    UnknownKindString(String),
    #[error("duplicate vertex id {0}")]
    DuplicateVertex(VertexId),
    #[error("vertex {0} has no inputs and is not reachable from a graph input")]
    Unreachable(VertexId),
    #[error("vertex {vertex} takes {expected} input(s), found {found}")]
    Arity {
        vertex: VertexId,
        expected: &'static str,
        found: usize,
    },
    #[error("shape mismatch at shape-dependent joint {vertex}: {lhs} vs {rhs}")]
    ShapeMismatchAtSDJoint {
        vertex: VertexId,
        lhs: TensorShape,
        rhs: TensorShape,
    },
    #[error("flatten vertex {0} needs a rank-4 input with known spatial dims")]
    FlattenWithoutKnownSpatialDims(VertexId),
    #[error("vertex {vertex}: {detail}")]
    ShapeMismatch { vertex: VertexId, detail: String },
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("vertex {vertex}: {detail}")]
    ParameterMismatch { vertex: VertexId, detail: String },
    #[error("vertex {0} has no inferred shape")]
    MissingShape(VertexId),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Activation shape. Rank 4 is `(N, C, H, W)`, rank 2 is `(N, F)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct TensorShape(Vec<usize>);

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Result<Self, GraphError> {
        if !(dims.len() == 2 || dims.len() == 4) || dims.contains(&0) {
            return Err(GraphError::InvalidShape(dims));
        }
        Ok(Self(dims))
    }

    pub fn nchw(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self::new(vec![n, c, h, w]).expect("positive dims")
    }

    pub fn features(n: usize, f: usize) -> Self {
        Self::new(vec![n, f]).expect("positive dims")
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn batch(&self) -> usize {
        self.0[0]
    }

    /// Channel count for rank 4, feature count for rank 2.
    pub fn channels(&self) -> usize {
        self.0[1]
    }

    pub fn spatial(&self) -> Option<(usize, usize)> {
        (self.rank() == 4).then(|| (self.0[2], self.0[3]))
    }

    /// Elements per channel (`H·W` for rank 4, 1 for rank 2).
    pub fn plane(&self) -> usize {
        self.0[2..].iter().product()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn with_batch(&self, n: usize) -> Self {
        let mut dims = self.0.clone();
        dims[0] = n;
        Self(dims)
    }

    pub fn with_channels(&self, c: usize) -> Self {
        let mut dims = self.0.clone();
        dims[1] = c;
        Self(dims)
    }
}

impl<'de> Deserialize<'de> for TensorShape {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let dims = Vec::<usize>::deserialize(d)?;
        TensorShape::new(dims).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// Operator kind of a vertex.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum VertexKind {
    Conv2d {
        kernel: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
        bias: bool,
    },
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    #[serde(rename = "batch_norm")]
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Add,
    Mul,
    Concat,
    Unknown {
        name: String,
    },
    Output,
}

const KNOWN_OPS: &[&str] = &[
    "conv2d",
    "linear",
    "batch_norm",
    "relu",
    "max_pool",
    "avg_pool",
    "flatten",
    "add",
    "mul",
    "concat",
    "unknown",
    "output",
];

/// Vertex taxonomy used by the partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Stem,
    Accessory,
    SdJoint,
    SidJoint,
    Unknown,
    Output,
}

impl VertexKind {
    pub fn category(&self) -> Category {
        use VertexKind::*;
        match self {
            Conv2d { .. } | Linear { .. } => Category::Stem,
            BatchNorm { .. } | Relu | MaxPool { .. } | AvgPool { .. } | Flatten => {
                Category::Accessory
            }
            Add | Mul => Category::SdJoint,
            Concat => Category::SidJoint,
            Unknown { .. } => Category::Unknown,
            Output => Category::Output,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            VertexKind::Conv2d { .. } | VertexKind::Linear { .. } | VertexKind::BatchNorm { .. }
        )
    }

    /// Output width of a stem (filters for conv, features for linear).
    pub fn stem_width(&self) -> Option<usize> {
        match *self {
            VertexKind::Conv2d { out_channels, .. } => Some(out_channels),
            VertexKind::Linear { out_features, .. } => Some(out_features),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        use VertexKind::*;
        match self {
            Conv2d {
                kernel,
                in_channels,
                out_channels,
                ..
            } => format!("Conv2d {kernel}x{kernel} {in_channels}->{out_channels}"),
            Linear {
                in_features,
                out_features,
                ..
            } => format!("Linear {in_features}->{out_features}"),
            BatchNorm { channels } => format!("BatchNorm {channels}"),
            Relu => "ReLU".into(),
            MaxPool { kernel, .. } => format!("MaxPool {kernel}"),
            AvgPool { kernel, .. } => format!("AvgPool {kernel}"),
            Flatten => "Flatten".into(),
            Add => "Add".into(),
            Mul => "Mul".into(),
            Concat => "Concat".into(),
            Unknown { name } => format!("Unknown({name})"),
            Output => "Output".into(),
        }
    }

    fn arity(&self) -> (&'static str, fn(usize) -> bool) {
        match self.category() {
            Category::SdJoint | Category::SidJoint => (">= 2", |n| n >= 2),
            Category::Unknown => (">= 1", |n| n >= 1),
            _ => ("exactly 1", |n| n == 1),
        }
    }
}

/// Accepts any `op` string; names outside the known operator set become
/// [`VertexKind::Unknown`].
fn deserialize_kind<'de, D: Deserializer<'de>>(d: D) -> Result<VertexKind, D::Error> {
    let value = serde_json::Value::deserialize(d)?;
    let op = value
        .get("op")
        .and_then(|v| v.as_str())
        .ok_or_else(|| serde::de::Error::custom("vertex kind needs an `op` string"))?
        .to_owned();
    if KNOWN_OPS.contains(&op.as_str()) {
        serde_json::from_value(value).map_err(serde::de::Error::custom)
    } else {
        Ok(VertexKind::Unknown { name: op })
    }
}

/// Source of an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    Input(usize),
    Vertex(VertexId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: Port,
    pub dst: VertexId,
}

impl Edge {
    pub fn new(src: VertexId, dst: VertexId) -> Self {
        Self {
            src: Port::Vertex(src),
            dst,
        }
    }

    pub fn from_input(slot: usize, dst: VertexId) -> Self {
        Self {
            src: Port::Input(slot),
            dst,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: VertexId,
    #[serde(default)]
    pub name: String,
    #[serde(deserialize_with = "deserialize_kind")]
    pub kind: VertexKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParameterSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_shape: Option<TensorShape>,
}

impl Vertex {
    pub fn new(id: VertexId, name: impl Into<String>, kind: VertexKind) -> Self {
        Self {
            id,
            name: name.into(),
            kind,
            params: None,
            out_shape: None,
        }
    }

    pub fn category(&self) -> Category {
        self.kind.category()
    }

    pub fn display_name(&self) -> String {
        if self.name.is_empty() {
            format!("v{}", self.id)
        } else {
            self.name.clone()
        }
    }
}

/// Serialized form of a graph: input shapes, vertices (with optional
/// weights and shapes), and ordered edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub inputs: Vec<TensorShape>,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
}

impl GraphDocument {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph document serializes")
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BuildOptions {
    /// Reject vertices whose operator is outside the known set.
    pub strict: bool,
}

/// Vertex id → storage position. Ids are usually small and dense, in which
/// case a flat table replaces hashing.
#[derive(Clone, Debug)]
enum IdIndex {
    Dense(Vec<usize>),
    Sparse(HashMap<VertexId, usize>),
}

impl IdIndex {
    const VACANT: usize = usize::MAX;

    /// Fails with the first duplicated id.
    fn build(vertices: &[Vertex]) -> Result<Self, VertexId> {
        let n = vertices.len();
        let max = vertices.iter().map(|v| v.id).max().unwrap_or(0);
        if max < 4 * n + 64 {
            let mut table = vec![Self::VACANT; max + 1];
            for (pos, v) in vertices.iter().enumerate() {
                if table[v.id] != Self::VACANT {
                    return Err(v.id);
                }
                table[v.id] = pos;
            }
            Ok(Self::Dense(table))
        } else {
            let mut map = HashMap::with_capacity_and_hasher(n, Default::default());
            for (pos, v) in vertices.iter().enumerate() {
                if map.insert(v.id, pos).is_some() {
                    return Err(v.id);
                }
            }
            Ok(Self::Sparse(map))
        }
    }

    fn get(&self, id: VertexId) -> Option<usize> {
        match self {
            Self::Dense(t) => t.get(id).copied().filter(|&p| p != Self::VACANT),
            Self::Sparse(m) => m.get(&id).copied(),
        }
    }
}

/// Validated DAG with derived adjacency and a canonical topological order.
#[derive(Clone, Debug)]
pub struct ComputationGraph {
    inputs: Vec<TensorShape>,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    index: IdIndex,
    preds: Vec<Vec<Port>>,
    succs: Vec<Vec<usize>>,
    topo: Vec<usize>,
    topo_rank: Vec<usize>,
}

impl PartialEq for ComputationGraph {
    fn eq(&self, other: &Self) -> bool {
        self.inputs == other.inputs && self.vertices == other.vertices && self.edges == other.edges
    }
}

/// Validates a description and builds the graph. Unknown operators are
/// permitted; see [`ComputationGraph::unknown_vertices`].
pub fn build_graph(doc: GraphDocument) -> Result<ComputationGraph, GraphError> {
    build_graph_with(doc, BuildOptions::default())
}

pub fn build_graph_with(
    doc: GraphDocument,
    opts: BuildOptions,
) -> Result<ComputationGraph, GraphError> {
    let GraphDocument {
        inputs,
        mut vertices,
        edges,
    } = doc;

    let index = IdIndex::build(&vertices).map_err(GraphError::DuplicateVertex)?;
    for v in &vertices {
        if let VertexKind::Unknown { name } = &v.kind {
            if opts.strict {
                return Err(GraphError::UnknownKindString(name.clone()));
            }
        }
    }

    let n = vertices.len();
    let mut preds = vec![Vec::new(); n];
    let mut succs = vec![Vec::new(); n];
    let mut input_consumers: Vec<Vec<usize>> = vec![Vec::new(); inputs.len()];
    for e in &edges {
        let dst = index.get(e.dst).ok_or(GraphError::DanglingEdge(e.dst))?;
        match e.src {
            Port::Input(slot) => {
                input_consumers
                    .get_mut(slot)
                    .ok_or(GraphError::DanglingInput(slot))?
                    .push(dst);
            }
            Port::Vertex(src) => {
                let s = index.get(src).ok_or(GraphError::DanglingEdge(src))?;
                succs[s].push(dst);
            }
        }
        preds[dst].push(e.src);
    }

    for (pos, v) in vertices.iter().enumerate() {
        if preds[pos].is_empty() {
            return Err(GraphError::Unreachable(v.id));
        }
        let (expected, ok) = v.kind.arity();
        if !ok(preds[pos].len()) {
            return Err(GraphError::Arity {
                vertex: v.id,
                expected,
                found: preds[pos].len(),
            });
        }
    }

    // Kahn's algorithm, FIFO, seeded by input consumers in edge order. The
    // resulting order depends only on structure and edge order, not on ids.
    let mut indeg: Vec<usize> = preds
        .iter()
        .map(|p| p.iter().filter(|s| matches!(s, Port::Vertex(_))).count())
        .collect();
    let mut queue = std::collections::VecDeque::with_capacity(n);
    let mut queued = vec![false; n];
    for consumers in &input_consumers {
        for &c in consumers {
            if indeg[c] == 0 && !queued[c] {
                queued[c] = true;
                queue.push_back(c);
            }
        }
    }
    let mut topo = Vec::with_capacity(n);
    while let Some(pos) = queue.pop_front() {
        topo.push(pos);
        for &s in &succs[pos] {
            indeg[s] -= 1;
            if indeg[s] == 0 && !queued[s] {
                queued[s] = true;
                queue.push_back(s);
            }
        }
    }
    if topo.len() < n {
        let stuck = (0..n)
            .find(|&p| !queued[p])
            .expect("some vertex unprocessed");
        return Err(GraphError::CycleDetected(vertices[stuck].id));
    }
    let mut topo_rank = vec![0; n];
    for (rank, &pos) in topo.iter().enumerate() {
        topo_rank[pos] = rank;
    }

    for v in vertices.iter_mut() {
        params::validate_or_default(v)?;
    }

    Ok(ComputationGraph {
        inputs,
        vertices,
        edges,
        index,
        preds,
        succs,
        topo,
        topo_rank,
    })
}

impl ComputationGraph {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        build_graph(GraphDocument::from_json(text)?)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            inputs: self.inputs.clone(),
            vertices: self.vertices.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        self.to_document().to_json()
    }

    pub fn inputs(&self) -> &[TensorShape] {
        &self.inputs
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Vertices in storage order.
    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, id: VertexId) -> bool {
        self.index.get(id).is_some()
    }

    pub fn vertex(&self, id: VertexId) -> &Vertex {
        &self.vertices[self.pos(id)]
    }

    pub fn params(&self, id: VertexId) -> Option<&ParameterSet> {
        self.vertex(id).params.as_ref()
    }

    pub fn params_mut(&mut self, id: VertexId) -> Option<&mut ParameterSet> {
        let pos = self.pos(id);
        self.vertices[pos].params.as_mut()
    }

    /// Ordered operands of a vertex.
    pub fn predecessors(&self, id: VertexId) -> &[Port] {
        &self.preds[self.pos(id)]
    }

    /// Consumers of a vertex's output, one entry per edge.
    pub fn successors(&self, id: VertexId) -> impl Iterator<Item = VertexId> + '_ {
        self.succs[self.pos(id)]
            .iter()
            .map(move |&p| self.vertices[p].id)
    }

    /// Vertices in canonical topological order.
    pub fn topo_order(&self) -> impl DoubleEndedIterator<Item = &Vertex> + ExactSizeIterator + '_ {
        self.topo.iter().map(move |&p| &self.vertices[p])
    }

    pub fn topo_index(&self, id: VertexId) -> usize {
        self.topo_rank[self.pos(id)]
    }

    /// `Output` vertices in topological order.
    pub fn outputs(&self) -> Vec<VertexId> {
        self.topo_order()
            .filter(|v| v.kind == VertexKind::Output)
            .map(|v| v.id)
            .collect()
    }

    pub fn unknown_vertices(&self) -> Vec<VertexId> {
        self.topo_order()
            .filter(|v| v.category() == Category::Unknown)
            .map(|v| v.id)
            .collect()
    }

    /// Shape flowing out of a port, if known.
    pub fn port_shape(&self, port: Port) -> Option<&TensorShape> {
        match port {
            Port::Input(slot) => self.inputs.get(slot),
            Port::Vertex(id) => self.vertex(id).out_shape.as_ref(),
        }
    }

    pub fn shape(&self, id: VertexId) -> Result<&TensorShape, GraphError> {
        self.vertex(id)
            .out_shape
            .as_ref()
            .ok_or(GraphError::MissingShape(id))
    }

    pub fn shapes_inferred(&self) -> bool {
        self.vertices.iter().all(|v| v.out_shape.is_some())
    }

    pub(crate) fn pos(&self, id: VertexId) -> usize {
        self.index
            .get(id)
            .unwrap_or_else(|| panic!("vertex {id} not in graph"))
    }
}

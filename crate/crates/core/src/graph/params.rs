use std::ops::Range;

use rand::Rng;
use rustc_hash::FxHashMap as HashMap;
use serde::{Deserialize, Serialize};

use super::{ComputationGraph, GraphError, Vertex, VertexId, VertexKind};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Trainable (and running-statistic) tensors of a vertex.
///
/// For a convolution, row `j` of `weight` is the flattened `j`th filter laid
/// out as `[in_channel][kh][kw]`. For a linear layer the weight is
/// `out_features × in_features`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParameterSet {
    Stem {
        weight: Matrix,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
    },
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorRole {
    FilterRow,
    Bias,
    BnGamma,
    BnBeta,
}

impl ParameterSet {
    pub fn stem(rows: usize, cols: usize, bias: bool) -> Self {
        ParameterSet::Stem {
            weight: Matrix::zeros(rows, cols),
            bias: bias.then(|| vec![0.0; rows]),
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        ParameterSet::BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    /// Trainable roles present, in canonical order.
    pub fn roles(&self) -> Vec<TensorRole> {
        match self {
            ParameterSet::Stem { bias, .. } => {
                let mut r = vec![TensorRole::FilterRow];
                if bias.is_some() {
                    r.push(TensorRole::Bias);
                }
                r
            }
            ParameterSet::BatchNorm { .. } => vec![TensorRole::BnGamma, TensorRole::BnBeta],
        }
    }

    pub fn tensor(&self, role: TensorRole) -> Option<&[f64]> {
        match (self, role) {
            (ParameterSet::Stem { weight, .. }, TensorRole::FilterRow) => Some(&weight.data),
            (ParameterSet::Stem { bias, .. }, TensorRole::Bias) => bias.as_deref(),
            (ParameterSet::BatchNorm { gamma, .. }, TensorRole::BnGamma) => Some(gamma),
            (ParameterSet::BatchNorm { beta, .. }, TensorRole::BnBeta) => Some(beta),
            _ => None,
        }
    }

    pub fn tensor_mut(&mut self, role: TensorRole) -> Option<&mut [f64]> {
        match (self, role) {
            (ParameterSet::Stem { weight, .. }, TensorRole::FilterRow) => Some(&mut weight.data),
            (ParameterSet::Stem { bias, .. }, TensorRole::Bias) => bias.as_deref_mut(),
            (ParameterSet::BatchNorm { gamma, .. }, TensorRole::BnGamma) => Some(gamma),
            (ParameterSet::BatchNorm { beta, .. }, TensorRole::BnBeta) => Some(beta),
            _ => None,
        }
    }

    /// Elements per index of `role` (filter row length for weights, else 1).
    pub fn unit(&self, role: TensorRole) -> usize {
        match (self, role) {
            (ParameterSet::Stem { weight, .. }, TensorRole::FilterRow) => weight.cols,
            _ => 1,
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.roles()
            .into_iter()
            .map(|r| self.tensor(r).map_or(0, |t| t.len()))
            .sum()
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            ParameterSet::Stem { weight, bias } => ParameterSet::Stem {
                weight: Matrix::zeros(weight.rows, weight.cols),
                bias: bias.as_ref().map(|b| vec![0.0; b.len()]),
            },
            ParameterSet::BatchNorm { gamma, .. } => {
                let c = gamma.len();
                ParameterSet::BatchNorm {
                    gamma: vec![0.0; c],
                    beta: vec![0.0; c],
                    running_mean: vec![0.0; c],
                    running_var: vec![0.0; c],
                }
            }
        }
    }
}

fn expected_params(kind: &VertexKind) -> Option<ParameterSet> {
    match *kind {
        VertexKind::Conv2d {
            kernel,
            in_channels,
            out_channels,
            bias,
            ..
        } => Some(ParameterSet::stem(
            out_channels,
            in_channels * kernel * kernel,
            bias,
        )),
        VertexKind::Linear {
            in_features,
            out_features,
            bias,
        } => Some(ParameterSet::stem(out_features, in_features, bias)),
        VertexKind::BatchNorm { channels } => Some(ParameterSet::batch_norm(channels)),
        _ => None,
    }
}

/// Checks supplied parameters against the operator, or fills defaults
/// (zero stems, identity batch norm).
pub(super) fn validate_or_default(v: &mut Vertex) -> Result<(), GraphError> {
    let expected = expected_params(&v.kind);
    let mismatch = |detail: String| GraphError::ParameterMismatch {
        vertex: v.id,
        detail,
    };
    match (&v.params, expected) {
        (None, None) => Ok(()),
        (Some(_), None) => Err(mismatch(format!("{} takes no parameters", v.kind.label()))),
        (None, Some(default)) => {
            v.params = Some(default);
            Ok(())
        }
        (Some(given), Some(want)) => {
            let ok = match (given, &want) {
                (
                    ParameterSet::Stem { weight, bias },
                    ParameterSet::Stem {
                        weight: w2,
                        bias: b2,
                    },
                ) => {
                    weight.rows == w2.rows
                        && weight.cols == w2.cols
                        && weight.data.len() == weight.rows * weight.cols
                        && bias.as_ref().map(Vec::len) == b2.as_ref().map(Vec::len)
                }
                (
                    ParameterSet::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                    ParameterSet::BatchNorm { gamma: g2, .. },
                ) => [gamma, beta, running_mean, running_var]
                    .iter()
                    .all(|t| t.len() == g2.len()),
                _ => false,
            };
            if ok {
                Ok(())
            } else {
                Err(mismatch(format!(
                    "parameter tensors do not fit {}",
                    v.kind.label()
                )))
            }
        }
    }
}

/// Default initialization: stems uniform in `±1/sqrt(fan_in)` for weights
/// and biases; batch norm at identity. Vertices are visited in topological
/// order, weights before biases.
pub fn init_parameters<R: Rng + ?Sized>(g: &mut ComputationGraph, rng: &mut R) {
    let order: Vec<VertexId> = g.topo_order().map(|v| v.id).collect();
    for id in order {
        let Some(p) = g.params_mut(id) else { continue };
        match &mut *p {
            ParameterSet::Stem { weight, bias } => {
                let bound = 1.0 / (weight.cols as f64).sqrt();
                for w in weight.data.iter_mut() {
                    *w = rng.random_range(-bound..bound);
                }
                if let Some(b) = bias {
                    for x in b.iter_mut() {
                        *x = rng.random_range(-bound..bound);
                    }
                }
            }
            ParameterSet::BatchNorm { gamma, .. } => {
                let c = gamma.len();
                *p = ParameterSet::batch_norm(c);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub vertex: VertexId,
    pub role: TensorRole,
    pub offset: usize,
    pub len: usize,
    pub unit: usize,
}

/// Flat view of every trainable tensor, in topological vertex order.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    entries: Vec<TensorEntry>,
    lookup: HashMap<(VertexId, TensorRole), usize>,
    total: usize,
}

impl ParamLayout {
    pub fn new(g: &ComputationGraph) -> Self {
        let mut entries = Vec::new();
        let mut lookup = HashMap::default();
        let mut offset = 0;
        for v in g.topo_order() {
            let Some(p) = &v.params else { continue };
            for role in p.roles() {
                let len = p.tensor(role).map_or(0, |t| t.len());
                lookup.insert((v.id, role), entries.len());
                entries.push(TensorEntry {
                    vertex: v.id,
                    role,
                    offset,
                    len,
                    unit: p.unit(role),
                });
                offset += len;
            }
        }
        Self {
            entries,
            lookup,
            total: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn entry(&self, vertex: VertexId, role: TensorRole) -> Option<&TensorEntry> {
        self.lookup.get(&(vertex, role)).map(|&i| &self.entries[i])
    }

    /// Flat index range covering `indices` (rows for weights, elements
    /// otherwise) of one tensor.
    pub fn flat_range(
        &self,
        vertex: VertexId,
        role: TensorRole,
        indices: Range<usize>,
    ) -> Option<Range<usize>> {
        let e = self.entry(vertex, role)?;
        let start = e.offset + indices.start * e.unit;
        let end = e.offset + indices.end * e.unit;
        (end <= e.offset + e.len).then_some(start..end)
    }

    pub fn gather(&self, g: &ComputationGraph) -> Vec<f64> {
        let mut out = vec![0.0; self.total];
        for e in &self.entries {
            let t = g
                .params(e.vertex)
                .and_then(|p| p.tensor(e.role))
                .expect("layout matches graph");
            out[e.offset..e.offset + e.len].copy_from_slice(t);
        }
        out
    }

    pub fn scatter(&self, g: &mut ComputationGraph, flat: &[f64]) {
        assert_eq!(flat.len(), self.total);
        for e in &self.entries {
            let t = g
                .params_mut(e.vertex)
                .and_then(|p| p.tensor_mut(e.role))
                .expect("layout matches graph");
            t.copy_from_slice(&flat[e.offset..e.offset + e.len]);
        }
    }

    /// Flattens per-vertex gradient sets laid out like the parameters.
    pub fn gather_from<'a, F>(&self, lookup: F) -> Vec<f64>
    where
        F: Fn(VertexId) -> Option<&'a ParameterSet>,
    {
        let mut out = vec![0.0; self.total];
        for e in &self.entries {
            if let Some(t) = lookup(e.vertex).and_then(|p| p.tensor(e.role)) {
                out[e.offset..e.offset + e.len].copy_from_slice(t);
            }
        }
        out
    }
}

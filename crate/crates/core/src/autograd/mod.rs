//! Double-precision forward and reverse-mode evaluation of a
//! [`ComputationGraph`].
//!
//! [`forward`] records every activation; [`backward`] walks the graph in
//! reverse topological order and returns parameter gradients mirroring each
//! vertex's [`ParameterSet`]. Batch-norm running statistics are never mutated
//! during the forward pass; apply them with [`ForwardPass::apply_running_stats`].

mod check;
mod kernels;
mod loss;
mod tensor;

use rustc_hash::FxHashMap as HashMap;
use thiserror::Error;

use crate::graph::{
    ComputationGraph, GraphError, ParamLayout, ParameterSet, Port, TensorShape, VertexId,
    VertexKind,
};
use kernels::{ConvGeom, PoolGeom};

pub use check::{finite_difference_check, GradientCheck};
pub use kernels::gemm;
pub use loss::Target;
pub use tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum AutogradError {
    #[error("shape mismatch at {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: String,
        found: String,
    },
    #[error("vertex {vertex} runs unsupported operator `{name}`")]
    UnsupportedOperator { vertex: VertexId, name: String },
    #[error("loss target mismatch: {0}")]
    TargetMismatch(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Batch statistics observed by a batch norm in train mode. `var` is the
/// unbiased estimate, as folded into the running variance.
#[derive(Clone, Debug)]
pub struct BnObservation {
    pub vertex: VertexId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Aux {
    None,
    Bn { xhat: Vec<f64>, inv_std: Vec<f64> },
    MaxPool(Vec<usize>),
}

/// Activation cache of one forward evaluation.
pub struct ForwardPass {
    mode: Mode,
    inputs: Vec<Tensor>,
    values: Vec<Option<Tensor>>,
    aux: Vec<Aux>,
    outputs: Vec<VertexId>,
    positions: HashMap<VertexId, usize>,
    bn: Vec<BnObservation>,
}

impl ForwardPass {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Values of the `Output` vertices, in topological order.
    pub fn outputs(&self) -> Vec<&Tensor> {
        self.outputs.iter().map(|&id| self.value(id)).collect()
    }

    pub fn output(&self, i: usize) -> &Tensor {
        self.value(self.outputs[i])
    }

    pub fn value(&self, id: VertexId) -> &Tensor {
        self.values[self.positions[&id]]
            .as_ref()
            .expect("every vertex is evaluated")
    }

    fn port(&self, p: Port) -> &Tensor {
        match p {
            Port::Input(slot) => &self.inputs[slot],
            Port::Vertex(id) => self.value(id),
        }
    }

    pub fn bn_observations(&self) -> &[BnObservation] {
        &self.bn
    }

    /// Folds the observed batch statistics into the running statistics
    /// (momentum [`BN_MOMENTUM`]).
    pub fn apply_running_stats(&self, g: &mut ComputationGraph) {
        for obs in &self.bn {
            if let Some(ParameterSet::BatchNorm {
                running_mean,
                running_var,
                ..
            }) = g.params_mut(obs.vertex)
            {
                for (r, m) in running_mean.iter_mut().zip(&obs.mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
                for (r, v) in running_var.iter_mut().zip(&obs.var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
                }
            }
        }
    }
}

fn mismatch(
    context: impl Into<String>,
    expected: impl ToString,
    found: impl ToString,
) -> AutogradError {
    AutogradError::ShapeMismatch {
        context: context.into(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

fn dims4(s: &TensorShape, id: VertexId) -> Result<(usize, usize, usize, usize), AutogradError> {
    match *s.dims() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(mismatch(format!("vertex {id}"), "rank 4", s)),
    }
}

fn stem(g: &ComputationGraph, id: VertexId) -> (&crate::graph::Matrix, Option<&Vec<f64>>) {
    match g.params(id) {
        Some(ParameterSet::Stem { weight, bias }) => (weight, bias.as_ref()),
        _ => panic!("stem vertex {id} has no weights"),
    }
}

fn bn_params(g: &ComputationGraph, id: VertexId) -> (&[f64], &[f64], &[f64], &[f64]) {
    match g.params(id) {
        Some(ParameterSet::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
        }) => (gamma, beta, running_mean, running_var),
        _ => panic!("batch norm {id} has no parameters"),
    }
}

/// Evaluates the graph on one batch per graph input. Inputs may use any batch
/// size but must agree with each other and with the declared per-sample shape.
pub fn forward(
    g: &ComputationGraph,
    inputs: &[Tensor],
    mode: Mode,
) -> Result<ForwardPass, AutogradError> {
    if inputs.len() != g.inputs().len() {
        return Err(mismatch("graph inputs", g.inputs().len(), inputs.len()));
    }
    let batch = inputs.first().map_or(1, |t| t.batch());
    for (slot, (t, declared)) in inputs.iter().zip(g.inputs()).enumerate() {
        if *t.shape() != declared.with_batch(batch) {
            return Err(mismatch(
                format!("input {slot}"),
                declared.with_batch(batch),
                t.shape(),
            ));
        }
    }
    let positions: HashMap<VertexId, usize> =
        g.vertices().iter().map(|v| (v.id, g.pos(v.id))).collect();
    let mut pass = ForwardPass {
        mode,
        inputs: inputs.to_vec(),
        values: vec![None; g.len()],
        aux: (0..g.len()).map(|_| Aux::None).collect(),
        outputs: g.outputs(),
        positions,
        bn: Vec::new(),
    };

    for v in g.topo_order() {
        let id = v.id;
        let preds = g.predecessors(id);
        let x = pass.port(preds[0]);
        let ctx = || format!("vertex {id} ({})", v.display_name());
        let mut aux = Aux::None;
        let mut observed = None;
        let out = match &v.kind {
            &VertexKind::Conv2d {
                kernel,
                stride,
                padding,
                in_channels,
                out_channels,
                ..
            } => {
                let (n, c, h, w) = dims4(x.shape(), id)?;
                if c != in_channels || h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(mismatch(
                        ctx(),
                        format!("{in_channels} channels"),
                        x.shape(),
                    ));
                }
                let geom = ConvGeom::new(c, h, w, kernel, stride, padding);
                let (weight, bias) = stem(g, id);
                let plane = geom.out_plane();
                let mut y = Tensor::zeros(TensorShape::nchw(n, out_channels, geom.ho, geom.wo));
                let mut cols = vec![0.0; geom.col_rows() * plane];
                let per_in = c * h * w;
                let per_out = out_channels * plane;
                for s in 0..n {
                    kernels::im2col(&x.data()[s * per_in..(s + 1) * per_in], &geom, &mut cols);
                    let ys = &mut y.data_mut()[s * per_out..(s + 1) * per_out];
                    gemm(
                        out_channels,
                        geom.col_rows(),
                        plane,
                        &weight.data,
                        (weight.cols, 1),
                        &cols,
                        (plane, 1),
                        0.0,
                        ys,
                    );
                    if let Some(b) = bias {
                        for (co, row) in ys.chunks_mut(plane).enumerate() {
                            row.iter_mut().for_each(|v| *v += b[co]);
                        }
                    }
                }
                y
            }
            &VertexKind::Linear {
                in_features,
                out_features,
                ..
            } => {
                let (n, f) = match *x.shape().dims() {
                    [n, f] => (n, f),
                    _ => return Err(mismatch(ctx(), "rank 2", x.shape())),
                };
                if f != in_features {
                    return Err(mismatch(
                        ctx(),
                        format!("{in_features} features"),
                        x.shape(),
                    ));
                }
                let (weight, bias) = stem(g, id);
                let mut y = Tensor::zeros(TensorShape::features(n, out_features));
                gemm(
                    n,
                    f,
                    out_features,
                    x.data(),
                    (f, 1),
                    &weight.data,
                    (1, f),
                    0.0,
                    y.data_mut(),
                );
                if let Some(b) = bias {
                    for row in y.data_mut().chunks_mut(out_features) {
                        row.iter_mut().zip(b).for_each(|(v, b)| *v += b);
                    }
                }
                y
            }
            &VertexKind::BatchNorm { channels } => {
                let s = x.shape();
                if s.channels() != channels {
                    return Err(mismatch(ctx(), format!("{channels} channels"), s));
                }
                let (n, plane) = (s.batch(), s.plane());
                let (gamma, beta, rm, rv) = bn_params(g, id);
                let (mean, var) = match mode {
                    Mode::Eval => (rm.to_vec(), rv.to_vec()),
                    Mode::Train => {
                        let m = (n * plane) as f64;
                        let mut mean = vec![0.0; channels];
                        let mut var = vec![0.0; channels];
                        for (c, mu) in mean.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for smp in 0..n {
                                let off = (smp * channels + c) * plane;
                                acc += x.data()[off..off + plane].iter().sum::<f64>();
                            }
                            *mu = acc / m;
                        }
                        for (c, vr) in var.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for smp in 0..n {
                                let off = (smp * channels + c) * plane;
                                acc += x.data()[off..off + plane]
                                    .iter()
                                    .map(|v| (v - mean[c]).powi(2))
                                    .sum::<f64>();
                            }
                            *vr = acc / m;
                        }
                        let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                        observed = Some(BnObservation {
                            vertex: id,
                            mean: mean.clone(),
                            var: var.iter().map(|v| v * unbiased).collect(),
                        });
                        (mean, var)
                    }
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xhat = vec![0.0; x.data().len()];
                let mut y = Tensor::zeros(s.clone());
                for smp in 0..n {
                    for c in 0..channels {
                        let off = (smp * channels + c) * plane;
                        let range = off..off + plane;
                        let out = &mut y.data_mut()[range.clone()];
                        for ((h, o), &xi) in xhat[range.clone()]
                            .iter_mut()
                            .zip(out)
                            .zip(&x.data()[range])
                        {
                            *h = (xi - mean[c]) * inv_std[c];
                            *o = gamma[c] * *h + beta[c];
                        }
                    }
                }
                aux = Aux::Bn { xhat, inv_std };
                y
            }
            VertexKind::Relu => {
                let data = x
                    .data()
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { 0.0 })
                    .collect();
                Tensor::new(x.shape().clone(), data)?
            }
            &VertexKind::MaxPool { kernel, stride } | &VertexKind::AvgPool { kernel, stride } => {
                let (n, c, h, w) = dims4(x.shape(), id)?;
                if h < kernel || w < kernel {
                    return Err(mismatch(ctx(), format!("spatial >= {kernel}"), x.shape()));
                }
                let geom = PoolGeom::new(c, h, w, kernel, stride);
                let mut y = Tensor::zeros(TensorShape::nchw(n, c, geom.ho, geom.wo));
                if matches!(v.kind, VertexKind::MaxPool { .. }) {
                    aux = Aux::MaxPool(kernels::max_pool(x.data(), n, &geom, y.data_mut()));
                } else {
                    kernels::avg_pool(x.data(), n, &geom, y.data_mut());
                }
                y
            }
            VertexKind::Flatten => {
                let (n, c, h, w) = dims4(x.shape(), id)?;
                Tensor::new(TensorShape::features(n, c * h * w), x.data().to_vec())?
            }
            VertexKind::Add | VertexKind::Mul => {
                let mut y = x.clone();
                for &p in &preds[1..] {
                    let o = pass.port(p);
                    if o.shape() != x.shape() {
                        return Err(mismatch(ctx(), x.shape(), o.shape()));
                    }
                    let add = v.kind == VertexKind::Add;
                    for (a, b) in y.data_mut().iter_mut().zip(o.data()) {
                        if add {
                            *a += b;
                        } else {
                            *a *= b;
                        }
                    }
                }
                y
            }
            VertexKind::Concat => {
                let first = x.shape();
                let mut channels = 0;
                for &p in preds {
                    let s = pass.port(p).shape();
                    if s.rank() != first.rank()
                        || s.batch() != first.batch()
                        || s.spatial() != first.spatial()
                    {
                        return Err(mismatch(ctx(), first, s));
                    }
                    channels += s.channels();
                }
                let out_shape = first.with_channels(channels);
                let mut data = Vec::with_capacity(out_shape.numel());
                for smp in 0..first.batch() {
                    for &p in preds {
                        let t = pass.port(p);
                        let per = t.sample_len();
                        data.extend_from_slice(&t.data()[smp * per..(smp + 1) * per]);
                    }
                }
                Tensor::new(out_shape, data)?
            }
            VertexKind::Unknown { name } => {
                return Err(AutogradError::UnsupportedOperator {
                    vertex: id,
                    name: name.clone(),
                })
            }
            VertexKind::Output => x.clone(),
        };
        let pos = pass.positions[&id];
        pass.values[pos] = Some(out);
        pass.aux[pos] = aux;
        pass.bn.extend(observed);
    }
    Ok(pass)
}

/// Per-vertex parameter gradients, laid out like the parameters. Running
/// statistics slots are always zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientStore {
    grads: HashMap<VertexId, ParameterSet>,
}

impl GradientStore {
    pub fn zeros_for(g: &ComputationGraph) -> Self {
        let grads = g
            .vertices()
            .iter()
            .filter_map(|v| v.params.as_ref().map(|p| (v.id, p.zeros_like())))
            .collect();
        Self { grads }
    }

    pub fn get(&self, id: VertexId) -> Option<&ParameterSet> {
        self.grads.get(&id)
    }

    pub fn get_mut(&mut self, id: VertexId) -> Option<&mut ParameterSet> {
        self.grads.get_mut(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VertexId, &ParameterSet)> {
        self.grads.iter()
    }

    /// Gradient as a flat vector aligned with `layout`.
    pub fn flatten(&self, layout: &ParamLayout) -> Vec<f64> {
        layout.gather_from(|id| self.grads.get(&id))
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, d: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
        None => *slot = Some(d),
    }
}

/// Mean loss over the batch (summed across outputs) and its parameter
/// gradients. `targets` pairs with [`ForwardPass::outputs`].
pub fn backward(
    g: &ComputationGraph,
    pass: &ForwardPass,
    targets: &[Target],
) -> Result<(f64, GradientStore), AutogradError> {
    if targets.len() != pass.outputs.len() {
        return Err(AutogradError::TargetMismatch(format!(
            "{} targets for {} outputs",
            targets.len(),
            pass.outputs.len()
        )));
    }
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; g.len()];
    let mut total = 0.0;
    for (&id, t) in pass.outputs.iter().zip(targets) {
        let (l, d) = t.evaluate(pass.value(id))?;
        total += l;
        accumulate(&mut grads[pass.positions[&id]], d);
    }
    let mut store = GradientStore::zeros_for(g);

    for v in g.topo_order().rev() {
        let id = v.id;
        let pos = pass.positions[&id];
        let Some(dy) = grads[pos].take() else {
            continue;
        };
        let preds = g.predecessors(id);
        let x = pass.port(preds[0]);
        let wants = |p: Port| matches!(p, Port::Vertex(_));
        let push = |grads: &mut Vec<Option<Vec<f64>>>, p: Port, d: Vec<f64>| {
            if let Port::Vertex(src) = p {
                accumulate(&mut grads[pass.positions[&src]], d);
            }
        };
        match &v.kind {
            &VertexKind::Conv2d {
                kernel,
                stride,
                padding,
                out_channels,
                ..
            } => {
                let (n, c, h, w) = dims4(x.shape(), id)?;
                let geom = ConvGeom::new(c, h, w, kernel, stride, padding);
                let plane = geom.out_plane();
                let (weight, _) = stem(g, id);
                let Some(ParameterSet::Stem {
                    weight: dw,
                    bias: db,
                }) = store.get_mut(id)
                else {
                    unreachable!()
                };
                let rows = geom.col_rows();
                let mut cols = vec![0.0; rows * plane];
                let mut dcols = vec![0.0; rows * plane];
                let need_dx = wants(preds[0]);
                let mut dx = if need_dx {
                    vec![0.0; x.data().len()]
                } else {
                    Vec::new()
                };
                let per_in = c * h * w;
                let per_out = out_channels * plane;
                for s in 0..n {
                    let dys = &dy[s * per_out..(s + 1) * per_out];
                    kernels::im2col(&x.data()[s * per_in..(s + 1) * per_in], &geom, &mut cols);
                    gemm(
                        out_channels,
                        plane,
                        rows,
                        dys,
                        (plane, 1),
                        &cols,
                        (1, plane),
                        1.0,
                        &mut dw.data,
                    );
                    if let Some(db) = db.as_mut() {
                        for (co, row) in dys.chunks(plane).enumerate() {
                            db[co] += row.iter().sum::<f64>();
                        }
                    }
                    if need_dx {
                        gemm(
                            rows,
                            out_channels,
                            plane,
                            &weight.data,
                            (1, rows),
                            dys,
                            (plane, 1),
                            0.0,
                            &mut dcols,
                        );
                        kernels::col2im(&dcols, &geom, &mut dx[s * per_in..(s + 1) * per_in]);
                    }
                }
                if need_dx {
                    push(&mut grads, preds[0], dx);
                }
            }
            &VertexKind::Linear {
                in_features,
                out_features,
                ..
            } => {
                let n = x.batch();
                let (weight, _) = stem(g, id);
                let Some(ParameterSet::Stem {
                    weight: dw,
                    bias: db,
                }) = store.get_mut(id)
                else {
                    unreachable!()
                };
                gemm(
                    out_features,
                    n,
                    in_features,
                    &dy,
                    (1, out_features),
                    x.data(),
                    (in_features, 1),
                    1.0,
                    &mut dw.data,
                );
                if let Some(db) = db.as_mut() {
                    for row in dy.chunks(out_features) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
                if wants(preds[0]) {
                    let mut dx = vec![0.0; n * in_features];
                    gemm(
                        n,
                        out_features,
                        in_features,
                        &dy,
                        (out_features, 1),
                        &weight.data,
                        (in_features, 1),
                        0.0,
                        &mut dx,
                    );
                    push(&mut grads, preds[0], dx);
                }
            }
            &VertexKind::BatchNorm { channels } => {
                let Aux::Bn { xhat, inv_std } = &pass.aux[pos] else {
                    unreachable!()
                };
                let s = x.shape();
                let (n, plane) = (s.batch(), s.plane());
                let (gamma, ..) = bn_params(g, id);
                let mut sum_dy = vec![0.0; channels];
                let mut sum_dy_xhat = vec![0.0; channels];
                for smp in 0..n {
                    for c in 0..channels {
                        let off = (smp * channels + c) * plane;
                        for i in off..off + plane {
                            sum_dy[c] += dy[i];
                            sum_dy_xhat[c] += dy[i] * xhat[i];
                        }
                    }
                }
                if let Some(ParameterSet::BatchNorm {
                    gamma: dg,
                    beta: dbeta,
                    ..
                }) = store.get_mut(id)
                {
                    dg.copy_from_slice(&sum_dy_xhat);
                    dbeta.copy_from_slice(&sum_dy);
                }
                if wants(preds[0]) {
                    let m = (n * plane) as f64;
                    let mut dx = vec![0.0; dy.len()];
                    for smp in 0..n {
                        for c in 0..channels {
                            let off = (smp * channels + c) * plane;
                            let k = gamma[c] * inv_std[c];
                            for i in off..off + plane {
                                dx[i] = match pass.mode {
                                    Mode::Eval => k * dy[i],
                                    Mode::Train => {
                                        k * (dy[i] - sum_dy[c] / m - xhat[i] * sum_dy_xhat[c] / m)
                                    }
                                };
                            }
                        }
                    }
                    push(&mut grads, preds[0], dx);
                }
            }
            VertexKind::Relu => {
                if wants(preds[0]) {
                    let y = pass.value(id).data();
                    let dx = dy
                        .iter()
                        .zip(y)
                        .map(|(d, &y)| if y > 0.0 { *d } else { 0.0 })
                        .collect();
                    push(&mut grads, preds[0], dx);
                }
            }
            &VertexKind::MaxPool { .. } => {
                if wants(preds[0]) {
                    let Aux::MaxPool(arg) = &pass.aux[pos] else {
                        unreachable!()
                    };
                    let mut dx = vec![0.0; x.data().len()];
                    for (d, &a) in dy.iter().zip(arg) {
                        dx[a] += d;
                    }
                    push(&mut grads, preds[0], dx);
                }
            }
            &VertexKind::AvgPool { kernel, stride } => {
                if wants(preds[0]) {
                    let (n, c, h, w) = dims4(x.shape(), id)?;
                    let geom = PoolGeom::new(c, h, w, kernel, stride);
                    let mut dx = vec![0.0; x.data().len()];
                    kernels::avg_pool_backward(&dy, n, &geom, &mut dx);
                    push(&mut grads, preds[0], dx);
                }
            }
            VertexKind::Flatten | VertexKind::Output => push(&mut grads, preds[0], dy),
            VertexKind::Add => {
                for &p in preds {
                    push(&mut grads, p, dy.clone());
                }
            }
            VertexKind::Mul => {
                for (i, &p) in preds.iter().enumerate() {
                    if !wants(p) {
                        continue;
                    }
                    let mut d = dy.clone();
                    for (j, &q) in preds.iter().enumerate() {
                        if i != j {
                            d.iter_mut()
                                .zip(pass.port(q).data())
                                .for_each(|(a, b)| *a *= b);
                        }
                    }
                    push(&mut grads, p, d);
                }
            }
            VertexKind::Concat => {
                let parts: Vec<usize> = preds.iter().map(|&p| pass.port(p).sample_len()).collect();
                let per: usize = parts.iter().sum();
                let n = x.batch();
                for (k, &p) in preds.iter().enumerate() {
                    if !wants(p) {
                        continue;
                    }
                    let start: usize = parts[..k].iter().sum();
                    let mut d = Vec::with_capacity(parts[k] * n);
                    for smp in 0..n {
                        let off = smp * per + start;
                        d.extend_from_slice(&dy[off..off + parts[k]]);
                    }
                    push(&mut grads, p, d);
                }
            }
            VertexKind::Unknown { name } => {
                return Err(AutogradError::UnsupportedOperator {
                    vertex: id,
                    name: name.clone(),
                })
            }
        }
    }
    Ok((total, store))
}

/// Forward in `mode` followed by [`backward`].
pub fn loss_and_gradient(
    g: &ComputationGraph,
    inputs: &[Tensor],
    targets: &[Target],
    mode: Mode,
) -> Result<(f64, GradientStore, ForwardPass), AutogradError> {
    let pass = forward(g, inputs, mode)?;
    let (loss, grads) = backward(g, &pass, targets)?;
    Ok((loss, grads, pass))
}

/// Loss only, without building gradients.
pub fn loss_only(
    g: &ComputationGraph,
    inputs: &[Tensor],
    targets: &[Target],
    mode: Mode,
) -> Result<f64, AutogradError> {
    let pass = forward(g, inputs, mode)?;
    if targets.len() != pass.outputs.len() {
        return Err(AutogradError::TargetMismatch(format!(
            "{} targets for {} outputs",
            targets.len(),
            pass.outputs.len()
        )));
    }
    let mut total = 0.0;
    for (out, t) in pass.outputs().into_iter().zip(targets) {
        total += t.evaluate(out)?.0;
    }
    Ok(total)
}

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use super::{infer_shapes, ComputationGraph, GraphError, VertexKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSummary {
    pub flops: u64,
    pub params: u64,
}

/// FLOPs (multiply-add counted as 2) and trainable parameter count.
///
/// Conv: `2·k²·Cin·Cout·Hout·Wout`, plus one add per output element for the
/// bias. Linear: `2·Fin·Fout` (+`Fout` with bias). Batch norm costs 2 per
/// element, ReLU and each joint operand 1, pooling `k²` per output element.
/// Everything scales with the batch dimension of the stored shapes. Running
/// statistics are not counted as parameters.
pub fn count_flops_params(g: &ComputationGraph) -> Result<CostSummary, GraphError> {
    let shaped;
    let g = if g.shapes_inferred() {
        g
    } else {
        shaped = infer_shapes(g)?;
        &shaped
    };

    let mut flops = 0u64;
    let mut params = 0u64;
    for v in g.vertices() {
        if let Some(p) = &v.params {
            params += p.trainable_len() as u64;
        }
        let out = g.shape(v.id)?;
        let numel = out.numel() as u64;
        flops += match v.kind {
            VertexKind::Conv2d {
                kernel,
                in_channels,
                bias,
                ..
            } => {
                let macs = (kernel * kernel * in_channels) as u64 * numel;
                2 * macs + if bias { numel } else { 0 }
            }
            VertexKind::Linear {
                in_features, bias, ..
            } => 2 * in_features as u64 * numel + if bias { numel } else { 0 },
            VertexKind::BatchNorm { .. } => 2 * numel,
            VertexKind::Relu => numel,
            VertexKind::MaxPool { kernel, .. } | VertexKind::AvgPool { kernel, .. } => {
                (kernel * kernel) as u64 * numel
            }
            VertexKind::Add | VertexKind::Mul => (g.predecessors(v.id).len() as u64 - 1) * numel,
            VertexKind::Flatten
            | VertexKind::Concat
            | VertexKind::Unknown { .. }
            | VertexKind::Output => 0,
        };
    }
    Ok(CostSummary { flops, params })
}

use super::{ComputationGraph, GraphError, Port, TensorShape, VertexKind};

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// Fills every vertex's output shape. Idempotent.
pub fn infer_shapes(g: &ComputationGraph) -> Result<ComputationGraph, GraphError> {
    let mut out = g.clone();
    let order: Vec<usize> = out.topo.clone();
    for pos in order {
        let id = out.vertices[pos].id;
        let operands: Vec<TensorShape> = out.preds[pos]
            .iter()
            .map(|&p| {
                out.port_shape(p).cloned().ok_or(match p {
                    Port::Vertex(src) => GraphError::MissingShape(src),
                    Port::Input(slot) => GraphError::DanglingInput(slot),
                })
            })
            .collect::<Result<_, _>>()?;
        let shape = vertex_shape(id, &out.vertices[pos].kind, &operands)?;
        out.vertices[pos].out_shape = Some(shape);
    }
    Ok(out)
}

fn vertex_shape(
    id: usize,
    kind: &VertexKind,
    operands: &[TensorShape],
) -> Result<TensorShape, GraphError> {
    let mismatch = |detail: String| GraphError::ShapeMismatch { vertex: id, detail };
    let x = &operands[0];
    match *kind {
        VertexKind::Conv2d {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
            ..
        } => {
            let (h, w) = x
                .spatial()
                .ok_or_else(|| mismatch(format!("conv expects rank-4 input, got {x}")))?;
            if x.channels() != in_channels {
                return Err(mismatch(format!(
                    "conv expects {in_channels} input channels, got {x}"
                )));
            }
            let ho = conv_out(h, kernel, stride, padding);
            let wo = conv_out(w, kernel, stride, padding);
            match (ho, wo) {
                (Some(ho), Some(wo)) => Ok(TensorShape::nchw(x.batch(), out_channels, ho, wo)),
                _ => Err(mismatch(format!("kernel {kernel} larger than input {x}"))),
            }
        }
        VertexKind::Linear {
            in_features,
            out_features,
            ..
        } => {
            if x.rank() != 2 || x.channels() != in_features {
                return Err(mismatch(format!(
                    "linear expects ({}, {in_features}), got {x}",
                    x.batch()
                )));
            }
            Ok(TensorShape::features(x.batch(), out_features))
        }
        VertexKind::BatchNorm { channels } => {
            if x.channels() != channels {
                return Err(mismatch(format!(
                    "batch norm over {channels} channels got {x}"
                )));
            }
            Ok(x.clone())
        }
        VertexKind::Relu | VertexKind::Output | VertexKind::Unknown { .. } => Ok(x.clone()),
        VertexKind::MaxPool { kernel, stride } | VertexKind::AvgPool { kernel, stride } => {
            let (h, w) = x
                .spatial()
                .ok_or_else(|| mismatch(format!("pooling expects rank-4 input, got {x}")))?;
            match (
                conv_out(h, kernel, stride, 0),
                conv_out(w, kernel, stride, 0),
            ) {
                (Some(ho), Some(wo)) => Ok(TensorShape::nchw(x.batch(), x.channels(), ho, wo)),
                _ => Err(mismatch(format!(
                    "pool window {kernel} larger than input {x}"
                ))),
            }
        }
        VertexKind::Flatten => {
            if x.rank() != 4 {
                return Err(GraphError::FlattenWithoutKnownSpatialDims(id));
            }
            Ok(TensorShape::features(x.batch(), x.numel() / x.batch()))
        }
        VertexKind::Add | VertexKind::Mul => {
            for other in &operands[1..] {
                if other != x {
                    return Err(GraphError::ShapeMismatchAtSDJoint {
                        vertex: id,
                        lhs: x.clone(),
                        rhs: other.clone(),
                    });
                }
            }
            Ok(x.clone())
        }
        VertexKind::Concat => {
            let mut channels = 0;
            for other in operands {
                let same_rest = other.rank() == x.rank()
                    && other.batch() == x.batch()
                    && other.dims()[2..] == x.dims()[2..];
                if !same_rest {
                    return Err(mismatch(format!("concat operands {x} and {other} differ")));
                }
                channels += other.channels();
            }
            Ok(x.with_channels(channels))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, Edge, GraphDocument, Vertex};

    fn conv(id: usize, cin: usize, cout: usize) -> Vertex {
        Vertex::new(
            id,
            format!("conv{id}"),
            VertexKind::Conv2d {
                kernel: 3,
                stride: 1,
                padding: 1,
                in_channels: cin,
                out_channels: cout,
                bias: true,
            },
        )
    }

    #[test]
    fn conv_arithmetic() {
        let doc = GraphDocument {
            inputs: vec![TensorShape::nchw(1, 3, 8, 8)],
            vertices: vec![conv(0, 3, 16)],
            edges: vec![Edge::from_input(0, 0)],
        };
        let g = infer_shapes(&build_graph(doc).unwrap()).unwrap();
        assert_eq!(g.shape(0).unwrap(), &TensorShape::nchw(1, 16, 8, 8));
    }

    #[test]
    fn concat_sums_channels_and_add_checks_shapes() {
        let mk = |c2: usize, joint: VertexKind| GraphDocument {
            inputs: vec![TensorShape::nchw(1, 3, 8, 8)],
            vertices: vec![conv(0, 3, 16), conv(1, 3, c2), Vertex::new(2, "j", joint)],
            edges: vec![
                Edge::from_input(0, 0),
                Edge::from_input(0, 1),
                Edge::new(0, 2),
                Edge::new(1, 2),
            ],
        };
        let g = infer_shapes(&build_graph(mk(16, VertexKind::Concat)).unwrap()).unwrap();
        assert_eq!(g.shape(2).unwrap(), &TensorShape::nchw(1, 32, 8, 8));

        let err = infer_shapes(&build_graph(mk(8, VertexKind::Add)).unwrap()).unwrap_err();
        assert!(matches!(
            err,
            GraphError::ShapeMismatchAtSDJoint { vertex: 2, .. }
        ));
    }

    #[test]
    fn flatten_needs_spatial_input() {
        let doc = GraphDocument {
            inputs: vec![TensorShape::features(1, 4)],
            vertices: vec![Vertex::new(0, "flat", VertexKind::Flatten)],
            edges: vec![Edge::from_input(0, 0)],
        };
        let err = infer_shapes(&build_graph(doc).unwrap()).unwrap_err();
        assert!(matches!(err, GraphError::FlattenWithoutKnownSpatialDims(0)));
    }
}

//! Fixed test architectures.

use super::{
    build_graph, infer_shapes, ComputationGraph, Edge, GraphDocument, Port, TensorShape, Vertex,
    VertexKind,
};

struct Net {
    doc: GraphDocument,
}

impl Net {
    fn new(inputs: Vec<TensorShape>) -> Self {
        Self {
            doc: GraphDocument {
                inputs,
                vertices: Vec::new(),
                edges: Vec::new(),
            },
        }
    }

    fn add(&mut self, name: &str, kind: VertexKind, operands: &[Port]) -> Port {
        let id = self.doc.vertices.len();
        self.doc.vertices.push(Vertex::new(id, name, kind));
        for &src in operands {
            self.doc.edges.push(Edge { src, dst: id });
        }
        Port::Vertex(id)
    }

    fn conv(&mut self, name: &str, x: Port, cin: usize, cout: usize, kernel: usize) -> Port {
        let kind = VertexKind::Conv2d {
            kernel,
            stride: 1,
            padding: kernel / 2,
            in_channels: cin,
            out_channels: cout,
            bias: true,
        };
        self.add(name, kind, &[x])
    }

    fn bn(&mut self, name: &str, x: Port, channels: usize) -> Port {
        self.add(name, VertexKind::BatchNorm { channels }, &[x])
    }

    fn relu(&mut self, name: &str, x: Port) -> Port {
        self.add(name, VertexKind::Relu, &[x])
    }

    fn linear(&mut self, name: &str, x: Port, fin: usize, fout: usize) -> Port {
        let kind = VertexKind::Linear {
            in_features: fin,
            out_features: fout,
            bias: true,
        };
        self.add(name, kind, &[x])
    }

    fn finish(self) -> ComputationGraph {
        let g = build_graph(self.doc).expect("builder graph is valid");
        infer_shapes(&g).expect("builder graph shapes are consistent")
    }
}

/// Small network covering every dependency pattern of the ZIG partition:
/// an additive coupling of two convolutions, paired batch norms, a batch
/// norm over a channel concatenation, and an output-adjacent classifier.
///
/// ```text
/// x(1,3,16,16) ─ conv1 ─ bn1 ─ relu ───────────────────────┐
///             ├─ conv2 ─┐                                  concat ─ bn4 ─ avgpool ─ flatten ─ linear1 ─ relu2 ─ linear2 ─ out
///             └─ conv3 ─ add1 ─┬─ bn2 ─┐                   │
///                              └─ bn3 ─ add2 ──────────────┘
/// ```
pub fn demo_net() -> ComputationGraph {
    let mut n = Net::new(vec![TensorShape::nchw(1, 3, 16, 16)]);
    let x = Port::Input(0);
    let c1 = n.conv("conv1", x, 3, 16, 3);
    let b1 = n.bn("bn1", c1, 16);
    let a = n.relu("relu1", b1);
    let c2 = n.conv("conv2", x, 3, 16, 3);
    let c3 = n.conv("conv3", x, 3, 16, 3);
    let y = n.add("add1", VertexKind::Add, &[c2, c3]);
    let b2 = n.bn("bn2", y, 16);
    let b3 = n.bn("bn3", y, 16);
    let w = n.add("add2", VertexKind::Add, &[b2, b3]);
    let cat = n.add("concat", VertexKind::Concat, &[a, w]);
    let b4 = n.bn("bn4", cat, 32);
    let pool = n.add(
        "avgpool",
        VertexKind::AvgPool {
            kernel: 2,
            stride: 2,
        },
        &[b4],
    );
    let flat = n.add("flatten", VertexKind::Flatten, &[pool]);
    let l1 = n.linear("linear1", flat, 32 * 8 * 8, 32);
    let r2 = n.relu("relu2", l1);
    let l2 = n.linear("linear2", r2, 32, 10);
    n.add("output", VertexKind::Output, &[l2]);
    n.finish()
}

/// Stem block followed by a residual block whose main path and 1×1 projection
/// shortcut meet in one `Add`.
pub fn residual_block_net() -> ComputationGraph {
    let mut n = Net::new(vec![TensorShape::nchw(1, 3, 8, 8)]);
    let x = Port::Input(0);
    let c0 = n.conv("conv_in", x, 3, 8, 3);
    let b0 = n.bn("bn_in", c0, 8);
    let h = n.relu("relu_in", b0);
    let ca = n.conv("conv_a", h, 8, 16, 3);
    let ba = n.bn("bn_a", ca, 16);
    let ra = n.relu("relu_a", ba);
    let cb = n.conv("conv_b", ra, 16, 16, 3);
    let bb = n.bn("bn_b", cb, 16);
    let cs = n.conv("conv_skip", h, 8, 16, 1);
    let bs = n.bn("bn_skip", cs, 16);
    let sum = n.add("add", VertexKind::Add, &[bb, bs]);
    let r = n.relu("relu_out", sum);
    let pool = n.add(
        "maxpool",
        VertexKind::MaxPool {
            kernel: 2,
            stride: 2,
        },
        &[r],
    );
    let flat = n.add("flatten", VertexKind::Flatten, &[pool]);
    let fc = n.linear("fc", flat, 16 * 4 * 4, 10);
    n.add("output", VertexKind::Output, &[fc]);
    n.finish()
}

/// Two stacked encoder/decoder blocks at constant resolution. Skip paths are
/// channel concatenations followed by batch norm; the second block consumes
/// a second graph input and contains a multiplicative gate.
pub fn stacked_unets_mini() -> ComputationGraph {
    let mut n = Net::new(vec![
        TensorShape::nchw(1, 3, 8, 8),
        TensorShape::nchw(1, 3, 8, 8),
    ]);

    // first block
    let c = n.conv("u1_enc1", Port::Input(0), 3, 8, 3);
    let b = n.bn("u1_enc1_bn", c, 8);
    let e1 = n.relu("u1_enc1_relu", b);
    let c = n.conv("u1_enc2", e1, 8, 8, 3);
    let b = n.bn("u1_enc2_bn", c, 8);
    let e2 = n.relu("u1_enc2_relu", b);
    let cat = n.add("u1_cat", VertexKind::Concat, &[e1, e2]);
    let b = n.bn("u1_dec_bn_in", cat, 16);
    let r = n.relu("u1_dec_relu_in", b);
    let c = n.conv("u1_dec", r, 16, 8, 3);
    let b = n.bn("u1_dec_bn", c, 8);
    let u1 = n.relu("u1_dec_relu", b);

    // side input
    let c = n.conv("side", Port::Input(1), 3, 8, 3);
    let b = n.bn("side_bn", c, 8);
    let side = n.relu("side_relu", b);

    // second block
    let cat = n.add("u2_cat_in", VertexKind::Concat, &[u1, side]);
    let b = n.bn("u2_enc1_bn_in", cat, 16);
    let r = n.relu("u2_enc1_relu_in", b);
    let c = n.conv("u2_enc1", r, 16, 8, 3);
    let b = n.bn("u2_enc1_bn", c, 8);
    let f1 = n.relu("u2_enc1_relu", b);
    let c = n.conv("u2_enc2", f1, 8, 8, 3);
    let b = n.bn("u2_enc2_bn", c, 8);
    let gate = n.conv("u2_gate", f1, 8, 8, 1);
    let m = n.add("u2_mul", VertexKind::Mul, &[b, gate]);
    let f2 = n.relu("u2_enc2_relu", m);
    let cat = n.add("u2_cat", VertexKind::Concat, &[f1, f2]);
    let b = n.bn("u2_dec_bn", cat, 16);
    let r = n.relu("u2_dec_relu", b);
    let head = n.conv("head", r, 16, 2, 1);
    n.add("output", VertexKind::Output, &[head]);
    n.finish()
}

/// Chain of `blocks` repetitions of `linear(4→4) → batch norm → relu`, with
/// a final output vertex. Has `3·blocks + 1` vertices.
pub fn chain_net(blocks: usize) -> ComputationGraph {
    let mut n = Net::new(vec![TensorShape::features(1, 4)]);
    let mut x = Port::Input(0);
    for i in 0..blocks {
        x = n.linear(&format!("fc{i}"), x, 4, 4);
        x = n.bn(&format!("bn{i}"), x, 4);
        x = n.relu(&format!("relu{i}"), x);
    }
    n.add("output", VertexKind::Output, &[x]);
    n.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Category;

    fn count(g: &ComputationGraph, kind: &VertexKind) -> usize {
        g.vertices().iter().filter(|v| &v.kind == kind).count()
    }

    #[test]
    fn demo_net_shape() {
        let g = demo_net();
        assert_eq!(g.len(), 17);
        assert_eq!(g.shape(9).unwrap(), &TensorShape::nchw(1, 32, 16, 16));
        assert_eq!(g.shape(12).unwrap(), &TensorShape::features(1, 2048));
        assert_eq!(g.shape(16).unwrap(), &TensorShape::features(1, 10));
    }

    #[test]
    fn residual_has_one_add() {
        assert_eq!(count(&residual_block_net(), &VertexKind::Add), 1);
    }

    #[test]
    fn unets_have_concats_and_two_inputs() {
        let g = stacked_unets_mini();
        assert!(count(&g, &VertexKind::Concat) >= 2);
        assert_eq!(g.inputs().len(), 2);
        assert!(g
            .vertices()
            .iter()
            .any(|v| v.category() == Category::SdJoint));
    }

    #[test]
    fn chain_length() {
        assert_eq!(chain_net(10).len(), 31);
    }
}

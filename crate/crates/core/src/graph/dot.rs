use std::fmt::Write;

use rustc_hash::FxHashMap as HashMap;

use super::{ComputationGraph, Port, VertexId};

const PALETTE: &[&str] = &[
    "#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3", "#fdb462", "#b3de69", "#fccde5",
    "#d9d9d9", "#bc80bd", "#ccebc5", "#ffed6f",
];

/// Renders the graph as a DOT digraph. With `coloring`, every vertex mapped
/// to the same label gets the same fill color.
pub fn export_dot(g: &ComputationGraph, coloring: Option<&HashMap<VertexId, usize>>) -> String {
    let mut out = String::new();
    writeln!(out, "digraph G {{").unwrap();
    writeln!(out, "  rankdir=TB;").unwrap();
    writeln!(out, "  node [shape=box, fontname=\"Helvetica\"];").unwrap();
    for (slot, shape) in g.inputs().iter().enumerate() {
        writeln!(
            out,
            "  in{slot} [shape=ellipse, label=\"input {slot}\\n{shape}\"];"
        )
        .unwrap();
    }
    for v in g.topo_order() {
        let mut label = format!("{}\\n{}", v.display_name(), v.kind.label());
        if let Some(s) = &v.out_shape {
            write!(label, "\\n{s}").unwrap();
        }
        let color = coloring.and_then(|c| c.get(&v.id));
        match color {
            Some(&c) => writeln!(
                out,
                "  v{} [label=\"{}\", style=filled, fillcolor=\"{}\"];",
                v.id,
                label,
                PALETTE[c % PALETTE.len()]
            ),
            None => writeln!(out, "  v{} [label=\"{}\"];", v.id, label),
        }
        .unwrap();
    }
    for e in g.edges() {
        match e.src {
            Port::Input(slot) => writeln!(out, "  in{slot} -> v{};", e.dst),
            Port::Vertex(src) => writeln!(out, "  v{src} -> v{};", e.dst),
        }
        .unwrap();
    }
    out.push_str("}\n");
    out
}

use super::*;
use crate::graph::{
    build_graph, chain_net, demo_net, infer_shapes, residual_block_net, stacked_unets_mini, Edge,
    GraphDocument, Port, TensorShape, Vertex, VertexKind,
};

fn s(vertex: VertexId, role: TensorRole, at: usize) -> ParamSlice {
    ParamSlice::new(vertex, role, at..at + 1)
}

#[test]
fn demo_net_golden_groups() {
    use TensorRole::*;
    let g = demo_net();
    let p = partition(&g).unwrap();
    // ids: 0 conv1, 1 bn1, 3 conv2, 4 conv3, 6 bn2, 7 bn3, 10 bn4, 13 linear1, 15 linear2
    assert_eq!(p.zigs.len(), 16 + 16 + 32);
    for j in 0..16 {
        let z = &p.zigs[j];
        assert_eq!(z.index, j);
        assert_eq!(
            z.slices,
            vec![
                s(0, FilterRow, j),
                s(0, Bias, j),
                s(1, BnGamma, j),
                s(1, BnBeta, j),
                s(10, BnGamma, j),
                s(10, BnBeta, j),
            ]
        );
        let z = &p.zigs[16 + j];
        assert_eq!(
            z.slices,
            vec![
                s(3, FilterRow, j),
                s(3, Bias, j),
                s(4, FilterRow, j),
                s(4, Bias, j),
                s(6, BnGamma, j),
                s(6, BnBeta, j),
                s(7, BnGamma, j),
                s(7, BnBeta, j),
                s(10, BnGamma, 16 + j),
                s(10, BnBeta, 16 + j),
            ]
        );
    }
    for j in 0..32 {
        assert_eq!(
            p.zigs[32 + j].slices,
            vec![s(13, FilterRow, j), s(13, Bias, j)]
        );
    }
    assert_eq!(p.excluded.len(), 1);
    let e = &p.excluded[0];
    assert_eq!(e.reason, ExclusionReason::OutputAdjacent);
    assert_eq!(
        e.slices,
        vec![
            ParamSlice::new(15, FilterRow, 0..10),
            ParamSlice::new(15, Bias, 0..10)
        ]
    );
    assert_eq!(p.components[e.component].stem_ids, vec![15]);
}

fn names(g: &ComputationGraph, ids: &[VertexId]) -> Vec<String> {
    ids.iter().map(|&i| g.vertex(i).name.clone()).collect()
}

fn sorted_names(g: &ComputationGraph, ids: &[VertexId]) -> Vec<String> {
    let mut n = names(g, ids);
    n.sort();
    n
}

fn conv(id: usize, name: &str, cin: usize, cout: usize) -> Vertex {
    Vertex::new(
        id,
        name,
        VertexKind::Conv2d {
            kernel: 3,
            stride: 1,
            padding: 1,
            in_channels: cin,
            out_channels: cout,
            bias: false,
        },
    )
}

fn shaped(doc: GraphDocument) -> ComputationGraph {
    infer_shapes(&build_graph(doc).unwrap()).unwrap()
}

#[test]
fn demo_net_seeds() {
    let g = demo_net();
    let seeds = seed_components(&g);
    let got: Vec<Vec<String>> = seeds
        .iter()
        .map(|c| sorted_names(&g, &c.vertex_ids))
        .collect();
    assert_eq!(
        got,
        vec![
            vec!["bn1", "relu1"],
            vec!["add1", "add2", "bn2", "bn3"],
            vec!["avgpool", "bn4", "flatten"],
            vec!["relu2"],
        ]
    );
}

#[test]
fn conv_chain_has_no_seeds_and_singleton_stems() {
    let g = shaped(GraphDocument {
        inputs: vec![TensorShape::nchw(1, 3, 4, 4)],
        vertices: vec![
            conv(0, "a", 3, 4),
            conv(1, "b", 4, 4),
            Vertex::new(2, "out", VertexKind::Output),
        ],
        edges: vec![Edge::from_input(0, 0), Edge::new(0, 1), Edge::new(1, 2)],
    });
    let seeds = seed_components(&g);
    assert!(seeds.is_empty());
    let grown = grow_components(&g, seeds);
    assert_eq!(grown.len(), 2);
    assert!(grown.iter().all(|c| c.stem_ids.len() == 1));

    let p = partition(&g).unwrap();
    assert_eq!(p.zigs.len(), 4, "first conv is prunable");
    assert_eq!(p.excluded.len(), 1);
    assert_eq!(p.excluded[0].reason, ExclusionReason::OutputAdjacent);
}

#[test]
fn unknown_vertex_seeds_flagged_component() {
    let g = shaped(GraphDocument {
        inputs: vec![TensorShape::nchw(1, 3, 4, 4)],
        vertices: vec![
            conv(0, "a", 3, 4),
            Vertex::new(
                1,
                "mystery",
                VertexKind::Unknown {
                    name: "swish".into(),
                },
            ),
            conv(2, "b", 4, 4),
            Vertex::new(3, "out", VertexKind::Output),
        ],
        edges: vec![
            Edge::from_input(0, 0),
            Edge::new(0, 1),
            Edge::new(1, 2),
            Edge::new(2, 3),
        ],
    });
    let seeds = seed_components(&g);
    assert_eq!(seeds.len(), 1);
    assert!(seeds[0].contains_unknown);
    let p = partition(&g).unwrap();
    assert!(p.zigs.is_empty());
    let reasons: Vec<_> = p.excluded.iter().map(|e| e.reason).collect();
    assert_eq!(
        reasons,
        vec![
            ExclusionReason::ContainsUnknown,
            ExclusionReason::OutputAdjacent
        ]
    );
    assert_eq!(names(&g, &p.components[0].stem_ids), vec!["a"]);
}

#[test]
fn demo_net_growth_absorbs_stems() {
    let g = demo_net();
    let grown = grow_components(&g, seed_components(&g));
    let by_names: Vec<Vec<String>> = grown
        .iter()
        .map(|c| sorted_names(&g, &c.stem_ids))
        .collect();
    assert!(by_names.contains(&vec!["conv1".to_string()]));
    assert!(by_names.contains(&vec!["conv2".to_string(), "conv3".to_string()]));
    assert!(by_names.contains(&vec!["linear1".to_string()]));
    assert!(by_names.contains(&vec!["linear2".to_string()]));
}

#[test]
fn merge_unions_overlaps_and_ors_flags() {
    let g = demo_net();
    let a = DependencyComponent {
        vertex_ids: vec![3, 5],
        stem_ids: vec![3],
        accessory_ids: vec![5],
        contains_unknown: true,
        adjacent_to_output: false,
    };
    let b = DependencyComponent {
        vertex_ids: vec![3, 6],
        stem_ids: vec![3],
        accessory_ids: vec![6],
        contains_unknown: false,
        adjacent_to_output: false,
    };
    let c = DependencyComponent {
        vertex_ids: vec![13],
        stem_ids: vec![13],
        ..Default::default()
    };
    let merged = merge_components(&g, vec![a, b, c]);
    assert_eq!(merged.len(), 2);
    assert_eq!(
        sorted_names(&g, &merged[0].vertex_ids),
        vec!["add1", "bn2", "conv2"]
    );
    assert!(merged[0].contains_unknown);
    assert!(!merged[1].contains_unknown);
}

#[test]
fn single_linear_to_output_is_excluded() {
    let g = shaped(GraphDocument {
        inputs: vec![TensorShape::features(1, 4)],
        vertices: vec![
            Vertex::new(
                0,
                "fc",
                VertexKind::Linear {
                    in_features: 4,
                    out_features: 2,
                    bias: false,
                },
            ),
            Vertex::new(1, "out", VertexKind::Output),
        ],
        edges: vec![Edge::from_input(0, 0), Edge::new(0, 1)],
    });
    let p = partition(&g).unwrap();
    assert!(p.zigs.is_empty());
    assert_eq!(p.excluded.len(), 1);
    assert_eq!(p.excluded[0].reason, ExclusionReason::OutputAdjacent);
}

#[test]
fn residual_convs_share_component() {
    let g = residual_block_net();
    let p = partition(&g).unwrap();
    let comp = p
        .components
        .iter()
        .find(|c| c.stem_ids.len() > 1)
        .expect("coupled component");
    assert_eq!(
        sorted_names(&g, &comp.stem_ids),
        vec!["conv_b", "conv_skip"]
    );
    // relu_in feeds both the main path and the projection, it stays with conv_in
    let first = &p.components[0];
    assert_eq!(sorted_names(&g, &first.stem_ids), vec!["conv_in"]);
}

#[test]
fn unets_concat_consumers_split_across_producers() {
    let g = stacked_unets_mini();
    let p = partition(&g).unwrap();
    let stems = p.stem_components();
    for v in g.vertices() {
        if v.kind != VertexKind::Concat {
            continue;
        }
        let consumer_bn = g
            .successors(v.id)
            .find(|&s| matches!(g.vertex(s).kind, VertexKind::BatchNorm { .. }))
            .expect("concat feeds a batch norm");
        let producer_components: Vec<usize> = g
            .predecessors(v.id)
            .iter()
            .map(|&port| {
                // walk back through accessories to the producing stem
                let mut cur = port;
                loop {
                    let Port::Vertex(id) = cur else {
                        panic!("input")
                    };
                    if let Some(&c) = stems.get(&id) {
                        break c;
                    }
                    cur = g.predecessors(id)[0];
                }
            })
            .collect();
        let holders: Vec<usize> = p
            .zigs
            .iter()
            .filter(|z| z.slices.iter().any(|s| s.vertex == consumer_bn))
            .map(|z| z.component)
            .collect();
        for c in &producer_components {
            assert!(
                holders.contains(c),
                "bn {consumer_bn} not split into component {c}"
            );
        }
    }
}

fn coverage(g: &ComputationGraph, p: &PartitionResult) -> usize {
    let zig: usize = p
        .zigs
        .iter()
        .flat_map(|z| &z.slices)
        .map(|s| s.numel(g))
        .sum();
    let excl: usize = p
        .excluded
        .iter()
        .flat_map(|e| &e.slices)
        .map(|s| s.numel(g))
        .sum();
    zig + excl
}

#[test]
fn every_parameter_is_covered_once() {
    for g in [
        demo_net(),
        residual_block_net(),
        stacked_unets_mini(),
        chain_net(5),
    ] {
        let p = partition(&g).unwrap();
        let total: usize = g
            .vertices()
            .iter()
            .filter_map(|v| v.params.as_ref())
            .map(|p| p.trainable_len())
            .sum();
        assert_eq!(coverage(&g, &p), total);

        let mut seen = std::collections::HashSet::new();
        for s in p.zigs.iter().flat_map(|z| &z.slices) {
            for i in s.range.clone() {
                assert!(seen.insert((s.vertex, s.role, i)), "overlap at {s:?}");
            }
        }
    }
}

#[test]
fn stems_in_one_component_must_match_widths() {
    let g = demo_net();
    let mut comps = merge_components(&g, grow_components(&g, seed_components(&g)));
    // graft linear1 into the conv2/conv3 component
    comps[1].stem_ids.push(13);
    comps[1].vertex_ids.push(13);
    let err = form_zigs(&g, comps).unwrap_err();
    assert!(matches!(
        err,
        PartitionError::InconsistentStemWidths { component: 1, .. }
    ));
}

#[test]
fn relabeling_ids_does_not_change_partition() {
    let g = demo_net();
    let base = partition(&g).unwrap();
    let mut doc = g.to_document();
    let relabel = |id: usize| 1000 - 7 * id;
    for v in &mut doc.vertices {
        v.id = relabel(v.id);
    }
    for e in &mut doc.edges {
        e.dst = relabel(e.dst);
        if let Port::Vertex(s) = &mut e.src {
            *s = relabel(*s);
        }
    }
    doc.vertices.reverse();
    let g2 = build_graph(doc).unwrap();
    let mut p2 = partition(&g2).unwrap();
    let back = |id: usize| (1000 - id) / 7;
    for c in &mut p2.components {
        for v in c
            .vertex_ids
            .iter_mut()
            .chain(c.stem_ids.iter_mut())
            .chain(c.accessory_ids.iter_mut())
        {
            *v = back(*v);
        }
    }
    for s in p2
        .zigs
        .iter_mut()
        .flat_map(|z| z.slices.iter_mut())
        .chain(p2.excluded.iter_mut().flat_map(|e| e.slices.iter_mut()))
    {
        s.vertex = back(s.vertex);
    }
    assert_eq!(base, p2);
}

#[test]
fn partition_json_roundtrip() {
    let p = partition(&demo_net()).unwrap();
    assert_eq!(PartitionResult::from_json(&p.to_json()).unwrap(), p);
}

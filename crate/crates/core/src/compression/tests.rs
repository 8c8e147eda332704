use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{
    demo_net, init_parameters, residual_block_net, stacked_unets_mini, TensorShape,
};
use crate::partition::partition;

fn randomized(mut g: ComputationGraph, seed: u64) -> ComputationGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_parameters(&mut g, &mut rng);
    let ids: Vec<_> = g.vertices().iter().map(|v| v.id).collect();
    for id in ids {
        if let Some(ParameterSet::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
        }) = g.params_mut(id)
        {
            for v in gamma.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
            for v in beta.iter_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
            for v in running_mean.iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            for v in running_var.iter_mut() {
                *v = rng.random_range(0.5..1.5);
            }
        }
    }
    g
}

fn component_of(p: &PartitionResult, g: &ComputationGraph, name: &str) -> usize {
    let id = g.vertices().iter().find(|v| v.name == name).unwrap().id;
    p.stem_components()[&id]
}

fn zig_index(p: &PartitionResult, component: usize, group: usize) -> usize {
    p.zigs
        .iter()
        .position(|z| z.component == component && z.index == group)
        .unwrap()
}

#[test]
fn demo_net_conv1_groups_remove_every_affiliated_slice() {
    let g = randomized(demo_net(), 1);
    let p = partition(&g).unwrap();
    let c1 = component_of(&p, &g, "conv1");
    let mask = PruneMask::from_zeroed(&p, &[zig_index(&p, c1, 2), zig_index(&p, c1, 3)]).unwrap();
    let mut z = g.clone();
    zero_masked_groups(&mut z, &p, &mask);
    assert_eq!(detect_zero_groups(&z, &p).unwrap(), mask);

    let maps = build_channel_maps(&z, &p, &mask).unwrap();
    let kept16: Vec<usize> = (0..16).filter(|c| *c != 2 && *c != 3).collect();
    assert_eq!(maps.vertex(0), kept16.as_slice());
    let mut kept32 = kept16.clone();
    kept32.extend(16..32);
    assert_eq!(maps.vertex(9), kept32.as_slice());
    // flatten blocks of 8·8 features
    let flat = maps.vertex(12);
    assert_eq!(flat.len(), 30 * 64);
    assert!(!flat.contains(&(2 * 64)) && !flat.contains(&(3 * 64 + 63)));
    assert!(flat.contains(&(4 * 64)));

    let (c, report) = compress(&z, &p).unwrap();
    assert!(matches!(
        c.vertex(0).kind,
        VertexKind::Conv2d {
            out_channels: 14,
            ..
        }
    ));
    assert!(matches!(
        c.vertex(1).kind,
        VertexKind::BatchNorm { channels: 14 }
    ));
    assert!(matches!(
        c.vertex(10).kind,
        VertexKind::BatchNorm { channels: 30 }
    ));
    assert!(matches!(
        c.vertex(13).kind,
        VertexKind::Linear {
            in_features: 1920,
            out_features: 32,
            ..
        }
    ));
    // untouched convs
    assert_eq!(c.vertex(3), z.vertex(3));
    assert_eq!(report.removed_groups[&c1], vec![2, 3]);
    assert_eq!(
        report.params_before - report.params_after,
        2 * (28 + 2 + 2) + 2 * 64 * 32
    );

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let eq = verify_equivalence(&z, &c, 3, 2, 1e-9, &mut rng).unwrap();
    assert!(eq.passed, "{eq:?}");
}

#[test]
fn empty_mask_is_identity() {
    for g in [demo_net(), residual_block_net(), stacked_unets_mini()] {
        let g = randomized(g, 2);
        let p = partition(&g).unwrap();
        let mask = detect_zero_groups(&g, &p).unwrap();
        assert!(mask.is_empty());
        let (c, r) = compress(&g, &p).unwrap();
        assert_eq!(c, g);
        assert_eq!(r.flops_before, r.flops_after);
        assert!(r.removed_groups.is_empty());
    }
}

#[test]
fn half_of_every_component_matches_closed_form_count() {
    let g = randomized(demo_net(), 3);
    let p = partition(&g).unwrap();
    let zeroed: Vec<usize> = (0..p.zigs.len())
        .filter(|&i| p.zigs[i].index % 2 == 1)
        .collect();
    let mask = PruneMask::from_zeroed(&p, &zeroed).unwrap();
    let (c, r) = compress_with(&g, &p, &mask).unwrap();
    // conv1 8×27+8, bn1 16, conv2/conv3 8×27+8 each, bn2/bn3 16 each,
    // bn4 2×16, linear1 16×1024+16, linear2 10×16+10
    assert_eq!(
        r.params_after,
        224 + 16 + 224 + 224 + 16 + 16 + 32 + 16400 + 170
    );
    assert_eq!(count_flops_params(&c).unwrap().params, r.params_after);
    assert!(r.flops_ratio() < 0.55);
}

#[test]
fn pruning_a_nonzero_group_changes_outputs() {
    let g = randomized(demo_net(), 4);
    let p = partition(&g).unwrap();
    let c1 = component_of(&p, &g, "conv1");
    let mask = PruneMask::from_zeroed(&p, &[zig_index(&p, c1, 0)]).unwrap();
    let (c, _) = compress_with(&g, &p, &mask).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eq = verify_equivalence(&g, &c, 2, 2, 1e-9, &mut rng).unwrap();
    assert!(!eq.passed);
    assert!(eq.max_abs_diff > 1e-6);
}

#[test]
fn a_tiny_surviving_weight_keeps_its_group() {
    let g = randomized(demo_net(), 6);
    let p = partition(&g).unwrap();
    let c1 = component_of(&p, &g, "conv1");
    let (a, b) = (zig_index(&p, c1, 2), zig_index(&p, c1, 5));
    let mut z = g.clone();
    zero_masked_groups(&mut z, &p, &PruneMask::from_zeroed(&p, &[a, b]).unwrap());
    if let Some(ParameterSet::Stem { weight, .. }) = z.params_mut(0) {
        weight.row_mut(5)[0] = 1e-30;
    }
    let found = detect_zero_groups(&z, &p).unwrap();
    assert_eq!(found.zeroed(), vec![a]);
}

#[test]
fn corrupting_a_surviving_weight_breaks_equivalence() {
    let g = randomized(demo_net(), 7);
    let p = partition(&g).unwrap();
    let c1 = component_of(&p, &g, "conv1");
    let mut z = g.clone();
    zero_masked_groups(
        &mut z,
        &p,
        &PruneMask::from_zeroed(&p, &[zig_index(&p, c1, 1)]).unwrap(),
    );
    let (mut c, _) = compress(&z, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    assert!(
        verify_equivalence(&z, &c, 3, 2, 1e-9, &mut rng)
            .unwrap()
            .passed
    );
    if let Some(ParameterSet::Stem { weight, .. }) = c.params_mut(0) {
        weight.row_mut(0)[0] += 1e-6;
    }
    let eq = verify_equivalence(&z, &c, 3, 2, 1e-9, &mut rng).unwrap();
    assert!(!eq.passed, "{}", eq.max_abs_diff);
}

#[test]
fn removing_a_whole_component_is_rejected() {
    let g = demo_net();
    let p = partition(&g).unwrap();
    let c1 = component_of(&p, &g, "conv1");
    let all = p.groups_of(c1);
    assert!(matches!(
        PruneMask::from_zeroed(&p, &all),
        Err(CompressionError::AllGroupsZeroInComponent { component }) if component == c1
    ));
}

#[test]
fn unets_concat_maps_are_offset_unions() {
    let g = randomized(stacked_unets_mini(), 6);
    let p = partition(&g).unwrap();
    let e1 = component_of(&p, &g, "u1_enc1");
    let e2 = component_of(&p, &g, "u1_enc2");
    let mask = PruneMask::from_zeroed(
        &p,
        &[
            zig_index(&p, e1, 1),
            zig_index(&p, e2, 0),
            zig_index(&p, e2, 7),
        ],
    )
    .unwrap();
    let maps = build_channel_maps(&g, &p, &mask).unwrap();
    let cat = g.vertices().iter().find(|v| v.name == "u1_cat").unwrap().id;
    let expect: Vec<usize> = [0].into_iter().chain(2..8).chain(9..15).collect();
    assert_eq!(maps.vertex(cat), expect.as_slice());
}

#[test]
fn report_json_roundtrip() {
    let g = randomized(residual_block_net(), 7);
    let p = partition(&g).unwrap();
    let mask = PruneMask::from_zeroed(&p, &[0, 1]).unwrap();
    let (_, r) = compress_with(&g, &p, &mask).unwrap();
    let back: CompressionReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}

fn random_mask(p: &PartitionResult, rng: &mut ChaCha8Rng, rate: f64) -> PruneMask {
    let mut zero = vec![false; p.zigs.len()];
    for c in p.prunable_components() {
        let groups = p.groups_of(c);
        // keep at least one survivor
        let keep = groups[rng.random_range(0..groups.len())];
        for &i in &groups {
            zero[i] = i != keep && rng.random_bool(rate);
        }
    }
    PruneMask::from_flags(p, zero).unwrap()
}

fn graph_for(which: usize) -> ComputationGraph {
    match which {
        0 => demo_net(),
        1 => residual_block_net(),
        _ => stacked_unets_mini(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zeroed_groups_compress_equivalently(which in 0usize..3, seed in 0u64..1000, rate in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = randomized(graph_for(which), seed);
        let p = partition(&g).unwrap();
        let mask = random_mask(&p, &mut rng, rate);
        zero_masked_groups(&mut g, &p, &mask);
        let (c, r) = compress(&g, &p).unwrap();
        prop_assert!(r.flops_after <= r.flops_before);
        prop_assert!(r.params_after <= r.params_before);
        let eq = verify_equivalence(&g, &c, 2, 2, 1e-9, &mut rng).unwrap();
        prop_assert!(eq.passed, "max diff {}", eq.max_abs_diff);
    }

    #[test]
    fn compression_is_idempotent_and_composes(which in 0usize..3, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = randomized(graph_for(which), seed);
        let p = partition(&g).unwrap();
        let a = random_mask(&p, &mut rng, 0.3);
        let b = random_mask(&p, &mut rng, 0.3);
        // the union must leave a survivor in each component
        let union: Vec<bool> = a.zero.iter().zip(&b.zero).map(|(x, y)| *x || *y).collect();
        prop_assume!(PruneMask::from_flags(&p, union.clone()).is_ok());

        zero_masked_groups(&mut g, &p, &PruneMask::from_flags(&p, union).unwrap());
        let all = PruneMask::from_flags(&p, union_flags(&a, &b)).unwrap();
        let (direct, _) = compress_with(&g, &p, &all).unwrap();

        // second compression of an already-compressed graph changes nothing
        let p_direct = partition(&direct).unwrap();
        let (again, _) = compress(&direct, &p_direct).unwrap();
        prop_assert_eq!(&again, &direct);

        // first A, then the rest of B on the compressed graph
        let (first, _) = compress_with(&g, &p, &a).unwrap();
        let p_first = partition(&first).unwrap();
        let (second, _) = compress(&first, &p_first).unwrap();
        prop_assert_eq!(&second, &direct);
    }
}

fn union_flags(a: &PruneMask, b: &PruneMask) -> Vec<bool> {
    a.zero.iter().zip(&b.zero).map(|(x, y)| *x || *y).collect()
}

#[test]
fn shapes_survive_batch_change() {
    let g = randomized(demo_net(), 8);
    let p = partition(&g).unwrap();
    let mask = PruneMask::from_zeroed(&p, &[0]).unwrap();
    let (c, _) = compress_with(&g, &p, &mask).unwrap();
    assert_eq!(c.inputs()[0], TensorShape::nchw(1, 3, 16, 16));
    assert!(c.shapes_inferred());
}

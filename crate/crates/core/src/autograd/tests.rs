use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{
    build_graph, demo_net, init_parameters, residual_block_net, stacked_unets_mini, Edge,
    GraphDocument, Matrix, Vertex,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(shape: TensorShape, r: &mut impl Rng) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn single(inputs: Vec<TensorShape>, kind: VertexKind, fan_in: usize) -> ComputationGraph {
    let mut edges: Vec<Edge> = (0..fan_in).map(|s| Edge::from_input(s, 0)).collect();
    edges.push(Edge::new(0, 1));
    build_graph(GraphDocument {
        inputs,
        vertices: vec![
            Vertex::new(0, "op", kind),
            Vertex::new(1, "out", VertexKind::Output),
        ],
        edges,
    })
    .unwrap()
}

/// Fan-in scaled stems, perturbed batch-norm affine terms and random running
/// statistics. Keeps the loss O(1) so that central differences at `h = 1e-6`
/// are not swamped by round-off.
fn randomize(g: &mut ComputationGraph, r: &mut impl Rng) {
    init_parameters(g, r);
    let ids: Vec<VertexId> = g.vertices().iter().map(|v| v.id).collect();
    for id in ids {
        if let Some(ParameterSet::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
        }) = g.params_mut(id)
        {
            for x in gamma.iter_mut().chain(beta.iter_mut()) {
                *x += r.random_range(-0.3..0.3);
            }
            for x in running_mean.iter_mut() {
                *x = r.random_range(-0.2..0.2);
            }
            for x in running_var.iter_mut() {
                *x = r.random_range(0.5..1.5);
            }
        }
    }
}

fn naive_conv(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &Matrix,
    bias: &[f64],
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let cout = weight.rows;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; n * cout * ho * wo];
    for s in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[co];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((s * c + ci) * h + iy as usize) * w + ix as usize];
                                acc += weight.data[((co * c + ci) * k + ky) * k + kx] * xv;
                            }
                        }
                    }
                    y[((s * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    y
}

#[test]
fn conv_matches_naive_loops() {
    let mut r = rng(1);
    for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 0), (1, 1, 0), (2, 2, 1)] {
        let kind = VertexKind::Conv2d {
            kernel: k,
            stride,
            padding: pad,
            in_channels: 2,
            out_channels: 3,
            bias: true,
        };
        let mut g = single(vec![TensorShape::nchw(1, 2, 4, 4)], kind, 1);
        randomize(&mut g, &mut r);
        let x = random_tensor(TensorShape::nchw(2, 2, 4, 4), &mut r);
        let y = forward(&g, std::slice::from_ref(&x), Mode::Eval).unwrap();
        let (weight, bias) = stem(&g, 0);
        let expect = naive_conv(
            x.data(),
            (2, 2, 4, 4),
            weight,
            bias.unwrap(),
            k,
            stride,
            pad,
        );
        let got = y.output(0).data();
        assert_eq!(got.len(), expect.len());
        for (a, b) in got.iter().zip(&expect) {
            assert!(
                (a - b).abs() < 1e-12,
                "k={k} s={stride} p={pad}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn identity_batch_norm_is_passthrough_in_eval() {
    let g = single(
        vec![TensorShape::nchw(1, 3, 2, 2)],
        VertexKind::BatchNorm { channels: 3 },
        1,
    );
    let x = random_tensor(TensorShape::nchw(4, 3, 2, 2), &mut rng(2));
    let y = forward(&g, std::slice::from_ref(&x), Mode::Eval).unwrap();
    let scale = 1.0 / (1.0 + BN_EPS).sqrt();
    for (a, b) in y.output(0).data().iter().zip(x.data()) {
        assert!((a - b * scale).abs() < 1e-15);
    }
}

#[test]
fn concat_then_split_recovers_inputs() {
    let shapes = vec![TensorShape::nchw(1, 2, 3, 3), TensorShape::nchw(1, 1, 3, 3)];
    let g = single(shapes.clone(), VertexKind::Concat, 2);
    let mut r = rng(3);
    let a = random_tensor(shapes[0].with_batch(2), &mut r);
    let b = random_tensor(shapes[1].with_batch(2), &mut r);
    let y = forward(&g, &[a.clone(), b.clone()], Mode::Eval).unwrap();
    let out = y.output(0);
    assert_eq!(out.shape(), &TensorShape::nchw(2, 3, 3, 3));
    for s in 0..2 {
        let sample = &out.data()[s * 27..(s + 1) * 27];
        assert_eq!(&sample[..18], &a.data()[s * 18..(s + 1) * 18]);
        assert_eq!(&sample[18..], &b.data()[s * 9..(s + 1) * 9]);
    }
}

#[test]
fn linear_regression_gradient_is_closed_form() {
    let kind = VertexKind::Linear {
        in_features: 3,
        out_features: 2,
        bias: false,
    };
    let mut g = single(vec![TensorShape::features(1, 3)], kind, 1);
    let w = [0.5, -1.0, 2.0, 0.25, 0.0, -0.5];
    ParamLayout::new(&g).scatter(&mut g, &w);
    let x = [1.0, 2.0, -1.0];
    let y = [0.3, -0.7];
    let input = Tensor::new(TensorShape::features(1, 3), x.to_vec()).unwrap();
    let (loss, grads, _) = loss_and_gradient(
        &g,
        &[input],
        &[Target::MeanSquared(y.to_vec())],
        Mode::Train,
    )
    .unwrap();
    let r = [
        w[0] * x[0] + w[1] * x[1] + w[2] * x[2] - y[0],
        w[3] * x[0] + w[4] * x[1] + w[5] * x[2] - y[1],
    ];
    assert!((loss - 0.5 * (r[0] * r[0] + r[1] * r[1])).abs() < 1e-15);
    let flat = grads.flatten(&ParamLayout::new(&g));
    for i in 0..2 {
        for j in 0..3 {
            assert!((flat[i * 3 + j] - r[i] * x[j]).abs() < 1e-15);
        }
    }
}

#[test]
fn zero_input_gives_zero_conv_weight_gradient() {
    let kind = VertexKind::Conv2d {
        kernel: 3,
        stride: 1,
        padding: 1,
        in_channels: 2,
        out_channels: 2,
        bias: true,
    };
    let mut g = single(vec![TensorShape::nchw(1, 2, 4, 4)], kind, 1);
    randomize(&mut g, &mut rng(4));
    let x = Tensor::zeros(TensorShape::nchw(2, 2, 4, 4));
    let t = vec![1.0; 2 * 2 * 16];
    let (_, grads, _) =
        loss_and_gradient(&g, &[x], &[Target::MeanSquared(t)], Mode::Train).unwrap();
    let Some(ParameterSet::Stem { weight, bias }) = grads.get(0) else {
        panic!()
    };
    assert!(weight.data.iter().all(|&v| v == 0.0));
    assert!(bias.as_ref().unwrap().iter().any(|&v| v != 0.0));
}

#[test]
fn unknown_operator_is_rejected() {
    let g = single(
        vec![TensorShape::features(1, 2)],
        VertexKind::Unknown {
            name: "gelu".into(),
        },
        1,
    );
    let err = forward(
        &g,
        &[Tensor::zeros(TensorShape::features(1, 2))],
        Mode::Eval,
    );
    assert!(matches!(
        err,
        Err(AutogradError::UnsupportedOperator { vertex: 0, .. })
    ));
}

#[test]
fn input_shape_is_checked() {
    let g = demo_net();
    let err = forward(
        &g,
        &[Tensor::zeros(TensorShape::nchw(1, 3, 8, 8))],
        Mode::Eval,
    );
    assert!(matches!(err, Err(AutogradError::ShapeMismatch { .. })));
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let mut g = demo_net();
    init_parameters(&mut g, &mut rng(5));
    let x = random_tensor(TensorShape::nchw(3, 3, 16, 16), &mut rng(6));
    let a = forward(&g, std::slice::from_ref(&x), Mode::Train).unwrap();
    let b = forward(&g, &[x], Mode::Train).unwrap();
    assert_eq!(a.output(0), b.output(0));
}

#[test]
fn running_stats_follow_momentum() {
    let mut g = single(
        vec![TensorShape::features(1, 1)],
        VertexKind::BatchNorm { channels: 1 },
        1,
    );
    let x = Tensor::new(TensorShape::features(2, 1), vec![1.0, 3.0]).unwrap();
    let pass = forward(&g, &[x], Mode::Train).unwrap();
    pass.apply_running_stats(&mut g);
    let Some(ParameterSet::BatchNorm {
        running_mean,
        running_var,
        ..
    }) = g.params(0)
    else {
        panic!()
    };
    assert!((running_mean[0] - 0.2).abs() < 1e-15);
    // unbiased batch variance is 2
    assert!((running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
}

fn targets_for(out: &TensorShape, r: &mut impl Rng) -> [Target; 2] {
    let classes = out.channels();
    let labels = (0..out.batch() * out.plane())
        .map(|_| r.random_range(0..classes))
        .collect();
    let dense = (0..out.numel())
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    [Target::CrossEntropy(labels), Target::MeanSquared(dense)]
}

#[test]
fn finite_differences_agree_on_builders() {
    for (i, mut g) in [demo_net(), residual_block_net(), stacked_unets_mini()]
        .into_iter()
        .enumerate()
    {
        let mut r = rng(10 + i as u64);
        randomize(&mut g, &mut r);
        let inputs: Vec<Tensor> = g
            .inputs()
            .iter()
            .map(|s| random_tensor(s.with_batch(2), &mut r))
            .collect();
        let out_shape = forward(&g, &inputs, Mode::Eval)
            .unwrap()
            .output(0)
            .shape()
            .clone();
        let n = ParamLayout::new(&g).len();
        let coords: Vec<usize> = (0..8).map(|_| r.random_range(0..n)).collect();
        for t in targets_for(&out_shape, &mut r) {
            for mode in [Mode::Train, Mode::Eval] {
                let checks = finite_difference_check(
                    &g,
                    &inputs,
                    std::slice::from_ref(&t),
                    mode,
                    &coords,
                    1e-6,
                    1e-4,
                )
                .unwrap();
                for c in checks {
                    assert!(c.rel_error < 1e-5, "graph {i} {mode:?}: {c:?}");
                }
            }
        }
    }
}

use std::fs;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dhspg::{OptimizerMode, PenaltyAllocation};
use crate::graph::ComputationGraph;

fn tiny_config(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetSpec::SyntheticClassification(BlobSpec {
            train: 96,
            test: 48,
            ..Default::default()
        }),
        target_fraction: Some(0.5),
        epochs: 3,
        batch_size: 32,
        output_dir: dir.display().to_string(),
        equivalence_inputs: 4,
        ..Default::default()
    };
    cfg.optimizer.lr.initial = 0.05;
    cfg.optimizer.lr.period = 1;
    cfg.optimizer.momentum = 0.9;
    cfg.optimizer.lambda_amplify = 100.0;
    cfg.optimizer.default_lambda = 1e-2;
    cfg.optimizer.allocation = PenaltyAllocation::PerComponent;
    cfg
}

/// Training CSV with the wall-time column removed.
fn log_without_timing(dir: &std::path::Path) -> String {
    let text = fs::read_to_string(dir.join(TRAINING_LOG)).unwrap();
    text.lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn fixed_seed_runs_write_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_pipeline(&tiny_config(a.path())).unwrap();
    let mb = run_pipeline(&tiny_config(b.path())).unwrap();
    for name in [PARTITION_FILE, COMPRESSED_MODEL, FULL_MODEL] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
    assert_eq!(log_without_timing(a.path()), log_without_timing(b.path()));
    assert_eq!(ma.achieved_zero_groups, mb.achieved_zero_groups);
    assert!(ma.equivalence_max_abs_diff < 1e-9);
}

#[test]
fn zero_target_keeps_the_graph() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.target_fraction = None;
    cfg.optimizer.target_zero_groups = 0;
    let m = run_pipeline(&cfg).unwrap();
    assert_eq!(m.achieved_zero_groups, 0);
    let full =
        ComputationGraph::from_json(&fs::read_to_string(dir.path().join(FULL_MODEL)).unwrap())
            .unwrap();
    let comp = ComputationGraph::from_json(
        &fs::read_to_string(dir.path().join(COMPRESSED_MODEL)).unwrap(),
    )
    .unwrap();
    assert_eq!(full, comp);
    assert_eq!(m.flops_dense, m.flops_compressed);
}

#[test]
fn oversized_target_is_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.target_fraction = None;
    // DemoNet: 64 groups in 3 prunable components → at most 61.
    cfg.optimizer.target_zero_groups = 62;
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, HarnessError::Config(_)), "{err}");
    assert!(!dir.path().join(TRAINING_LOG).exists());

    cfg.optimizer.target_zero_groups = 61;
    let part = crate::partition::partition(&cfg.load_graph().unwrap()).unwrap();
    assert_eq!(cfg.resolve_target(&part).unwrap(), 61);
}

#[test]
fn target_fraction_rounds_against_group_count() {
    let mut cfg = ExperimentConfig {
        target_fraction: Some(0.5),
        ..Default::default()
    };
    let part = crate::partition::partition(&cfg.load_graph().unwrap()).unwrap();
    assert_eq!(cfg.resolve_target(&part).unwrap(), 32);
    cfg.target_fraction = Some(1.5);
    assert!(cfg.resolve_target(&part).is_err());
}

#[test]
fn compress_and_eval_replay_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_pipeline(&tiny_config(dir.path())).unwrap();
    let before = fs::read(dir.path().join(COMPRESSED_MODEL)).unwrap();
    let (report, eq) = compress_run(dir.path()).unwrap();
    assert!(eq.passed);
    assert_eq!(report.flops_after, m.flops_compressed);
    assert_eq!(fs::read(dir.path().join(COMPRESSED_MODEL)).unwrap(), before);
    let ev = eval_run(dir.path()).unwrap();
    assert_eq!(ev.samples, 48);
    assert!((ev.compressed_accuracy - m.compressed_accuracy).abs() < 1e-12);
    assert!((ev.full_accuracy - ev.compressed_accuracy).abs() < 1e-12);
    assert_eq!(load_metrics(dir.path()).unwrap(), m);
}

#[test]
fn config_rejects_unknown_fields_and_resolves_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.json");
    fs::write(
        &path,
        r#"{"graph": "chain_net:3", "epochs": 2, "output_dir": "out"}"#,
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.epochs, 2);
    assert_eq!(cfg.output_path(), dir.path().join("out"));
    assert!(cfg.load_graph().unwrap().len() > 3);

    fs::write(&path, r#"{"epochz": 2}"#).unwrap();
    assert!(matches!(
        ExperimentConfig::load(&path),
        Err(HarnessError::Json(_))
    ));
    fs::write(&path, r#"{"graph": "chain_net:x"}"#).unwrap();
    assert!(ExperimentConfig::load(&path).unwrap().load_graph().is_err());
}

#[test]
fn dataset_roundtrips_through_disk() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let split = gen_synthetic_classification(
        &BlobSpec {
            train: 10,
            test: 5,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&split.test, dir.path(), "t").unwrap();
    assert_eq!(load_dataset(dir.path(), "t").unwrap(), split.test);
    fs::write(dir.path().join("t.bin"), [0u8; 16]).unwrap();
    assert!(matches!(
        load_dataset(dir.path(), "t"),
        Err(HarnessError::Dataset(_))
    ));
}

#[test]
fn blob_generator_is_seeded_and_balanced_enough() {
    let spec = BlobSpec {
        train: 400,
        test: 10,
        ..Default::default()
    };
    let a = gen_synthetic_classification(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = gen_synthetic_classification(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
    for c in 0..4 {
        let n = a.train.labels.iter().filter(|&&y| y == c).count();
        assert!((60..140).contains(&n), "class {c}: {n}");
    }
    assert_eq!(a.train.sample_shape().to_string(), "(1,3,16,16)");
}

#[test]
fn csv_loader_reads_labels_and_scales_pixels() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("train.csv"),
        "label,p0,p1,p2,p3\n1,0,255,51,102\n0,255,255,0,0\n",
    )
    .unwrap();
    fs::write(dir.path().join("test.csv"), "2,0,0,0,255\n").unwrap();
    let split = load_image_csv(dir.path(), 1, 2, 2, 3).unwrap();
    assert_eq!(split.train.labels, vec![1, 0]);
    assert_eq!(split.test.labels, vec![2]);
    assert_eq!(&split.train.inputs.data()[..4], &[0.0, 1.0, 0.2, 0.4]);
    assert_eq!(split.test.inputs.shape().to_string(), "(1,1,2,2)");

    fs::write(dir.path().join("test.csv"), "7,0,0,0,255\n").unwrap();
    assert!(matches!(
        load_image_csv(dir.path(), 1, 2, 2, 3),
        Err(HarnessError::Dataset(_))
    ));
    fs::write(dir.path().join("test.csv"), "1,0,0\n").unwrap();
    assert!(load_image_csv(dir.path(), 1, 2, 2, 3).is_err());
}

#[test]
fn noiseless_oracle_recovers_the_truth() {
    let problem = SyntheticGroupSparseProblem {
        noise: 0.0,
        ..Default::default()
    };
    let data = gen_synthetic_regression(&problem, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let err = (&data.oracle - &data.w_true).amax();
    assert!(err < 1e-8, "{err}");
    assert_eq!(data.support.len(), 4);
    assert!(data.oracle_objective < 1e-16);
    assert_eq!(data.support_of(data.w_true.as_slice()), data.support);
}

#[test]
fn permuting_group_labels_permutes_the_oracle() {
    let problem = SyntheticGroupSparseProblem::default();
    let data = gen_synthetic_regression(&problem, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let s = problem.group_size;
    // Group g of the permuted problem is group perm[g] of the original.
    let perm = [3, 7, 0, 9, 1, 4, 8, 2, 6, 5];
    let cols: Vec<usize> = perm.iter().flat_map(|&g| g * s..(g + 1) * s).collect();
    let x = data.x.select_columns(&cols);
    let support: Vec<usize> = (0..problem.groups)
        .filter(|g| data.support.contains(&perm[*g]))
        .collect();
    let oracle = restricted_least_squares(&x, &data.y, s, &support).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        for j in 0..s {
            assert!((oracle[new * s + j] - data.oracle[old * s + j]).abs() < 1e-10);
        }
    }
}

#[test]
fn restricted_least_squares_ignores_other_columns() {
    let x = DMatrix::from_row_slice(
        3,
        4,
        &[1.0, 0.0, 5.0, 1.0, 0.0, 1.0, 2.0, 3.0, 1.0, 1.0, 0.0, 0.0],
    );
    let y = nalgebra::DVector::from_column_slice(&[1.0, 2.0, 3.0]);
    let w = restricted_least_squares(&x, &y, 2, &[0]).unwrap();
    assert_eq!((w[2], w[3]), (0.0, 0.0));
    // Normal equations on the first two columns.
    let sub = x.columns(0, 2).into_owned();
    let r = sub.transpose() * (&sub * w.rows(0, 2) - &y);
    assert!(r.amax() < 1e-12);
}

#[test]
fn dhspg_hits_every_target_exactly() {
    let problem = SyntheticGroupSparseProblem::default();
    let schedule = RegressionSchedule::default();
    for seed in 0..4 {
        let table = run_ablation_dhspg_vs_hspg(&problem, &[2, 4, 6], &[], &schedule, seed).unwrap();
        for row in table.dhspg_rows() {
            assert_eq!(Some(row.zero_groups), row.target_zero_groups, "seed {seed}");
            assert!(row
                .support
                .iter()
                .all(|g| !row.support.is_empty() && *g < 10));
        }
    }
}

#[test]
fn full_batch_hspg_without_penalty_zeroes_nothing() {
    let problem = SyntheticGroupSparseProblem::default();
    let schedule = RegressionSchedule {
        epochs: 200,
        batch_size: problem.samples,
    };
    let table = run_ablation_dhspg_vs_hspg(&problem, &[], &[0.0, 1.0], &schedule, 2).unwrap();
    let rows: Vec<_> = table.hspg_rows().collect();
    assert_eq!(rows[0].zero_groups, 0);
    assert!(rows[1].zero_groups > 0);
}

#[test]
fn ablation_table_lists_every_run() {
    let table = run_ablation_dhspg_vs_hspg(
        &Default::default(),
        &[3],
        &[1e-3, 1e-1],
        &RegressionSchedule {
            epochs: 20,
            batch_size: 64,
        },
        0,
    )
    .unwrap();
    assert_eq!(table.rows.len(), 3);
    assert_eq!(table.rows[0].method, OptimizerMode::Dhspg);
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(2).unwrap().starts_with("hspg,,1e-3,"));
    assert!(run_ablation_dhspg_vs_hspg(
        &Default::default(),
        &[],
        &[],
        &RegressionSchedule {
            epochs: 1,
            batch_size: 0
        },
        0
    )
    .is_err());
}

#[test]
fn identity_quadratic_probes_hold() {
    let probe = QuadraticProbe::new(DMatrix::identity(20, 20), 4).unwrap();
    assert_eq!(probe.lipschitz, 1.0);
    assert_eq!(probe.alpha(), 0.5);
    let report = run_lemma_probes(&probe, 100, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for c in &report.checks {
        assert!(c.passed(), "{c:?}");
    }
    assert!(
        report
            .check(CHECK_SUFFICIENT_DECREASE)
            .unwrap()
            .worst_margin
            >= 0.0
    );
}

#[test]
fn lambda_hat_is_the_root_of_the_penalty_quadratic() {
    let probe = QuadraticProbe::new(DMatrix::identity(4, 4) * 2.0, 2).unwrap();
    let (l, a) = (probe.lipschitz, probe.alpha());
    for (cos, gn) in [(-0.7, 1.3), (0.0, 2.0), (0.4, 0.5)] {
        let lam = probe.lambda_hat(cos, gn);
        let h = l * a * a * lam * lam / 2.0 + (l * a - 1.0) * a * cos * gn * lam
            - (a - l * a * a / 2.0) * gn * gn;
        assert!(h.abs() < 1e-12, "{h}");
        assert!(lam > 0.0 && lam >= -cos * gn);
    }
}

#[test]
fn probe_rejects_bad_matrices() {
    assert!(QuadraticProbe::new(DMatrix::identity(5, 5), 2).is_err());
    let mut a = DMatrix::identity(4, 4);
    a[(0, 1)] = 1.0;
    assert!(QuadraticProbe::new(a, 2).is_err());
    assert!(QuadraticProbe::new(-DMatrix::identity(4, 4), 2).is_err());
}

#[test]
fn runtime_bench_times_both_optimizers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.epochs = 2;
    let r = run_runtime_bench(&cfg).unwrap();
    assert_eq!(r.timings.len(), 2);
    assert_eq!(r.timings[0].seconds_per_epoch.len(), 2);
    assert!(r.ratio.is_finite() && r.ratio > 0.0);
    assert_eq!(r.target_zero_groups, 32);
}

#[test]
fn paired_training_matches_sequential_training() {
    use crate::dhspg::{group_specs, Dhspg, MomentumSgd};
    use crate::graph::{init_parameters, ParamLayout};

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.optimizer.target_zero_groups = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = load_split(&cfg.dataset, &mut rng).unwrap();
    let mut g = cfg.load_graph().unwrap();
    init_parameters(&mut g, &mut rng);
    let part = crate::partition::partition(&g).unwrap();
    let layout = ParamLayout::new(&g);
    let groups = group_specs(&part, &layout);
    let steps = data.train.len().div_ceil(cfg.batch_size);
    let dhspg = || Dhspg::new(cfg.optimizer.clone(), groups.clone(), layout.len(), steps).unwrap();
    let sgd = || MomentumSgd::new(cfg.optimizer.lr.clone(), 0.9, layout.len(), steps);

    let (mut ga, mut gb) = (g.clone(), g.clone());
    let (mut ra, mut rb) = (rng.clone(), ChaCha8Rng::seed_from_u64(7));
    let seq_a = train(
        &mut ga,
        &data,
        &mut dhspg(),
        &groups,
        3,
        32,
        &mut ra,
        |_| {},
    )
    .unwrap();
    let seq_b = train(&mut gb, &data, &mut sgd(), &groups, 3, 32, &mut rb, |_| {}).unwrap();

    let (mut pa, mut pb) = (g.clone(), g);
    let (mut qa, mut qb) = (rng, ChaCha8Rng::seed_from_u64(7));
    let (mut oa, mut ob) = (dhspg(), sgd());
    let (par_a, par_b) = train_paired(
        TrainRun {
            graph: &mut pa,
            opt: &mut oa,
            rng: &mut qa,
        },
        TrainRun {
            graph: &mut pb,
            opt: &mut ob,
            rng: &mut qb,
        },
        &data,
        &groups,
        3,
        32,
    )
    .unwrap();

    assert_eq!(pa, ga);
    assert_eq!(pb, gb);
    for (seq, par) in [(&seq_a, &par_a), (&seq_b, &par_b)] {
        let strip = |l: &[EpochLog]| -> Vec<EpochLog> {
            l.iter()
                .map(|e| EpochLog {
                    seconds: 0.0,
                    ..e.clone()
                })
                .collect()
        };
        assert_eq!(strip(seq), strip(par));
    }
}

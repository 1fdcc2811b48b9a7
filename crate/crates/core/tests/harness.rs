use std::path::Path;

use mlpl::data::format::{read_embeddings, write_embeddings, EmbeddingRecord};
use mlpl::data::{generate_synthetic, AugmentationConfig, Dataset, SyntheticConfig};
use mlpl::harness::output::{self, CONFIG_FILE, METRICS_FILE, STEPS_FILE, SUMMARY_FILE};
use mlpl::harness::{
    ablate, evaluate, run, run_with_dataset, sweep, train_run, DataSource, ExperimentConfig, RunHooks, SweepParam,
    TrainConfig, Variant,
};
use mlpl::model::{write_checkpoint, Adam, AdamConfig, ModelParams};
use mlpl::Error;

fn small_data(seed: u64) -> SyntheticConfig {
    SyntheticConfig { labeled: 28, unlabeled: 256, test: 140, seed, ..Default::default() }
}

fn small(epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        train: TrainConfig { epochs, seeds: vec![0], ..Default::default() },
        data: DataSource::Synthetic(small_data(0)),
        ..Default::default()
    }
}

/// Twenty records as an external exporter would write them: ten labeled, ten
/// unlabeled, plus anchors and a test file.
fn write_fixture(dir: &Path) {
    let ds = generate_synthetic(&SyntheticConfig {
        num_classes: 5,
        input_dim: 12,
        labeled: 10,
        unlabeled: 10,
        test: 10,
        confusable_pairs: vec![],
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let rec = |id: u64, label: Option<usize>, x: &[f64]| {
        EmbeddingRecord::new(id, label.map(|l| l as u32), x.iter().map(|&v| v as f32).collect())
    };
    let mut train: Vec<EmbeddingRecord> = ds.labeled.iter().map(|s| rec(s.id, Some(s.label), &s.x)).collect();
    train.extend(ds.unlabeled.iter().map(|s| rec(s.id, None, &s.x)));
    write_embeddings(dir.join("images.sitf"), 12, &train).unwrap();
    let test: Vec<_> = ds.test.iter().map(|s| rec(s.id, Some(s.label), &s.x)).collect();
    write_embeddings(dir.join("test.sitf"), 12, &test).unwrap();
    let anchors: Vec<_> = ds.anchors.iter().enumerate().map(|(c, a)| rec(c as u64, Some(c), a)).collect();
    write_embeddings(dir.join("anchors.sitf"), 12, &anchors).unwrap();
}

#[test]
fn exporter_style_files_train_for_five_epochs() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let images = read_embeddings(dir.path().join("images.sitf")).unwrap();
    assert_eq!(images.records.len(), 20);
    assert_eq!(images.dim, 12);
    assert_eq!(images.records.iter().filter(|r| r.label.is_none()).count(), 10);

    let cfg = ExperimentConfig {
        train: TrainConfig { epochs: 5, batch_size: 4, mu: 2, ..Default::default() },
        data: DataSource::Files {
            train: dir.path().join("images.sitf"),
            test: dir.path().join("test.sitf"),
            anchors: dir.path().join("anchors.sitf"),
            truth: None,
        },
        ..Default::default()
    };
    let out = dir.path().join("run");
    let result = run(&cfg, 0, Some(&out)).unwrap();
    assert_eq!(result.epochs.len(), 5);
    assert!(result.epochs.iter().all(|m| m.pseudo_label_accuracy.is_none()));
    for f in [CONFIG_FILE, METRICS_FILE, STEPS_FILE, SUMMARY_FILE] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn hidden_labels_never_influence_training() {
    let ds = generate_synthetic(&small_data(1)).unwrap();
    let mut cfg = small(3);
    cfg.train.alpha = 0.3;
    cfg.train.gamma = 0.5;
    let with = train_run(
        &cfg.train,
        &cfg.augment,
        ds.training_view(),
        ds.evaluation_oracle(),
        5,
        RunHooks::default(),
    )
    .unwrap();
    let without = train_run(&cfg.train, &cfg.augment, ds.training_view(), None, 5, RunHooks::default()).unwrap();
    assert_eq!(with.params, without.params);
    assert_eq!(with.steps, without.steps);
    assert!(with.epochs.iter().any(|m| m.pseudo_label_accuracy.is_some()));
    assert!(without.epochs.iter().all(|m| m.pseudo_label_accuracy.is_none()));
}

#[test]
fn metrics_series_and_loss_identity() {
    let cfg = small(4);
    let r = run(&cfg, 0, None).unwrap();
    assert_eq!(r.epochs.len(), 4);
    let cap = r.buffer.capacity();
    for m in &r.epochs {
        assert!((0.0..=1.0).contains(&m.alpha_pass_rate));
        assert!((0.0..=1.0).contains(&m.test_accuracy));
        assert!(m.buffer_size >= 28 && m.buffer_size <= cap);
    }
    for s in &r.steps {
        assert!((s.total - (s.l_s + s.lambda1 * s.l_t + s.lambda2 * s.l_u)).abs() < 1e-9);
        assert!(s.gamma_admit <= s.alpha_pass);
    }
}

#[test]
fn semantic_only_baseline_runs() {
    let mut cfg = small(2);
    cfg.train = Variant::Semantic.apply(&cfg.train);
    let r = run(&cfg, 0, None).unwrap();
    assert!(r.steps.iter().all(|s| s.lambda1 == 0.0 && s.total == s.l_s + s.lambda2 * s.l_u));
}

#[test]
fn zero_spread_data_is_learned_perfectly() {
    let mut cfg = small(60);
    cfg.data = DataSource::Synthetic(SyntheticConfig { spread: 0.0, ..small_data(2) });
    cfg.augment = AugmentationConfig::identity();
    let r = run(&cfg, 0, None).unwrap();
    assert_eq!(r.final_test_accuracy, 1.0);
}

#[test]
fn supervised_loss_falls_every_epoch_on_separable_data() {
    let mut cfg = small(8);
    cfg.train.lambda1 = 0.0;
    cfg.train.lambda2 = 0.0;
    cfg.augment = AugmentationConfig::identity();
    cfg.data = DataSource::Synthetic(SyntheticConfig { spread: 0.02, ..small_data(3) });
    let r = run(&cfg, 0, None).unwrap();
    for w in r.epochs.windows(2) {
        assert!(w[1].l_s < w[0].l_s, "{} then {}", w[0].l_s, w[1].l_s);
    }
}

#[test]
fn single_seed_ablation_has_four_rows_without_spread() {
    let rows = ablate(&small(1), false).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.std == 0.0 && r.accuracies.len() == 1));
    let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["p_sem", "p_sem+p_text", "p_sem+p_text+p_ins", "p_sem+p_text+p_ins+L_t"]);
}

#[test]
fn ablation_variants_share_data_per_seed() {
    // parallel and serial execution agree, and a variant rerun matches the table
    let mut cfg = small(1);
    cfg.train.seeds = vec![0, 1];
    let serial = ablate(&cfg, false).unwrap();
    let parallel = ablate(&cfg, true).unwrap();
    assert_eq!(serial, parallel);
    let ds = cfg.data.load(1).unwrap();
    let full = ExperimentConfig { train: Variant::Full.apply(&cfg.train), ..cfg.clone() };
    let r = run_with_dataset(&full, &ds, 1, None).unwrap();
    assert_eq!(serial[3].accuracies[1], r.final_test_accuracy);
}

#[test]
fn single_point_sweep_is_one_run() {
    let cfg = small(1);
    let points = sweep(&cfg, SweepParam::Gamma, &[0.9], false).unwrap();
    assert_eq!(points.len(), 1);
    let direct = run(&ExperimentConfig { train: TrainConfig { gamma: 0.9, ..cfg.train.clone() }, ..cfg }, 0, None)
        .unwrap();
    assert_eq!(points[0].accuracies, vec![direct.final_test_accuracy]);
    assert!(sweep(&small(1), SweepParam::Gamma, &[0.5], false).is_err());
}

#[test]
fn untrained_model_scores_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&SyntheticConfig { test: 1400, ..small_data(6) }).unwrap();
    ds.write_to_dir(dir.path()).unwrap();
    let params = ModelParams::zeros(32, 32, 7);
    let ckpt = dir.path().join("zero.sitm");
    write_checkpoint(&ckpt, &params, &Adam::new(&params, AdamConfig::default())).unwrap();
    let acc = evaluate(&ckpt, dir.path().join("test.sitf")).unwrap();
    // a zero model predicts class 0 everywhere; the test set is balanced
    assert!((acc - 1.0 / 7.0).abs() < 0.03, "{acc}");
}

#[test]
fn checkpoints_evaluate_to_the_reported_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(2);
    cfg.output.checkpoint_every = 1;
    cfg.output.buffer_snapshots = true;
    cfg.output.diagnostics = true;
    let ds = cfg.data.load(0).unwrap();
    ds.write_to_dir(dir.path().join("data")).unwrap();
    let out = dir.path().join("run");
    let r = run_with_dataset(&cfg, &ds, 0, Some(&out)).unwrap();
    let acc = evaluate(output::checkpoint_path(&out, 2), dir.path().join("data/test.sitf")).unwrap();
    // checkpoints store f32 weights, so allow one flipped prediction
    assert!((acc - r.final_test_accuracy).abs() <= 1.0 / 140.0 + 1e-12);

    let labeled = read_embeddings(out.join("buffer/final_labeled.sitf")).unwrap();
    let unlabeled = read_embeddings(out.join("buffer/final_unlabeled.sitf")).unwrap();
    assert_eq!(labeled.records.len(), 28);
    assert_eq!(labeled.records.len() + unlabeled.records.len(), r.buffer.len());
    assert!(out.join("buffer/epoch_001_labeled.sitf").exists());
    let diag = std::fs::read_to_string(out.join(output::DIAGNOSTICS_FILE)).unwrap();
    assert_eq!(diag.lines().count(), 1 + 256);
}

#[test]
fn evaluation_rejects_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let params = ModelParams::zeros(16, 16, 7);
    let ckpt = dir.path().join("m.sitm");
    write_checkpoint(&ckpt, &params, &Adam::new(&params, AdamConfig::default())).unwrap();
    let ds = generate_synthetic(&small_data(0)).unwrap();
    ds.write_to_dir(dir.path()).unwrap();
    let err = evaluate(&ckpt, dir.path().join("test.sitf")).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
}

#[test]
fn invalid_configs_fail_before_training() {
    let mut cfg = small(1);
    cfg.train.alpha = 0.95;
    assert!(matches!(run(&cfg, 0, None), Err(Error::Config(_))));

    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        data: DataSource::Files {
            train: dir.path().join("missing.sitf"),
            test: dir.path().join("missing.sitf"),
            anchors: dir.path().join("missing.sitf"),
            truth: None,
        },
        ..small(1)
    };
    assert!(matches!(run(&cfg, 0, None), Err(Error::Io { .. })));
}

#[test]
fn datasets_survive_a_file_round_trip_into_training() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&small_data(8)).unwrap();
    ds.write_to_dir(dir.path()).unwrap();
    let back = Dataset::load(
        dir.path().join("train.sitf"),
        dir.path().join("test.sitf"),
        dir.path().join("anchors.sitf"),
        Some(&dir.path().join("unlabeled_truth.sitf")),
    )
    .unwrap();
    let cfg = small(2);
    let a = run_with_dataset(&cfg, &ds, 0, None).unwrap();
    let b = run_with_dataset(&cfg, &back, 0, None).unwrap();
    assert_eq!(a.epochs, b.epochs);
}

//! Optimizer, epoch loop, evaluation and run orchestration.

use glyphnet::arch::{build_named, load_checkpoint, Model, NodeParams, ARCHITECTURES};
use glyphnet::data::synth::synth_glyphs;
use glyphnet::data::SplitTag;
use glyphnet::layers::softmax::cross_entropy;
use glyphnet::train::{
    evaluate, loss_and_gradients, predict, predict_labels, run_experiment, sgd_step, train_epoch, MetricsLog,
    RunManifest, Sgd, CHECKPOINT_DIR, MANIFEST_FILE, METRICS_FILE,
};
use glyphnet::{Dataset, Error, Tensor, TrainConfig};

fn toy(name: &str, seed: u64) -> Model {
    Model::init(build_named(name, 10, true).unwrap(), seed).unwrap()
}

fn learnables(model: &Model) -> Vec<Vec<f64>> {
    model.named_learnables().into_iter().map(|(_, t)| t.data().to_vec()).collect()
}

fn config(lr: f64, momentum: f64, batch: usize) -> TrainConfig {
    TrainConfig { learning_rate: lr, momentum, batch_size: batch, ..TrainConfig::default() }
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let data = synth_glyphs(1, 10, 2, 0.05).unwrap();
    for name in ["allconv", "densenet", "resnet"] {
        let mut model = toy(name, 2);
        let before = learnables(&model);
        let mut opt = Sgd::new(&model);
        for epoch in 0..3 {
            train_epoch(&mut model, &mut opt, &data, &config(0.0, 0.9, 8), epoch).unwrap();
        }
        assert_eq!(learnables(&model), before, "{name}");
    }
}

#[test]
fn one_sample_zero_lr_loss_equals_eval_loss() {
    // All-Conv has no batchnorm, so train and eval forwards coincide.
    let data = synth_glyphs(2, 10, 1, 0.05).unwrap().subset(&[3], SplitTag::Train).unwrap();
    let mut model = toy("allconv", 3);
    let eval_loss = cross_entropy(&predict(&model, &data).unwrap(), data.labels()).unwrap();
    let mut opt = Sgd::new(&model);
    let loss = train_epoch(&mut model, &mut opt, &data, &config(0.0, 0.9, 32), 0).unwrap();
    assert!((loss - eval_loss).abs() < 1e-12, "{loss} vs {eval_loss}");
}

fn fill_grads(model: &mut Model, value: impl Fn(usize) -> f64) -> glyphnet::arch::Gradients {
    let data = synth_glyphs(4, 10, 1, 0.05).unwrap();
    let (images, labels) = data.batch(&[0, 1]).unwrap();
    let (_, mut grads) = loss_and_gradients(model, &images, &labels).unwrap();
    let mut i = 0;
    for t in grads.nodes.iter_mut().flatten() {
        for v in t.data_mut() {
            *v = value(i);
            i += 1;
        }
    }
    grads
}

#[test]
fn two_momentum_steps_match_unrolled_recurrence() {
    let mut model = toy("allconv", 5);
    let p0 = learnables(&model);
    let g1 = fill_grads(&mut model, |i| ((i % 13) as f64 - 6.0) * 0.01);
    let g2 = fill_grads(&mut model, |i| ((i % 7) as f64 - 3.0) * 0.02);
    let (lr, m) = (0.05, 0.9);
    let cfg = config(lr, m, 32);
    let mut opt = Sgd::new(&model);
    sgd_step(&mut model, &mut opt, &g1, &cfg, 0).unwrap();
    sgd_step(&mut model, &mut opt, &g2, &cfg, 0).unwrap();
    let (a, b): (Vec<f64>, Vec<f64>) = (g1.iter().flat_map(|t| t.data().to_vec()).collect(), g2.iter().flat_map(|t| t.data().to_vec()).collect());
    let p2: Vec<f64> = learnables(&model).concat();
    for (i, (p, p0)) in p2.iter().zip(p0.concat()).enumerate() {
        let v1 = -lr * a[i];
        let v2 = m * v1 - lr * b[i];
        let expect = p0 + v1 + v2;
        assert!((p - expect).abs() <= 1e-15, "{i}: {p} vs {expect}");
    }
}

#[test]
fn zero_gradient_keeps_parameters_and_decays_velocity() {
    let mut model = toy("allconv", 6);
    let cfg = config(0.1, 0.9, 32);
    let mut opt = Sgd::new(&model);
    let g = fill_grads(&mut model, |_| 1.0);
    sgd_step(&mut model, &mut opt, &g, &cfg, 0).unwrap();
    let before = learnables(&model);
    let v_before: Vec<f64> = opt.velocity().iter().flatten().flat_map(|t| t.data().to_vec()).collect();
    let zero = fill_grads(&mut model, |_| 0.0);
    sgd_step(&mut model, &mut opt, &zero, &cfg, 0).unwrap();
    let v_after: Vec<f64> = opt.velocity().iter().flatten().flat_map(|t| t.data().to_vec()).collect();
    for (a, b) in v_before.iter().zip(&v_after) {
        assert_eq!(*b, 0.9 * a);
    }
    // Parameters move by the decayed velocity only.
    for (p, (q, v)) in learnables(&model).concat().iter().zip(before.concat().iter().zip(&v_after)) {
        assert_eq!(*p, q + v);
    }
}

#[test]
fn schedule_applies_inside_sgd_step() {
    let mut model = toy("allconv", 7);
    let cfg = config(0.1, 0.0, 32);
    let g = fill_grads(&mut model, |_| 1.0);
    let before = learnables(&model).concat();
    let mut opt = Sgd::new(&model);
    sgd_step(&mut model, &mut opt, &g, &cfg, 150).unwrap();
    for (p, q) in learnables(&model).concat().iter().zip(&before) {
        assert!((q - p - 0.01).abs() < 1e-15);
    }
}

#[test]
fn non_finite_gradient_names_node() {
    let mut model = toy("allconv", 8);
    let mut g = fill_grads(&mut model, |_| 0.0);
    let c3 = model.spec().node_index("c3").unwrap();
    g.nodes[c3][0].data_mut()[5] = f64::NAN;
    let mut opt = Sgd::new(&model);
    match sgd_step(&mut model, &mut opt, &g, &config(0.1, 0.9, 32), 0) {
        Err(Error::NonFiniteGradient { node }) => assert_eq!(node, "c3"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn epoch_loss_is_deterministic() {
    let data = synth_glyphs(9, 10, 3, 0.05).unwrap();
    let run = || {
        let mut model = toy("resnet", 1);
        let mut opt = Sgd::new(&model);
        let cfg = TrainConfig { seed: 4, batch_size: 8, ..TrainConfig::default() };
        (0..2).map(|e| train_epoch(&mut model, &mut opt, &data, &cfg, e).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn loss_decreases_over_first_five_epochs_for_most_seeds() {
    let data = synth_glyphs(11, 10, 5, 0.05).unwrap();
    let mut decreasing = 0;
    for seed in 0..5 {
        let mut model = toy("allconv", seed);
        let mut opt = Sgd::new(&model);
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let losses: Vec<f64> = (0..5).map(|e| train_epoch(&mut model, &mut opt, &data, &cfg, e).unwrap()).collect();
        if losses.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 4, "only {decreasing} of 5 seeds decreased monotonically");
}

/// Dataset whose labels are the model's own predictions.
fn self_labelled(model: &Model, data: &Dataset) -> Dataset {
    let labels = predict_labels(model, data).unwrap();
    Dataset::new(data.images().clone(), labels, data.classes(), SplitTag::Full).unwrap()
}

#[test]
fn accuracy_of_own_predictions_is_one() {
    let model = toy("nin", 1);
    let data = self_labelled(&model, &synth_glyphs(1, 10, 2, 0.05).unwrap());
    assert_eq!(evaluate(&model, &data).unwrap(), 1.0);
}

#[test]
fn zeroed_head_ties_break_to_first_class() {
    let mut model = toy("allconv", 2);
    let out = model.spec().node_index("out").unwrap();
    if let NodeParams::Dense(p) = &mut model.params_mut()[out] {
        p.weights.data_mut().fill(0.0);
    }
    let data = synth_glyphs(3, 10, 4, 0.05).unwrap();
    assert!(predict_labels(&model, &data).unwrap().iter().all(|&l| l == 0));
    // Exactly the class-0 share of a balanced 10-class set.
    assert_eq!(evaluate(&model, &data).unwrap(), 0.1);
}

#[test]
fn accuracy_is_order_independent() {
    let model = toy("vgg16", 3);
    let data = synth_glyphs(5, 10, 3, 0.05).unwrap();
    let mut perm: Vec<usize> = (0..data.len()).rev().collect();
    perm.rotate_left(7);
    let shuffled = data.subset(&perm, SplitTag::Full).unwrap();
    assert_eq!(evaluate(&model, &data).unwrap(), evaluate(&model, &shuffled).unwrap());
}

#[test]
fn labels_beyond_model_classes_rejected() {
    let model = toy("allconv", 1);
    let data = synth_glyphs(1, 12, 1, 0.05).unwrap();
    assert!(matches!(evaluate(&model, &data), Err(Error::LabelOutOfRange { label: 10, classes: 10 })));
    let empty = Dataset::new(Tensor::zeros(&[0, 3, 32, 32]), vec![], 10, SplitTag::Test);
    if let Ok(empty) = empty {
        assert!(matches!(evaluate(&model, &empty), Err(Error::EmptyInput)));
    }
}

fn smoke_config(arch: &str, epochs: usize) -> TrainConfig {
    TrainConfig {
        architecture: arch.into(),
        toy: true,
        data: "synth:k=10,n=80,seed=3".into(),
        epochs,
        batch_size: 16,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn one_epoch_smoke_and_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config("allconv", 1);
    let mut seen = 0;
    let report = run_experiment(&cfg, Some(tmp.path()), &mut |_| seen += 1).unwrap();
    assert_eq!(seen, 1);
    let m = &report.metrics;
    assert_eq!(m.rows.len(), 1);
    let r = &m.rows[0];
    assert!(r.train_loss.is_finite() && r.train_loss >= 0.0);
    assert!(r.val_acc.is_some_and(|v| (0.0..=1.0).contains(&v)));
    assert!(r.epoch_seconds.is_finite() && r.epoch_seconds >= 0.0);
    assert!((0.0..=1.0).contains(&m.test_acc));
    assert_eq!(m.total_params, report.model.param_count());

    let dir = report.out_dir.unwrap();
    assert!(dir.file_name().unwrap().to_string_lossy().starts_with("allconv-toy-s7-"));
    let csv = std::fs::read_to_string(dir.join(METRICS_FILE)).unwrap();
    assert_eq!(MetricsLog::parse_csv(&csv).unwrap(), *m);
    let manifest = RunManifest::from_json(&std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest, report.manifest);
    assert_eq!(manifest.config, cfg);
    // 80 samples: 6 per class to training, round(0.6) = 1 of them carved for validation.
    assert_eq!((manifest.train_data.count, manifest.validation_data.count, manifest.test_data.count), (50, 10, 20));
    let restored = load_checkpoint(&dir.join(CHECKPOINT_DIR)).unwrap();
    let data = synth_glyphs(1, 10, 2, 0.05).unwrap();
    assert_eq!(predict(&restored, &data).unwrap(), predict(&report.model, &data).unwrap());
}

#[test]
fn identical_configs_give_identical_logs() {
    let cfg = smoke_config("densenet", 2);
    let a = run_experiment(&cfg, None, &mut |_| {}).unwrap();
    let b = run_experiment(&cfg, None, &mut |_| {}).unwrap();
    assert_eq!(a.metrics.to_csv_without_timing(), b.metrics.to_csv_without_timing());
    assert_eq!(a.manifest.to_json().unwrap(), b.manifest.to_json().unwrap());
    assert_eq!(a.metrics.rows.len(), 2);
}

#[test]
fn every_architecture_produces_a_log() {
    let mut params = Vec::new();
    for name in ARCHITECTURES {
        let report = run_experiment(&smoke_config(name, 1), None, &mut |_| {}).unwrap();
        assert_eq!(report.metrics.rows.len(), 1, "{name}");
        params.push(report.metrics.total_params);
    }
    assert_eq!(params.len(), 6);
}

#[test]
fn unknown_architecture_and_bad_data() {
    let cfg = TrainConfig { architecture: "lenet".into(), ..smoke_config("x", 1) };
    assert!(matches!(run_experiment(&cfg, None, &mut |_| {}), Err(Error::UnknownArchitecture(_))));
    let cfg = TrainConfig { data: "/nonexistent/tree".into(), classes: Some(10), ..smoke_config("allconv", 1) };
    assert!(matches!(run_experiment(&cfg, None, &mut |_| {}), Err(Error::DatasetLoad(_))));
}

#[test]
fn config_invariants() {
    for bad in [config(0.0, 0.9, 32), config(0.01, 0.9, 0), TrainConfig { epochs: 0, ..TrainConfig::default() }] {
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))), "{bad:?}");
    }
    let d = TrainConfig::default();
    assert_eq!((d.learning_rate, d.momentum, d.batch_size, d.epochs), (0.01, 0.9, 32, 250));
    assert_eq!(d.lr_at(149), 0.01);
    assert!((d.lr_at(150) - 1e-3).abs() < 1e-18);
    assert!((d.lr_at(249) - 1e-4).abs() < 1e-18);
}

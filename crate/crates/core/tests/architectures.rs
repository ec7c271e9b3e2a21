//! Builder structure, shape inference and execution properties of the six networks.

mod common;

use std::collections::HashMap;

use common::random_tensor;
use glyphnet::arch::{
    build_allconv, build_densenet, build_fractalnet, build_named, build_nin, build_resnet, build_vgg16_reduced,
    dense_block_spec, AllConvConfig, FractalConfig, Model, NodeParams, OutputGrad, ResNetConfig, VggConfig,
    ARCHITECTURES,
};
use glyphnet::paramcount::summarize;
use glyphnet::{ArchitectureSpec, Error, Mode, NodeKind, Shape4};

fn spatial(spec: &ArchitectureSpec, id: &str) -> (usize, usize, usize) {
    let shapes = spec.infer_shapes().unwrap();
    let s = shapes[spec.node_index(id).unwrap()];
    (s.c, s.h, s.w)
}

/// Independent per-node count from inferred input shapes.
fn hand_count(spec: &ArchitectureSpec) -> usize {
    let shapes = spec.infer_shapes().unwrap();
    let mut by_id: HashMap<&str, (usize, usize, usize)> = HashMap::new();
    let i = spec.input_shape;
    by_id.insert("input", (i.c, i.h, i.w));
    let mut total = 0;
    for (node, s) in spec.nodes.iter().zip(&shapes) {
        let (c, h, w) = by_id[node.inputs[0].as_str()];
        total += match node.kind {
            NodeKind::Conv { out, kernel, bias, .. } => {
                let mut n = 0;
                for _ in 0..out {
                    n += kernel * kernel * c + bias as usize;
                }
                n
            }
            NodeKind::Dense { out, bias } => out * (c * h * w) + if bias { out } else { 0 },
            NodeKind::BatchNorm => c + c,
            _ => 0,
        };
        by_id.insert(node.id.as_str(), (s.c, s.h, s.w));
    }
    total
}

#[test]
fn allconv_reproduces_reference_shapes() {
    let spec = build_allconv(10).unwrap();
    let expect = [
        ("c1", (128, 30)),
        ("c2", (128, 28)),
        ("s1", (128, 14)),
        ("c3", (256, 12)),
        ("c4", (256, 10)),
        ("s2", (256, 5)),
        ("c5", (512, 3)),
        ("c6", (512, 3)),
    ];
    for (id, (c, hw)) in expect {
        assert_eq!(spatial(&spec, id), (c, hw, hw), "{id}");
    }
    assert_eq!(spatial(&spec, "prob"), (10, 1, 1));
}

#[test]
fn allconv_head_scales_with_classes() {
    let s10 = summarize(&build_allconv(10).unwrap()).unwrap();
    let s50 = summarize(&build_allconv(50).unwrap()).unwrap();
    assert_eq!(s10.row("out").unwrap().params, 5_120);
    assert_eq!(s50.row("out").unwrap().params, 25_600);
    for (a, b) in s10.rows.iter().zip(&s50.rows).filter(|(a, _)| a.id != "out" && a.id != "prob") {
        assert_eq!(a.params, b.params, "{}", a.id);
    }
}

#[test]
fn all_convolutions_in_allconv_are_bias_free() {
    let spec = build_allconv(10).unwrap();
    for n in &spec.nodes {
        match n.kind {
            NodeKind::Conv { bias, .. } | NodeKind::Dense { bias, .. } => assert!(!bias, "{}", n.id),
            _ => {}
        }
    }
}

#[test]
fn parameter_totals_match_hand_count() {
    for k in [10, 13, 50] {
        for name in ARCHITECTURES {
            for toy in [false, true] {
                let spec = build_named(name, k, toy).unwrap();
                assert_eq!(spec.param_count().unwrap(), hand_count(&spec), "{name} toy={toy} K={k}");
                assert_eq!(summarize(&spec).unwrap().total_params, hand_count(&spec));
            }
        }
    }
    let reduced = AllConvConfig::reduced_c6().build(10).unwrap();
    assert_eq!(reduced.param_count().unwrap(), hand_count(&reduced));
}

#[test]
fn budgets_within_ten_percent() {
    let cases: [(&str, f64); 5] = [
        ("vgg16", 8.43e6),
        ("nin", 2.81e6),
        ("resnet", 5.63e6),
        ("fractalnet", 7.84e6),
        ("densenet", 4.25e6),
    ];
    for (name, target) in cases {
        let total = build_named(name, 50, false).unwrap().param_count().unwrap() as f64;
        let dev = (total - target).abs() / target;
        assert!(dev <= 0.10, "{name}: {total} vs {target} ({:.1}%)", dev * 100.0);
    }
    let reduced = AllConvConfig::reduced_c6().build(10).unwrap().param_count().unwrap() as f64;
    assert!((reduced - 2.26e6).abs() / 2.26e6 <= 0.02, "{reduced}");
}

#[test]
fn every_builder_infers_to_class_vector() {
    for name in ARCHITECTURES {
        for toy in [false, true] {
            let spec = build_named(name, 13, toy).unwrap();
            let shapes = spec.validate().unwrap();
            let last = shapes.last().unwrap();
            assert_eq!((last.c, last.h, last.w), (13, 1, 1), "{name}");
        }
    }
}

#[test]
fn spec_text_round_trips_for_every_builder() {
    for name in ARCHITECTURES {
        for toy in [false, true] {
            let text = build_named(name, 10, toy).unwrap().to_text();
            let again = ArchitectureSpec::parse(&text).unwrap().to_text();
            assert_eq!(text, again, "{name}");
        }
    }
}

#[test]
fn committed_spec_files_match_builders() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../specs");
    let mut cases: Vec<(String, ArchitectureSpec)> = vec![
        ("allconv".into(), build_named("allconv", 10, false).unwrap()),
        ("allconv-reduced-c6".into(), AllConvConfig::reduced_c6().build(10).unwrap()),
    ];
    for name in ["vgg16", "nin", "resnet", "fractalnet", "densenet"] {
        cases.push((name.into(), build_named(name, 50, false).unwrap()));
    }
    for name in ARCHITECTURES {
        cases.push((format!("{name}-toy"), build_named(name, 10, true).unwrap()));
    }
    for (file, spec) in cases {
        let text = std::fs::read_to_string(format!("{root}/{file}.spec")).unwrap();
        assert_eq!(text, spec.to_text(), "{file}.spec is stale");
    }
}

#[test]
fn vgg_full_width_halves_to_one_pixel() {
    let spec = build_vgg16_reduced(2, 1.0).unwrap();
    let sizes: Vec<usize> = (1..=5).map(|b| spatial(&spec, &format!("b{b}p")).1).collect();
    assert_eq!(sizes, [16, 8, 4, 2, 1]);
    let convs = spec.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Conv { .. })).count();
    let dense = spec.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Dense { .. })).count();
    assert_eq!((convs, dense), (13, 3));
}

#[test]
fn vgg_widths_are_multiples_of_eight() {
    for s in [0.1, 0.33, 0.5, 0.75, 1.0] {
        let cfg = VggConfig::scaled(s).unwrap();
        assert!(cfg.widths.iter().all(|w| w % 8 == 0 && *w > 0), "{s}: {:?}", cfg.widths);
    }
    for bad in [0.0, -0.5, 1.01, f64::NAN] {
        assert!(matches!(VggConfig::scaled(bad), Err(Error::InvalidScale(_))), "{bad}");
    }
}

#[test]
fn nin_pointwise_convs_preserve_extent() {
    let spec = build_nin(10).unwrap();
    let shapes = spec.infer_shapes().unwrap();
    let mut seen = 0;
    for (i, n) in spec.nodes.iter().enumerate() {
        if let NodeKind::Conv { kernel: 1, .. } = n.kind {
            let input = spec.node_index(&n.inputs[0]).map(|j| shapes[j]).unwrap();
            assert_eq!((input.h, input.w), (shapes[i].h, shapes[i].w), "{}", n.id);
            seen += 1;
        }
    }
    assert_eq!(seen, 6);
}

#[test]
fn resnet_adds_take_equal_shapes() {
    let spec = build_resnet(10, 2).unwrap();
    let shapes = spec.infer_shapes().unwrap();
    for n in spec.nodes.iter().filter(|n| n.kind == NodeKind::Add) {
        let ins: Vec<_> = n.inputs.iter().map(|i| shapes[spec.node_index(i).unwrap()]).collect();
        assert!(ins.windows(2).all(|w| w[0] == w[1]), "{}", n.id);
    }
}

#[test]
fn zeroed_residual_branch_passes_shortcut() {
    let spec = ResNetConfig::toy().build(10).unwrap();
    let mut model = Model::init(spec, 3).unwrap();
    let batch = Shape4::new(2, 3, 32, 32).unwrap();
    for id in ["s1b1bc", "s2b1bc"] {
        let i = model.spec().node_index(id).unwrap();
        if let NodeParams::Conv(p) = &mut model.params_mut()[i] {
            p.weights.data_mut().fill(0.0);
        }
    }
    let x = random_tensor(&batch.to_vec(), 4, 0.0, 1.0);
    let (_, tape) = model.forward(&x, Mode::Train).unwrap();
    let slot = |id: &str| model.spec().slot_of(id).unwrap();
    // Stage 1 has an identity shortcut from the stem, stage 2 a projection.
    for (out, shortcut) in [("s1b1out", "stemr"), ("s2b1out", "s2b1pb")] {
        let expect = tape.value(slot(shortcut)).map(|v| v.max(0.0));
        assert_eq!(tape.value(slot(out)).data(), expect.data(), "{out}");
    }
}

/// Longest input→join path through a fractal block, counted in convolutions.
fn deepest_column(spec: &ArchitectureSpec, block: &str) -> usize {
    let mut depth: HashMap<&str, usize> = HashMap::new();
    for n in &spec.nodes {
        let from = n.inputs.iter().map(|i| depth.get(i.as_str()).copied().unwrap_or(0)).max().unwrap_or(0);
        let own = matches!(n.kind, NodeKind::Conv { .. }) && n.id.starts_with(block);
        depth.insert(&n.id, from + own as usize);
    }
    depth[format!("{block}j").as_str()]
}

#[test]
fn fractal_deepest_column_doubles_with_depth() {
    for c in 2..=4 {
        let spec = FractalConfig { depth: c, widths: vec![4, 4], input_channels: 3 }.build(10).unwrap();
        assert_eq!(deepest_column(&spec, "f1"), 1 << (c - 1), "C={c}");
        let convs = spec.nodes.iter().filter(|n| n.id.starts_with("f1") && matches!(n.kind, NodeKind::Conv { .. })).count();
        assert_eq!(convs, (1 << c) - 1, "C={c}");
    }
}

#[test]
fn fractal_depth_one_is_plain_chain() {
    let spec = FractalConfig { depth: 1, widths: vec![8, 8], input_channels: 3 }.build(10).unwrap();
    assert!(spec.nodes.iter().all(|n| n.kind != NodeKind::Mean));
    assert!(spec.nodes.iter().all(|n| n.inputs.len() == 1));
}

#[test]
fn fractal_depth_bounds() {
    for d in [0, 5] {
        assert!(matches!(build_fractalnet(10, d), Err(Error::InvalidDepth(_))));
    }
}

#[test]
fn mean_of_identical_branches_is_that_branch() {
    let input = Shape4::new(2, 2, 4, 4).unwrap();
    let mut spec = ArchitectureSpec::new("join", input, 2);
    spec.push("a", NodeKind::Relu, &["input"]);
    spec.push("j", NodeKind::Mean, &["a", "a", "a"]);
    spec.push("g", NodeKind::Gap, &["j"]);
    spec.push("fc", NodeKind::Dense { out: 2, bias: false }, &["g"]);
    spec.push("prob", NodeKind::Softmax, &["fc"]);
    let mut model = Model::init(spec, 1).unwrap();
    let x = random_tensor(&input.to_vec(), 2, -1.0, 1.0);
    let (_, tape) = model.forward(&x, Mode::Train).unwrap();
    assert_eq!(tape.value(1).data(), tape.value(2).data());
}

#[test]
fn dense_block_channel_law() {
    let input = Shape4::new(2, 16, 8, 8).unwrap();
    let block = dense_block_spec(input, 3, 4);
    // Shape inference.
    let out = spatial(&block, &block.output);
    assert_eq!(out, (28, 8, 8));
    // Execution: attach a head and read the block's value off the tape.
    let mut spec = block.clone();
    let o = spec.output.clone();
    spec.push("g", NodeKind::Gap, &[&o]);
    spec.push("fc", NodeKind::Dense { out: 2, bias: true }, &["g"]);
    spec.push("prob", NodeKind::Softmax, &["fc"]);
    let mut model = Model::init(spec, 9).unwrap();
    let (_, tape) = model.forward(&random_tensor(&input.to_vec(), 1, 0.0, 1.0), Mode::Train).unwrap();
    assert_eq!(tape.value(model.spec().slot_of(&o).unwrap()).shape(), &[2, 28, 8, 8]);
}

#[test]
fn empty_dense_block_is_identity_on_channels() {
    let input = Shape4::new(1, 16, 8, 8).unwrap();
    let block = dense_block_spec(input, 3, 0);
    assert!(block.nodes.is_empty());
    assert_eq!(block.output, "input");
}

#[test]
fn densenet_default_layout() {
    let spec = build_densenet(50, 24, 12, 3).unwrap();
    assert_eq!(spatial(&spec, "d1out").0, 48 + 12 * 24);
    assert_eq!(spatial(&spec, "t1p"), (336, 16, 16));
    assert_eq!(spatial(&spec, "t2p"), (624, 8, 8));
    assert_eq!(spatial(&spec, "d3out"), (912, 8, 8));
}

#[test]
fn zero_head_gives_uniform_output() {
    for name in ARCHITECTURES {
        let mut model = Model::init(build_named(name, 10, true).unwrap(), 5).unwrap();
        let head = model.spec().node_index(if name == "nin" { "m3c3" } else if name == "vgg16" { "fc3" } else if name == "allconv" { "out" } else { "fc" }).unwrap();
        for t in model.params_mut()[head].learnables_mut() {
            t.data_mut().fill(0.0);
        }
        let x = random_tensor(&[2, 3, 32, 32], 6, 0.0, 1.0);
        let p = model.predict(&x).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.1).abs() < 1e-15), "{name}");
    }
}

#[test]
fn eval_forward_is_bit_identical() {
    for name in ARCHITECTURES {
        let model = Model::init(build_named(name, 10, true).unwrap(), 7).unwrap();
        let x = random_tensor(&[2, 3, 32, 32], 8, 0.0, 1.0);
        assert_eq!(model.predict(&x).unwrap(), model.predict(&x).unwrap(), "{name}");
    }
}

#[test]
fn eval_mode_forward_returns_empty_tape() {
    let mut model = Model::init(build_named("allconv", 10, true).unwrap(), 1).unwrap();
    let x = random_tensor(&[1, 3, 32, 32], 2, 0.0, 1.0);
    let (p, tape) = model.forward(&x, Mode::Eval).unwrap();
    assert!(tape.is_empty());
    assert_eq!(p.shape(), &[1, 10]);
    assert!(p.data().chunks(10).all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-12));
}

#[test]
fn argmax_invariant_under_shared_head_bias_shift() {
    let mut model = Model::init(build_named("resnet", 10, true).unwrap(), 11).unwrap();
    let x = random_tensor(&[3, 3, 32, 32], 12, 0.0, 1.0);
    let argmax = |p: &glyphnet::Tensor| p.data().chunks(10).map(|r| r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0).collect::<Vec<_>>();
    let before = argmax(&model.predict(&x).unwrap());
    let fc = model.spec().node_index("fc").unwrap();
    if let NodeParams::Dense(p) = &mut model.params_mut()[fc] {
        p.bias.as_mut().unwrap().data_mut().iter_mut().for_each(|b| *b += 3.7);
    }
    assert_eq!(argmax(&model.predict(&x).unwrap()), before);
}

#[test]
fn backward_is_linear_in_output_gradient() {
    let mut model = Model::init(build_named("densenet", 10, true).unwrap(), 13).unwrap();
    let x = random_tensor(&[2, 3, 32, 32], 14, 0.0, 1.0);
    let (_, tape) = model.forward(&x, Mode::Train).unwrap();
    let r = random_tensor(&[2, 10], 15, -1.0, 1.0);
    let c = 3.5;
    let g1 = model.backward(&tape, OutputGrad::Logits(&r)).unwrap();
    let g2 = model.backward(&tape, OutputGrad::Logits(&r.scale(c))).unwrap();
    for (a, b) in g1.iter().zip(g2.iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x * c - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} {y}");
        }
    }
}

#[test]
fn duplicate_consumer_doubles_gradient() {
    let input = Shape4::new(1, 1, 2, 2).unwrap();
    let build = |dup: bool| {
        let mut spec = ArchitectureSpec::new("dup", input, 2);
        let head_in = if dup { spec.push("s", NodeKind::Add, &["input", "input"]) } else { "input".to_string() };
        spec.push("fc", NodeKind::Dense { out: 2, bias: false }, &[&head_in]);
        spec.push("prob", NodeKind::Softmax, &["fc"]);
        spec
    };
    let x = random_tensor(&input.to_vec(), 1, -1.0, 1.0);
    let seed = random_tensor(&[1, 2], 2, -1.0, 1.0);
    let input_grad = |spec: ArchitectureSpec| {
        let mut m = Model::init(spec, 3).unwrap();
        let (_, tape) = m.forward(&x, Mode::Train).unwrap();
        m.backward(&tape, OutputGrad::Logits(&seed)).unwrap().input
    };
    let single = input_grad(build(false));
    let double = input_grad(build(true));
    for (a, b) in single.data().iter().zip(double.data()) {
        assert!((2.0 * a - b).abs() < 1e-15);
    }
}

//! Test-only oracles, independent of the library's own gradient code.
#![allow(dead_code)]

use glyphnet::arch::{Model, OutputGrad};
use glyphnet::{Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Which value the scalar probe reads.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    /// `L = Σ r ⊙ output`.
    Output,
    /// `L = Σ r ⊙ logits` (the value feeding the final softmax).
    Logits,
}

/// `L(model, x) = Σ r ⊙ probed`, evaluated in train mode.
fn scalar(model: &mut Model, x: &Tensor, r: &Tensor, probe: Probe) -> f64 {
    let (out, tape) = model.forward(x, Mode::Train).expect("forward");
    let v = match probe {
        Probe::Output => out,
        Probe::Logits => model.logits(&tape).expect("logits").clone(),
    };
    assert_eq!(v.len(), r.len());
    v.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

#[derive(Debug)]
pub struct Check {
    pub what: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl Check {
    pub fn err(&self) -> f64 {
        rel_err(self.analytic, self.numeric)
    }
}

/// Central, forward and backward difference quotients of `f` around `orig`.
fn differences(mut f: impl FnMut(f64) -> f64, orig: f64) -> (f64, bool) {
    let plus = f(orig + H);
    let minus = f(orig - H);
    let mid = f(orig);
    let (fwd, bwd) = ((plus - mid) / H, (mid - minus) / H);
    // One-sided slopes that disagree mean a ReLU/max kink lies inside ±H:
    // the central difference there does not estimate the derivative.
    ((plus - minus) / (2.0 * H), rel_err(fwd, bwd) > TOLERANCE)
}

#[derive(Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    /// Sampled coordinates rejected because a kink lies within ±H.
    pub kinks: usize,
}

const MAX_DRAWS: usize = 20;

/// Compares analytic gradients against central differences on `param_coords`
/// randomly chosen learnable coordinates and `input_coords` input coordinates.
/// Coordinates whose ±H window straddles a non-differentiable point are
/// redrawn (at most `MAX_DRAWS` times the requested count).
pub fn gradcheck(model: &mut Model, x: &Tensor, probe: Probe, param_coords: usize, input_coords: usize, seed: u64) -> Report {
    let out_len = {
        let (out, tape) = model.forward(x, Mode::Train).unwrap();
        match probe {
            Probe::Output => out.len(),
            Probe::Logits => model.logits(&tape).unwrap().len(),
        }
    };
    let r = random_tensor(&[out_len], seed ^ 0x5eed, -1.0, 1.0);
    let (out, tape) = model.forward(x, Mode::Train).unwrap();
    let grads = match probe {
        Probe::Output => {
            let r = r.clone().reshape(out.shape()).unwrap();
            model.backward(&tape, OutputGrad::Output(&r)).unwrap()
        }
        Probe::Logits => {
            let shape = model.logits(&tape).unwrap().shape().to_vec();
            let r = r.clone().reshape(&shape).unwrap();
            model.backward(&tape, OutputGrad::Logits(&r)).unwrap()
        }
    };

    // Flat index over (node, tensor, element) of all learnables.
    let mut index = Vec::new();
    for (node, params) in grads.nodes.iter().enumerate() {
        for (t, g) in params.iter().enumerate() {
            for e in 0..g.len() {
                index.push((node, t, e));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report::default();
    let ids: Vec<String> = model.spec().nodes.iter().map(|n| n.id.clone()).collect();
    let mut found = 0;
    let mut draws = 0;
    while !index.is_empty() && found < param_coords && draws < MAX_DRAWS * param_coords {
        draws += 1;
        let (node, t, e) = index[rng.random_range(0..index.len())];
        let orig = model.params()[node].learnables()[t].1.data()[e];
        let (numeric, kink) = differences(
            |v| {
                model.params_mut()[node].learnables_mut()[t].data_mut()[e] = v;
                scalar(model, x, &r, probe)
            },
            orig,
        );
        if kink {
            report.kinks += 1;
            continue;
        }
        found += 1;
        let name = model.params()[node].learnables()[t].0;
        report.checks.push(Check {
            what: format!("{}.{name}[{e}]", ids[node]),
            analytic: grads.nodes[node][t].data()[e],
            numeric,
        });
    }
    let (mut found, mut draws) = (0, 0);
    while found < input_coords && draws < MAX_DRAWS * input_coords {
        draws += 1;
        let e = rng.random_range(0..x.len());
        let mut xp = x.clone();
        let (numeric, kink) = differences(
            |v| {
                xp.data_mut()[e] = v;
                scalar(model, &xp, &r, probe)
            },
            x.data()[e],
        );
        if kink {
            report.kinks += 1;
            continue;
        }
        found += 1;
        report.checks.push(Check {
            what: format!("input[{e}]"),
            analytic: grads.input.data()[e],
            numeric,
        });
    }
    report
}

pub fn worst(report: &Report) -> Option<&Check> {
    report.checks.iter().max_by(|a, b| a.err().total_cmp(&b.err()))
}

pub fn assert_checks(label: &str, report: &Report, min_coords: usize) {
    let bad: Vec<&Check> = report.checks.iter().filter(|c| c.err() >= TOLERANCE).collect();
    assert!(bad.is_empty(), "{label}: {} of {} coordinates off: {bad:#?}", bad.len(), report.checks.len());
    assert!(
        report.checks.len() >= min_coords,
        "{label}: only {} smooth coordinates ({} kinks)",
        report.checks.len(),
        report.kinks
    );
}

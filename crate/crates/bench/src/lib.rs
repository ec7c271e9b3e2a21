//! Shared fixtures for the kernel benchmarks.

use glyphnet::arch::{build_named, Model};
use glyphnet::data::{synth::SynthOptions, Dataset};
use glyphnet::Tensor;

/// Deterministic pseudo-random tensor with values in [-1, 1).
pub fn fixture(shape: &[usize], seed: u64) -> Tensor {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    Tensor::from_fn(shape, |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    })
}

pub fn toy_model(arch: &str, classes: usize) -> Model {
    Model::init(build_named(arch, classes, true).expect("known architecture"), 0).expect("valid spec")
}

pub fn glyphs(classes: usize, count: usize) -> Dataset {
    glyphnet::data::synth::generate(&SynthOptions {
        classes,
        count,
        seed: 0,
        noise: 0.05,
        jitter: 1.0,
        channels: 3,
    })
    .expect("valid options")
}

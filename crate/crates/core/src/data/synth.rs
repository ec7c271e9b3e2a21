//! Procedural stroke glyphs: a desk-scale stand-in for scanned characters.
//!
//! Each class is a distinct combination of three strokes from a fixed
//! library of lines and arcs. Samples are rendered anti-aliased at 32×32
//! after a random affine jitter (rotation, scale, translation) and get
//! additive Gaussian noise.

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, SplitTag, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_CLASSES: usize = 64;
const STROKES_PER_GLYPH: usize = 3;
const MAX_ROTATION: f64 = 15.0 * PI / 180.0;
const MAX_SHIFT: f64 = 3.0;
const MAX_SCALE_DELTA: f64 = 0.15;
/// Pixels per unit of glyph space ([-1, 1] spans 24 px).
const GLYPH_SCALE: f64 = 12.0;
const HALF_WIDTH: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub classes: usize,
    /// Total samples; sample `i` has label `i % classes`.
    pub count: usize,
    pub seed: u64,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    /// Multiplier on the rotation/shift/scale ranges (0 disables jitter).
    pub jitter: f64,
    pub channels: usize,
}

type Polyline = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, r: f64, from: f64, to: f64) -> Polyline {
    let steps = 16;
    (0..=steps)
        .map(|i| {
            let t = from + (to - from) * i as f64 / steps as f64;
            (cx + r * t.cos(), cy + r * t.sin())
        })
        .collect()
}

/// Sixteen strokes in glyph space (x right, y down).
fn stroke_library() -> &'static [Polyline] {
    static LIB: OnceLock<Vec<Polyline>> = OnceLock::new();
    LIB.get_or_init(|| {
        vec![
            vec![(-0.8, -0.7), (0.8, -0.7)],
            vec![(-0.8, 0.0), (0.8, 0.0)],
            vec![(-0.8, 0.7), (0.8, 0.7)],
            vec![(-0.7, -0.8), (-0.7, 0.8)],
            vec![(0.0, -0.8), (0.0, 0.8)],
            vec![(0.7, -0.8), (0.7, 0.8)],
            vec![(-0.8, -0.8), (0.8, 0.8)],
            vec![(-0.8, 0.8), (0.8, -0.8)],
            arc(0.0, 0.0, 0.55, 0.0, TAU),
            arc(0.0, -0.3, 0.45, PI, TAU),
            arc(0.0, 0.3, 0.45, 0.0, PI),
            arc(0.2, 0.0, 0.6, 0.5 * PI, 1.5 * PI),
            arc(-0.2, 0.0, 0.6, -0.5 * PI, 0.5 * PI),
            vec![(-0.4, -0.4), (0.4, -0.4), (0.4, 0.2)],
            vec![(-0.6, 0.5), (0.0, -0.5), (0.6, 0.5)],
            arc(0.4, -0.4, 0.25, 0.0, TAU),
        ]
    })
}

/// All 3-element stroke subsets in lexicographic order.
fn combinations() -> &'static [[usize; STROKES_PER_GLYPH]] {
    static COMBOS: OnceLock<Vec<[usize; STROKES_PER_GLYPH]>> = OnceLock::new();
    COMBOS.get_or_init(|| {
        let n = stroke_library().len();
        let mut out = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    out.push([a, b, c]);
                }
            }
        }
        out
    })
}

/// Stroke indices of `class`. The stride 97 is coprime with the 560
/// combinations, so distinct classes get distinct subsets.
pub fn class_strokes(class: usize) -> [usize; STROKES_PER_GLYPH] {
    let combos = combinations();
    combos[(class * 97) % combos.len()]
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    rotation: f64,
    scale: f64,
    dx: f64,
    dy: f64,
}

impl Affine {
    const IDENTITY: Affine = Affine {
        rotation: 0.0,
        scale: 1.0,
        dx: 0.0,
        dy: 0.0,
    };

    fn sample(rng: &mut impl Rng, jitter: f64) -> Affine {
        let mut sym = |limit: f64| if limit > 0.0 { rng.random_range(-limit..=limit) } else { 0.0 };
        Affine {
            rotation: sym(MAX_ROTATION * jitter),
            scale: 1.0 + sym(MAX_SCALE_DELTA * jitter),
            dx: sym(MAX_SHIFT * jitter),
            dy: sym(MAX_SHIFT * jitter),
        }
    }

    /// Glyph space → pixel coordinates.
    fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let k = GLYPH_SCALE * self.scale;
        let centre = IMAGE_SIZE as f64 / 2.0;
        (centre + self.dx + k * (c * x - s * y), centre + self.dy + k * (s * x + c * y))
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// One 32×32 grayscale glyph in `[0, 1]`, row-major.
fn render(class: usize, transform: &Affine) -> Vec<f64> {
    let lib = stroke_library();
    let segments: Vec<((f64, f64), (f64, f64))> = class_strokes(class)
        .iter()
        .flat_map(|&s| {
            let pts: Vec<(f64, f64)> = lib[s].iter().map(|&p| transform.apply(p)).collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();
    let mut out = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = segments
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            out.push((HALF_WIDTH + 0.5 - d).clamp(0.0, 1.0));
        }
    }
    out
}

pub fn generate(opts: &SynthOptions) -> Result<Dataset> {
    if opts.classes == 0 || opts.classes > MAX_CLASSES {
        return Err(Error::InvalidConfig(format!(
            "synthetic glyphs support 1..={MAX_CLASSES} classes, got {}",
            opts.classes
        )));
    }
    if opts.count == 0 {
        return Err(Error::EmptyInput);
    }
    if !(opts.noise >= 0.0 && opts.jitter >= 0.0) {
        return Err(Error::InvalidConfig("noise and jitter must be non-negative".into()));
    }
    let noise = Normal::new(0.0, opts.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut data = Vec::with_capacity(opts.count * opts.channels * plane);
    let mut labels = Vec::with_capacity(opts.count);
    for i in 0..opts.count {
        let class = i % opts.classes;
        let transform = if opts.jitter > 0.0 { Affine::sample(&mut rng, opts.jitter) } else { Affine::IDENTITY };
        let mut img = render(class, &transform);
        if opts.noise > 0.0 {
            img.iter_mut()
                .for_each(|v| *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
        for _ in 0..opts.channels {
            data.extend_from_slice(&img);
        }
        labels.push(class);
    }
    let images = Tensor::new(vec![opts.count, opts.channels, IMAGE_SIZE, IMAGE_SIZE], data)?;
    Dataset::new(images, labels, opts.classes, SplitTag::Full)
}

/// `per_class` samples of each of `classes` glyph classes, 3 channels, full jitter.
pub fn synth_glyphs(seed: u64, classes: usize, per_class: usize, noise: f64) -> Result<Dataset> {
    generate(&SynthOptions {
        classes,
        count: classes * per_class,
        seed,
        noise,
        jitter: 1.0,
        channels: 3,
    })
}

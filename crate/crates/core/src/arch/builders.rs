//! Builders for the six benchmark networks.
//!
//! Each network has a config struct. The `build_*` functions apply the default
//! (full-size) configuration; `toy()` configs give narrow variants that train
//! in seconds on a CPU.

use crate::arch::spec::{ArchitectureSpec, NodeKind, INPUT_ID};
use crate::error::{Error, Result};
use crate::tensor::Shape4;

/// Parameter budgets (millions of parameters) the default configurations are sized against.
pub const BUDGET_VGG16: f64 = 8.43e6;
pub const BUDGET_ALLCONV: f64 = 2.26e6;
pub const BUDGET_NIN: f64 = 2.81e6;
pub const BUDGET_RESNET: f64 = 5.63e6;
pub const BUDGET_FRACTALNET: f64 = 7.84e6;
pub const BUDGET_DENSENET: f64 = 4.25e6;

pub const ARCHITECTURES: [&str; 6] = ["vgg16", "allconv", "nin", "resnet", "fractalnet", "densenet"];

pub fn default_input(channels: usize) -> Shape4 {
    Shape4 {
        n: 1,
        c: channels,
        h: 32,
        w: 32,
    }
}

/// Thin helper that appends nodes with generated ids.
struct Net {
    spec: ArchitectureSpec,
}

impl Net {
    fn new(name: &str, input: Shape4, classes: usize) -> Self {
        Net {
            spec: ArchitectureSpec::new(name, input, classes),
        }
    }

    fn add(&mut self, id: String, kind: NodeKind, inputs: &[&str]) -> String {
        self.spec.push(id, kind, inputs)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, id: String, x: &str, out: usize, k: usize, pad: usize, bias: bool) -> String {
        self.add(
            id,
            NodeKind::Conv {
                out,
                kernel: k,
                stride: 1,
                padding: pad,
                bias,
            },
            &[x],
        )
    }

    /// conv (no bias) → batchnorm → relu, same padding. Returns the relu id.
    fn conv_bn_relu(&mut self, prefix: &str, x: &str, out: usize, k: usize) -> String {
        let c = self.conv(format!("{prefix}c"), x, out, k, k / 2, false);
        let b = self.add(format!("{prefix}b"), NodeKind::BatchNorm, &[&c]);
        self.add(format!("{prefix}r"), NodeKind::Relu, &[&b])
    }

    fn head(&mut self, x: &str, classes: usize, bias: bool) -> ArchitectureSpec {
        let g = self.add("gap".into(), NodeKind::Gap, &[x]);
        let fc = self.add("fc".into(), NodeKind::Dense { out: classes, bias }, &[&g]);
        self.add("prob".into(), NodeKind::Softmax, &[&fc]);
        self.spec.clone()
    }
}

fn check_classes(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 classes, got {k}")));
    }
    Ok(())
}

// ---------------------------------------------------------------- All-Conv

/// Two valid 3×3 convolutions per stage, max pooling between stages, then a
/// 3×3 and a 1×1 convolution, global average pooling and a bias-free linear head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllConvConfig {
    /// Output maps of C1..C6.
    pub widths: [usize; 6],
    /// When set, C6 reads only the first `n` maps of C5's output.
    pub c6_inputs: Option<usize>,
    pub input_channels: usize,
}

impl AllConvConfig {
    pub fn full() -> Self {
        AllConvConfig {
            widths: [128, 128, 256, 256, 512, 512],
            c6_inputs: None,
            input_channels: 3,
        }
    }

    /// Variant whose C6 holds 26,624 weights (1×1, 52 → 512 maps).
    pub fn reduced_c6() -> Self {
        AllConvConfig {
            c6_inputs: Some(52),
            ..Self::full()
        }
    }

    pub fn toy() -> Self {
        AllConvConfig {
            widths: [8, 8, 16, 16, 32, 32],
            c6_inputs: None,
            input_channels: 3,
        }
    }

    pub fn build(&self, classes: usize) -> Result<ArchitectureSpec> {
        check_classes(classes)?;
        let name = if self.c6_inputs.is_some() { "allconv-reduced-c6" } else { "allconv" };
        let mut net = Net::new(name, default_input(self.input_channels), classes);
        let w = self.widths;
        let mut x = INPUT_ID.to_string();
        let conv = |net: &mut Net, x: &str, i: usize, k: usize| -> String {
            let c = net.conv(format!("c{i}"), x, w[i - 1], k, 0, false);
            net.add(format!("r{i}"), NodeKind::Relu, &[&c])
        };
        x = conv(&mut net, &x, 1, 3);
        x = conv(&mut net, &x, 2, 3);
        x = net.add("s1".into(), NodeKind::MaxPool, &[&x]);
        x = conv(&mut net, &x, 3, 3);
        x = conv(&mut net, &x, 4, 3);
        x = net.add("s2".into(), NodeKind::MaxPool, &[&x]);
        x = conv(&mut net, &x, 5, 3);
        if let Some(n) = self.c6_inputs {
            x = net.add("c6in".into(), NodeKind::Slice { start: 0, len: n }, &[&x]);
        }
        x = conv(&mut net, &x, 6, 1);
        let g = net.add("gap1".into(), NodeKind::Gap, &[&x]);
        let out = net.add("out".into(), NodeKind::Dense { out: classes, bias: false }, &[&g]);
        net.add("prob".into(), NodeKind::Softmax, &[&out]);
        Ok(net.spec)
    }
}

pub fn build_allconv(classes: usize) -> Result<ArchitectureSpec> {
    AllConvConfig::full().build(classes)
}

// ---------------------------------------------------------------- VGG-16

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VggConfig {
    /// Channels of the five conv blocks (2, 2, 3, 3, 3 layers).
    pub widths: [usize; 5],
    /// Width of the two hidden fully connected layers.
    pub hidden: usize,
    pub input_channels: usize,
}

pub const VGG_BASE_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
pub const VGG_DEFAULT_SCALE: f64 = 0.75;
const VGG_BLOCK_DEPTHS: [usize; 5] = [2, 2, 3, 3, 3];

impl VggConfig {
    /// Base widths times `scale`, rounded to the nearest multiple of 8 (at least 8).
    pub fn scaled(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::InvalidScale(scale));
        }
        let widths = VGG_BASE_WIDTHS.map(|c| (((c as f64 * scale) / 8.0).round() as usize).max(1) * 8);
        Ok(VggConfig {
            widths,
            hidden: widths[4],
            input_channels: 3,
        })
    }

    pub fn toy() -> Self {
        VggConfig {
            widths: [8, 8, 16, 16, 16],
            hidden: 32,
            input_channels: 3,
        }
    }

    pub fn build(&self, classes: usize) -> Result<ArchitectureSpec> {
        check_classes(classes)?;
        let mut net = Net::new("vgg16", default_input(self.input_channels), classes);
        let mut x = INPUT_ID.to_string();
        for (b, (&width, &depth)) in self.widths.iter().zip(&VGG_BLOCK_DEPTHS).enumerate() {
            for l in 0..depth {
                let c = net.conv(format!("b{}c{}", b + 1, l + 1), &x, width, 3, 1, true);
                x = net.add(format!("b{}r{}", b + 1, l + 1), NodeKind::Relu, &[&c]);
            }
            x = net.add(format!("b{}p", b + 1), NodeKind::MaxPool, &[&x]);
        }
        for i in 1..=2 {
            let fc = net.add(format!("fc{i}"), NodeKind::Dense { out: self.hidden, bias: true }, &[&x]);
            x = net.add(format!("fr{i}"), NodeKind::Relu, &[&fc]);
        }
        let fc = net.add("fc3".into(), NodeKind::Dense { out: classes, bias: true }, &[&x]);
        net.add("prob".into(), NodeKind::Softmax, &[&fc]);
        Ok(net.spec)
    }
}

pub fn build_vgg16_reduced(classes: usize, width_scale: f64) -> Result<ArchitectureSpec> {
    VggConfig::scaled(width_scale)?.build(classes)
}

// ---------------------------------------------------------------- NiN

/// Three mlpconv blocks (k×k conv then two 1×1 convs); the last 1×1 conv
/// emits one map per class and global average pooling gives the logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NinConfig {
    pub width: usize,
    pub input_channels: usize,
}

pub const NIN_DEFAULT_WIDTH: usize = 264;
const NIN_KERNELS: [usize; 3] = [5, 5, 3];

impl NinConfig {
    pub fn full() -> Self {
        NinConfig {
            width: NIN_DEFAULT_WIDTH,
            input_channels: 3,
        }
    }

    pub fn toy() -> Self {
        NinConfig {
            width: 36,
            input_channels: 3,
        }
    }

    pub fn build(&self, classes: usize) -> Result<ArchitectureSpec> {
        check_classes(classes)?;
        let mut net = Net::new("nin", default_input(self.input_channels), classes);
        let mut x = INPUT_ID.to_string();
        for (b, &k) in NIN_KERNELS.iter().enumerate() {
            let blk = b + 1;
            let c = net.conv(format!("m{blk}c1"), &x, self.width, k, k / 2, true);
            x = net.add(format!("m{blk}r1"), NodeKind::Relu, &[&c]);
            let c = net.conv(format!("m{blk}c2"), &x, self.width, 1, 0, true);
            x = net.add(format!("m{blk}r2"), NodeKind::Relu, &[&c]);
            if blk < 3 {
                let c = net.conv(format!("m{blk}c3"), &x, self.width, 1, 0, true);
                x = net.add(format!("m{blk}r3"), NodeKind::Relu, &[&c]);
                x = net.add(format!("m{blk}p"), NodeKind::MaxPool, &[&x]);
            } else {
                x = net.conv(format!("m{blk}c3"), &x, classes, 1, 0, true);
            }
        }
        let g = net.add("gap".into(), NodeKind::Gap, &[&x]);
        net.add("prob".into(), NodeKind::Softmax, &[&g]);
        Ok(net.spec)
    }
}

pub fn build_nin(classes: usize) -> Result<ArchitectureSpec> {
    NinConfig::full().build(classes)
}

// ---------------------------------------------------------------- ResNet

/// Stem conv, then three stages of basic residual blocks at widths
/// `base, 2·base, 4·base`. Stages 2 and 3 start with 2×2 max pooling; a 1×1
/// conv + batchnorm projection replaces the identity when channels change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResNetConfig {
    pub base: usize,
    pub blocks_per_stage: usize,
    pub input_channels: usize,
}

impl ResNetConfig {
    pub fn toy() -> Self {
        ResNetConfig {
            base: 8,
            blocks_per_stage: 1,
            input_channels: 3,
        }
    }

    pub fn build(&self, classes: usize) -> Result<ArchitectureSpec> {
        check_classes(classes)?;
        if self.blocks_per_stage == 0 || self.base == 0 {
            return Err(Error::InvalidConfig("resnet needs at least one block and positive width".into()));
        }
        let mut net = Net::new("resnet", default_input(self.input_channels), classes);
        let mut x = net.conv_bn_relu("stem", INPUT_ID, self.base, 3);
        let mut channels = self.base;
        for stage in 0..3 {
            let width = self.base << stage;
            if stage > 0 {
                x = net.add(format!("pool{}", stage + 1), NodeKind::MaxPool, &[&x]);
            }
            for blk in 0..self.blocks_per_stage {
                let p = format!("s{}b{}", stage + 1, blk + 1);
                let a = net.conv_bn_relu(&format!("{p}a"), &x, width, 3);
                let c = net.conv(format!("{p}bc"), &a, width, 3, 1, false);
                let branch = net.add(format!("{p}bb"), NodeKind::BatchNorm, &[&c]);
                let shortcut = if channels != width {
                    let pc = net.conv(format!("{p}pc"), &x, width, 1, 0, false);
                    net.add(format!("{p}pb"), NodeKind::BatchNorm, &[&pc])
                } else {
                    x.clone()
                };
                let sum = net.add(format!("{p}add"), NodeKind::Add, &[&branch, &shortcut]);
                x = net.add(format!("{p}out"), NodeKind::Relu, &[&sum]);
                channels = width;
            }
        }
        Ok(net.head(&x, classes, true))
    }
}

/// Integer width whose default-config total lands closest to `target`.
fn closest_width(target: f64, lo: usize, hi: usize, count: impl Fn(usize) -> Result<usize>) -> Result<usize> {
    let mut best = (f64::INFINITY, lo);
    for w in lo..=hi {
        let dev = (count(w)? as f64 - target).abs();
        if dev < best.0 {
            best = (dev, w);
        }
    }
    Ok(best.1)
}

/// Base width is chosen so the total parameter count is as close as possible to the ResNet budget.
pub fn build_resnet(classes: usize, blocks_per_stage: usize) -> Result<ArchitectureSpec> {
    let cfg = |base| ResNetConfig {
        base,
        blocks_per_stage,
        input_channels: 3,
    };
    let base = closest_width(BUDGET_RESNET, 8, 160, |b| cfg(b).build(classes)?.param_count())?;
    cfg(base).build(classes)
}

// ---------------------------------------------------------------- FractalNet

/// Fractal blocks separated by max pooling. `f₁ = conv-bn-relu`,
/// `f_{C+1}(x) = mean(conv-bn-relu(x), f_C(f_C(x)))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FractalConfig {
    pub depth: usize,
    pub widths: Vec<usize>,
    pub input_channels: usize,
}

impl FractalConfig {
    pub fn toy() -> Self {
        FractalConfig {
            depth: 2,
            widths: vec![8, 16, 16, 32],
            input_channels: 3,
        }
    }

    fn expand(net: &mut Net, prefix: &str, x: &str, width: usize, depth: usize) -> String {
        if depth == 1 {
            return net.conv_bn_relu(prefix, x, width, 3);
        }
        let shallow = net.conv_bn_relu(&format!("{prefix}s"), x, width, 3);
        let d1 = Self::expand(net, &format!("{prefix}l"), x, width, depth - 1);
        let d2 = Self::expand(net, &format!("{prefix}r"), &d1, width, depth - 1);
        net.add(format!("{prefix}j"), NodeKind::Mean, &[&shallow, &d2])
    }

    pub fn build(&self, classes: usize) -> Result<ArchitectureSpec> {
        check_classes(classes)?;
        if !(1..=4).contains(&self.depth) {
            return Err(Error::InvalidDepth(self.depth));
        }
        if self.widths.is_empty() {
            return Err(Error::InvalidConfig("fractalnet needs at least one block".into()));
        }
        let mut net = Net::new("fractalnet", default_input(self.input_channels), classes);
        let mut x = INPUT_ID.to_string();
        for (b, &width) in self.widths.iter().enumerate() {
            if b > 0 {
                x = net.add(format!("pool{}", b + 1), NodeKind::MaxPool, &[&x]);
            }
            x = Self::expand(&mut net, &format!("f{}", b + 1), &x, width, self.depth);
        }
        Ok(net.head(&x, classes, true))
    }
}

/// Four blocks of widths `w, 2w, 4w, 8w`, with `w` sized to the FractalNet budget.
pub fn build_fractalnet(classes: usize, depth: usize) -> Result<ArchitectureSpec> {
    if !(1..=4).contains(&depth) {
        return Err(Error::InvalidDepth(depth));
    }
    let cfg = |w: usize| FractalConfig {
        depth,
        widths: vec![w, 2 * w, 4 * w, 8 * w],
        input_channels: 3,
    };
    let w = closest_width(BUDGET_FRACTALNET, 4, 160, |w| cfg(w).build(classes)?.param_count())?;
    cfg(w).build(classes)
}

// ---------------------------------------------------------------- DenseNet

/// Stem conv, dense blocks joined by transitions (batchnorm → 1×1 conv →
/// 2×2 average pooling), final batchnorm-relu, global pooling and linear head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseNetConfig {
    pub stem: usize,
    pub growth: usize,
    pub layers_per_block: usize,
    pub blocks: usize,
    pub input_channels: usize,
}

impl DenseNetConfig {
    pub fn full() -> Self {
        DenseNetConfig {
            stem: 48,
            growth: 24,
            layers_per_block: 12,
            blocks: 3,
            input_channels: 3,
        }
    }

    pub fn toy() -> Self {
        DenseNetConfig {
            stem: 16,
            growth: 8,
            layers_per_block: 3,
            blocks: 3,
            input_channels: 3,
        }
    }

    pub fn build(&self, classes: usize) -> Result<ArchitectureSpec> {
        check_classes(classes)?;
        if self.growth == 0 || self.blocks == 0 {
            return Err(Error::InvalidConfig("densenet needs positive growth rate and block count".into()));
        }
        let mut net = Net::new("densenet", default_input(self.input_channels), classes);
        let mut x = net.conv("stem".into(), INPUT_ID, self.stem, 3, 1, false);
        let mut channels = self.stem;
        for b in 1..=self.blocks {
            let (out, c) = dense_block(&mut net, &format!("d{b}"), &x, channels, self.growth, self.layers_per_block);
            x = out;
            channels = c;
            if b < self.blocks {
                let bn = net.add(format!("t{b}b"), NodeKind::BatchNorm, &[&x]);
                let cv = net.conv(format!("t{b}c"), &bn, channels, 1, 0, false);
                x = net.add(format!("t{b}p"), NodeKind::AvgPool, &[&cv]);
            }
        }
        let bn = net.add("finalb".into(), NodeKind::BatchNorm, &[&x]);
        let r = net.add("finalr".into(), NodeKind::Relu, &[&bn]);
        Ok(net.head(&r, classes, true))
    }
}

/// Appends one dense block; returns its output id and channel count.
fn dense_block(net: &mut Net, prefix: &str, x: &str, channels: usize, growth: usize, layers: usize) -> (String, usize) {
    let mut features = vec![x.to_string()];
    for l in 1..=layers {
        let inp = if features.len() == 1 {
            features[0].clone()
        } else {
            let refs: Vec<&str> = features.iter().map(String::as_str).collect();
            net.add(format!("{prefix}l{l}cat"), NodeKind::Concat, &refs)
        };
        let bn = net.add(format!("{prefix}l{l}b"), NodeKind::BatchNorm, &[&inp]);
        let r = net.add(format!("{prefix}l{l}r"), NodeKind::Relu, &[&bn]);
        let c = net.conv(format!("{prefix}l{l}c"), &r, growth, 3, 1, false);
        features.push(c);
    }
    let out = if features.len() == 1 {
        features[0].clone()
    } else {
        let refs: Vec<&str> = features.iter().map(String::as_str).collect();
        net.add(format!("{prefix}out"), NodeKind::Concat, &refs)
    };
    (out, channels + layers * growth)
}

/// A lone dense block on an `input` feature map; the spec's output is the
/// block's concatenated output (no classifier head).
pub fn dense_block_spec(input: Shape4, growth: usize, layers: usize) -> ArchitectureSpec {
    let mut net = Net::new("dense-block", input, 2);
    let (out, _) = dense_block(&mut net, "d", INPUT_ID, input.c, growth, layers);
    net.spec.output = out;
    net.spec
}

pub fn build_densenet(classes: usize, growth: usize, layers_per_block: usize, blocks: usize) -> Result<ArchitectureSpec> {
    DenseNetConfig {
        stem: 2 * growth,
        growth,
        layers_per_block,
        blocks,
        input_channels: 3,
    }
    .build(classes)
}

/// Named architecture at full (`toy = false`) or toy width.
pub fn build_named(name: &str, classes: usize, toy: bool) -> Result<ArchitectureSpec> {
    match (name, toy) {
        ("allconv", false) => build_allconv(classes),
        ("allconv", true) => AllConvConfig::toy().build(classes),
        ("allconv-reduced-c6", false) => AllConvConfig::reduced_c6().build(classes),
        ("vgg16", false) => build_vgg16_reduced(classes, VGG_DEFAULT_SCALE),
        ("vgg16", true) => VggConfig::toy().build(classes),
        ("nin", false) => build_nin(classes),
        ("nin", true) => NinConfig::toy().build(classes),
        ("resnet", false) => build_resnet(classes, 2),
        ("resnet", true) => ResNetConfig::toy().build(classes),
        ("fractalnet", false) => build_fractalnet(classes, 3),
        ("fractalnet", true) => FractalConfig::toy().build(classes),
        ("densenet", false) => build_densenet(classes, 24, 12, 3),
        ("densenet", true) => DenseNetConfig::toy().build(classes),
        _ => Err(Error::UnknownArchitecture(if toy { format!("{name} (toy)") } else { name.to_string() })),
    }
}

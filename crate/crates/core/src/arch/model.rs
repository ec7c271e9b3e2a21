//! Executes an [`ArchitectureSpec`]: parameter storage, initialization,
//! forward passes and reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::arch::spec::{ArchitectureSpec, FeatureShape, NodeKind};
use crate::error::{Error, Result};
use crate::layers::{
    avgpool2x2, avgpool2x2_backward, batchnorm_backward, batchnorm_eval, batchnorm_train, conv2d_backward,
    conv2d_forward, dense_backward, dense_forward, global_avg_pool, global_avg_pool_backward, maxpool2x2,
    maxpool2x2_backward, relu, relu_backward, softmax, softmax_backward, BatchNormState, ConvParams,
    DenseParams, GradientTape, LayerCache, Mode,
};
use crate::tensor::{concat_channels, slice_channels, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum NodeParams {
    None,
    Conv(ConvParams),
    Dense(DenseParams),
    BatchNorm(BatchNormState),
}

impl NodeParams {
    /// Learnable tensors in canonical order: conv/dense `w, b`; batchnorm `gamma, beta`.
    pub fn learnables(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            NodeParams::None => vec![],
            NodeParams::Conv(p) => with_bias(&p.weights, p.bias.as_ref()),
            NodeParams::Dense(p) => with_bias(&p.weights, p.bias.as_ref()),
            NodeParams::BatchNorm(s) => vec![("gamma", &s.gamma), ("beta", &s.beta)],
        }
    }

    pub fn learnables_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            NodeParams::None => vec![],
            NodeParams::Conv(p) => std::iter::once(&mut p.weights).chain(p.bias.as_mut()).collect(),
            NodeParams::Dense(p) => std::iter::once(&mut p.weights).chain(p.bias.as_mut()).collect(),
            NodeParams::BatchNorm(s) => vec![&mut s.gamma, &mut s.beta],
        }
    }

    /// Learnables plus batchnorm running statistics: everything a checkpoint stores.
    fn state(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = self.learnables();
        if let NodeParams::BatchNorm(s) = self {
            out.push(("running_mean", &s.running_mean));
            out.push(("running_var", &s.running_var));
        }
        out
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            NodeParams::None => vec![],
            NodeParams::Conv(p) => named_mut(&mut p.weights, p.bias.as_mut()),
            NodeParams::Dense(p) => named_mut(&mut p.weights, p.bias.as_mut()),
            NodeParams::BatchNorm(s) => vec![
                ("gamma", &mut s.gamma),
                ("beta", &mut s.beta),
                ("running_mean", &mut s.running_mean),
                ("running_var", &mut s.running_var),
            ],
        }
    }
}

fn with_bias<'a>(w: &'a Tensor, b: Option<&'a Tensor>) -> Vec<(&'static str, &'a Tensor)> {
    std::iter::once(("w", w)).chain(b.map(|b| ("b", b))).collect()
}

fn named_mut<'a>(w: &'a mut Tensor, b: Option<&'a mut Tensor>) -> Vec<(&'static str, &'a mut Tensor)> {
    std::iter::once(("w", w)).chain(b.map(|b| ("b", b))).collect()
}

/// Where backward starts.
#[derive(Debug, Clone, Copy)]
pub enum OutputGrad<'a> {
    /// dL/d(output) for the network output value.
    Output(&'a Tensor),
    /// dL/d(logits): gradient at the input of a softmax output node, which is
    /// then skipped. Pairs with the fused softmax + cross-entropy gradient.
    Logits(&'a Tensor),
}

/// Parameter gradients per node (same order as [`NodeParams::learnables`])
/// and the gradient with respect to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub nodes: Vec<Vec<Tensor>>,
    pub input: Tensor,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().flatten()
    }

    /// Adds `other` into `self` (for accumulating over micro-batches).
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.nodes.len() != other.nodes.len() {
            return Err(Error::TapeMismatch("gradient sets come from different models".into()));
        }
        for (a, b) in self.nodes.iter_mut().zip(&other.nodes) {
            if a.len() != b.len() {
                return Err(Error::TapeMismatch("gradient sets come from different models".into()));
            }
            for (x, y) in a.iter_mut().zip(b) {
                x.add_assign(y)?;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.nodes.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ArchitectureSpec,
    slots: Vec<Vec<usize>>,
    shapes: Vec<FeatureShape>,
    params: Vec<NodeParams>,
    output_slot: usize,
    fingerprint: u64,
}

/// Stable 64-bit digest of a spec's canonical text.
pub fn spec_fingerprint(spec: &ArchitectureSpec) -> u64 {
    let digest = Sha256::digest(spec.to_text().as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

impl Model {
    /// Validated model with zero weights (batchnorm gamma = 1).
    pub fn new(spec: ArchitectureSpec) -> Result<Self> {
        let shapes = spec.validate()?;
        let slots = spec.resolve()?;
        let input: FeatureShape = spec.input_shape.into();
        let mut params = Vec::with_capacity(spec.nodes.len());
        for (node, ins) in spec.nodes.iter().zip(&slots) {
            let x = if ins[0] == 0 { input } else { shapes[ins[0] - 1] };
            let p = match node.kind {
                NodeKind::Conv {
                    out,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => NodeParams::Conv(ConvParams::new(x.c, out, kernel, stride, padding, bias)?),
                NodeKind::Dense { out, bias } => NodeParams::Dense(DenseParams::new(x.len(), out, bias)?),
                NodeKind::BatchNorm => NodeParams::BatchNorm(BatchNormState::new(x.c)),
                _ => NodeParams::None,
            };
            params.push(p);
        }
        let output_slot = spec.slot_of(&spec.output).expect("validated");
        Ok(Model {
            fingerprint: spec_fingerprint(&spec),
            spec,
            slots,
            shapes,
            params,
            output_slot,
        })
    }

    /// He-uniform weights (limit √(6 / fan_in)), zero biases, deterministic in `seed`.
    pub fn init(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        let mut model = Model::new(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut model.params {
            let (w, fan_in) = match p {
                NodeParams::Conv(c) => (&mut c.weights, c.in_channels * c.kernel * c.kernel),
                NodeParams::Dense(d) => {
                    let fan_in = d.inputs();
                    (&mut d.weights, fan_in)
                }
                _ => continue,
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            w.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn params(&self) -> &[NodeParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NodeParams] {
        &mut self.params
    }

    /// Output shape of each node, in node order.
    pub fn shapes(&self) -> &[FeatureShape] {
        &self.shapes
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flat_map(|p| p.learnables())
            .map(|(_, t)| t.len())
            .sum()
    }

    /// `(node.name, tensor)` for every learnable tensor, in canonical order.
    pub fn named_learnables(&self) -> Vec<(String, &Tensor)> {
        self.named(|p| p.learnables())
    }

    /// Learnables and running statistics, keyed `node.name`.
    pub fn named_state(&self) -> Vec<(String, &Tensor)> {
        self.named(|p| p.state())
    }

    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let ids: Vec<&str> = self.spec.nodes.iter().map(|n| n.id.as_str()).collect();
        self.params
            .iter_mut()
            .zip(ids)
            .flat_map(|(p, id)| p.state_mut().into_iter().map(move |(k, t)| (format!("{id}.{k}"), t)))
            .collect()
    }

    fn named<'a>(&'a self, f: impl Fn(&'a NodeParams) -> Vec<(&'static str, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
        self.spec
            .nodes
            .iter()
            .zip(&self.params)
            .flat_map(|(n, p)| f(p).into_iter().map(move |(k, t)| (format!("{}.{k}", n.id), t)))
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape4()?;
        let want = self.spec.input_shape;
        if (s.c, s.h, s.w) != (want.c, want.h, want.w) {
            return Err(Error::ShapeMismatch(format!(
                "model `{}` expects Nx{}x{}x{} input, got {s}",
                self.spec.name, want.c, want.h, want.w
            )));
        }
        Ok(())
    }

    /// Eval-mode forward: running batchnorm statistics, nothing recorded.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        // Drop each intermediate after its last consumer to bound memory.
        let mut last_use = vec![0usize; self.slots.len() + 1];
        for (i, ins) in self.slots.iter().enumerate() {
            for &s in ins {
                last_use[s] = i;
            }
        }
        let mut values: Vec<Option<Tensor>> = Vec::with_capacity(self.slots.len() + 1);
        values.push(Some(x.clone()));
        for (i, ins) in self.slots.iter().enumerate() {
            let inputs: Vec<&Tensor> = ins.iter().map(|&s| values[s].as_ref().expect("live value")).collect();
            let (y, _) = self.node_forward(i, &inputs, None)?;
            values.push(Some(y));
            for &s in ins {
                if last_use[s] == i && s != self.output_slot {
                    values[s] = None;
                }
            }
        }
        Ok(values[self.output_slot].take().expect("output value"))
    }

    /// Forward pass. In train mode batchnorm uses batch statistics (and
    /// updates its running averages) and the returned tape supports
    /// [`Model::backward`]; in eval mode the tape is empty.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, GradientTape)> {
        if mode == Mode::Eval {
            return Ok((self.predict(x)?, GradientTape::empty(self.fingerprint)));
        }
        self.check_input(x)?;
        let mut tape = GradientTape::new(self.fingerprint, x.clone());
        for i in 0..self.slots.len() {
            let (y, cache) = {
                let inputs: Vec<&Tensor> = self.slots[i].iter().map(|&s| tape.value(s)).collect();
                let mut params = std::mem::replace(&mut self.params[i], NodeParams::None);
                let r = self.node_forward(i, &inputs, Some(&mut params));
                self.params[i] = params;
                r?
            };
            tape.record(i, cache, y);
        }
        Ok((tape.value(self.output_slot).clone(), tape))
    }

    /// One node's forward. `train` carries the node's parameters mutably when
    /// batch statistics should be used and updated.
    fn node_forward(&self, i: usize, xs: &[&Tensor], mut train: Option<&mut NodeParams>) -> Result<(Tensor, LayerCache)> {
        let node = &self.spec.nodes[i];
        let wrap = |e| Error::at_node(&node.id, e);
        let x = xs[0];
        let n = x.shape()[0];
        if let Some(NodeParams::BatchNorm(s)) = train.as_deref_mut() {
            let (y, c) = batchnorm_train(x, s).map_err(wrap)?;
            y.ensure_finite(&node.id).map_err(wrap)?;
            return Ok((y, LayerCache::BatchNorm(c)));
        }
        let params = train.as_deref().unwrap_or(&self.params[i]);
        let mut cache = LayerCache::None;
        let y = match (node.kind, params) {
            (NodeKind::Conv { .. }, NodeParams::Conv(p)) => conv2d_forward(x, p),
            (NodeKind::MaxPool, _) => maxpool2x2(x).map(|(y, argmax)| {
                cache = LayerCache::MaxPool { argmax };
                y
            }),
            (NodeKind::AvgPool, _) => avgpool2x2(x),
            (NodeKind::Gap, _) => global_avg_pool(x).and_then(|y| {
                let c = y.shape()[1];
                y.reshape(&[n, c, 1, 1])
            }),
            (NodeKind::BatchNorm, NodeParams::BatchNorm(s)) => batchnorm_eval(x, s),
            (NodeKind::Relu, _) => Ok(relu(x)),
            (NodeKind::Dense { out, .. }, NodeParams::Dense(p)) => {
                dense_forward(x, p).and_then(|y| y.reshape(&[n, out, 1, 1]))
            }
            (NodeKind::Softmax, _) => x.clone().reshape(&[n, x.len() / n.max(1)]).and_then(|z| softmax(&z)),
            (NodeKind::Add | NodeKind::Mean, _) => {
                let mut acc = x.clone();
                xs[1..]
                    .iter()
                    .try_for_each(|t| acc.add_assign(t))
                    .map(|_| if node.kind == NodeKind::Mean { acc.scale(1.0 / xs.len() as f64) } else { acc })
            }
            (NodeKind::Concat, _) => concat_channels(xs),
            (NodeKind::Slice { start, len }, _) => slice_channels(x, start, len),
            (kind, _) => Err(Error::TapeMismatch(format!("parameters do not match {} node", kind.name()))),
        }
        .map_err(wrap)?;
        y.ensure_finite(&node.id).map_err(wrap)?;
        Ok((y, cache))
    }

    /// Pre-softmax values of a tape whose output node is a softmax.
    pub fn logits<'t>(&self, tape: &'t GradientTape) -> Result<&'t Tensor> {
        if tape.owner() != self.fingerprint || tape.len() != self.spec.nodes.len() {
            return Err(Error::TapeMismatch("tape was not recorded by this model in train mode".into()));
        }
        match self.output_slot.checked_sub(1) {
            Some(i) if self.spec.nodes[i].kind == NodeKind::Softmax => Ok(tape.value(self.slots[i][0])),
            _ => Err(Error::TapeMismatch("model output is not a softmax node".into())),
        }
    }

    /// Reverse-mode gradients of a train-mode tape.
    pub fn backward(&self, tape: &GradientTape, seed: OutputGrad<'_>) -> Result<Gradients> {
        if tape.owner() != self.fingerprint {
            return Err(Error::TapeMismatch("tape was recorded by a different model".into()));
        }
        if tape.len() != self.spec.nodes.len() {
            return Err(Error::TapeMismatch(format!(
                "tape holds {} of {} nodes (eval-mode passes record nothing)",
                tape.len(),
                self.spec.nodes.len()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.slots.len() + 1];
        let mut skip = None;
        match seed {
            OutputGrad::Output(g) => {
                check_seed(g, tape.value(self.output_slot))?;
                grads[self.output_slot] = Some(g.clone());
            }
            OutputGrad::Logits(g) => {
                let out = self.output_slot.checked_sub(1).map(|i| (i, &self.spec.nodes[i]));
                let Some((i, node)) = out.filter(|(_, n)| n.kind == NodeKind::Softmax) else {
                    return Err(Error::TapeMismatch("logit gradients need a softmax output node".into()));
                };
                let z = self.slots[i][0];
                let zv = tape.value(z);
                if g.len() != zv.len() || g.shape()[0] != zv.shape()[0] {
                    return Err(Error::TapeMismatch(format!(
                        "logit gradient shape {:?} does not match logits {:?} of `{}`",
                        g.shape(),
                        zv.shape(),
                        node.id
                    )));
                }
                grads[z] = Some(g.clone().reshape(zv.shape())?);
                skip = Some(i);
            }
        }

        let mut param_grads: Vec<Vec<Tensor>> = self
            .params
            .iter()
            .map(|p| p.learnables().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect())
            .collect();

        for entry in tape.entries().iter().rev() {
            let i = entry.node;
            if Some(i) == skip {
                continue;
            }
            let Some(g) = grads[i + 1].take() else { continue };
            let node = &self.spec.nodes[i];
            let wrap = |e| Error::at_node(&node.id, e);
            let (dx, dp) = self.node_backward(i, tape, &entry.cache, &g).map_err(wrap)?;
            if !dp.iter().all(Tensor::is_finite) || !dx.iter().all(Tensor::is_finite) {
                return Err(Error::NonFiniteGradient { node: node.id.clone() });
            }
            if !dp.is_empty() {
                param_grads[i] = dp;
            }
            for (&s, d) in self.slots[i].iter().zip(dx) {
                match &mut grads[s] {
                    Some(acc) => acc.add_assign(&d).map_err(wrap)?,
                    slot @ None => *slot = Some(d),
                }
            }
        }
        let input = grads[0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(tape.value(0).shape()));
        Ok(Gradients {
            nodes: param_grads,
            input,
        })
    }

    /// Input gradients (one per input edge) and parameter gradients of node `i`.
    fn node_backward(&self, i: usize, tape: &GradientTape, cache: &LayerCache, g: &Tensor) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let node = &self.spec.nodes[i];
        let ins = &self.slots[i];
        let x = tape.value(ins[0]);
        let n = x.shape()[0];
        let one = |t: Tensor| Ok((vec![t], vec![]));
        match (node.kind, &self.params[i], cache) {
            (NodeKind::Conv { .. }, NodeParams::Conv(p), _) => {
                let r = conv2d_backward(x, p, g)?;
                Ok((vec![r.grad_x], std::iter::once(r.grad_w).chain(r.grad_b).collect()))
            }
            (NodeKind::MaxPool, _, LayerCache::MaxPool { argmax }) => one(maxpool2x2_backward(x.shape4()?, argmax, g)?),
            (NodeKind::AvgPool, _, _) => one(avgpool2x2_backward(x.shape4()?, g)?),
            (NodeKind::Gap, _, _) => {
                let s = x.shape4()?;
                one(global_avg_pool_backward(s, &g.clone().reshape(&[n, s.c])?)?)
            }
            (NodeKind::BatchNorm, NodeParams::BatchNorm(s), LayerCache::BatchNorm(c)) => {
                let r = batchnorm_backward(c, &s.gamma, g)?;
                Ok((vec![r.grad_x], vec![r.grad_gamma, r.grad_beta]))
            }
            (NodeKind::Relu, _, _) => one(relu_backward(x, g)?),
            (NodeKind::Dense { out, .. }, NodeParams::Dense(p), _) => {
                let r = dense_backward(x, p, &g.clone().reshape(&[n, out])?)?;
                Ok((vec![r.grad_x], std::iter::once(r.grad_w).chain(r.grad_b).collect()))
            }
            (NodeKind::Softmax, _, _) => {
                let dz = softmax_backward(tape.value(i + 1), g)?;
                one(dz.reshape(x.shape())?)
            }
            (NodeKind::Add, _, _) => Ok((vec![g.clone(); ins.len()], vec![])),
            (NodeKind::Mean, _, _) => Ok((vec![g.scale(1.0 / ins.len() as f64); ins.len()], vec![])),
            (NodeKind::Concat, _, _) => {
                let mut start = 0;
                let mut parts = Vec::with_capacity(ins.len());
                for &s in ins {
                    let c = tape.value(s).shape()[1];
                    parts.push(slice_channels(g, start, c)?);
                    start += c;
                }
                Ok((parts, vec![]))
            }
            (NodeKind::Slice { start, len }, _, _) => {
                let s = x.shape4()?;
                let plane = s.plane();
                let mut dx = Tensor::zeros(x.shape());
                for b in 0..s.n {
                    let src = &g.data()[b * len * plane..(b + 1) * len * plane];
                    let off = (b * s.c + start) * plane;
                    dx.data_mut()[off..off + len * plane].copy_from_slice(src);
                }
                one(dx)
            }
            (kind, _, _) => Err(Error::TapeMismatch(format!("tape entry does not match {} node", kind.name()))),
        }
    }
}

fn check_seed(g: &Tensor, out: &Tensor) -> Result<()> {
    if g.shape() != out.shape() {
        return Err(Error::TapeMismatch(format!(
            "output gradient shape {:?} does not match output {:?}",
            g.shape(),
            out.shape()
        )));
    }
    Ok(())
}

//! Declarative network graphs and their line-oriented text format.
//!
//! ```text
//! name allconv
//! input 1x3x32x32
//! classes 10
//! output prob
//! c1 conv out=128 k=3 s=1 p=0 bias=0 inputs=input
//! r1 relu inputs=c1
//! ```
//!
//! Nodes are listed in execution order. The reserved id `input` names the
//! network input; every other referenced id must be defined on an earlier line.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::paramcount::output_dim;
use crate::tensor::Shape4;

pub const INPUT_ID: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    MaxPool,
    AvgPool,
    Gap,
    BatchNorm,
    Relu,
    Dense {
        out: usize,
        bias: bool,
    },
    Softmax,
    Add,
    /// Elementwise mean of all inputs.
    Mean,
    Concat,
    Slice {
        start: usize,
        len: usize,
    },
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Conv { .. } => "conv",
            NodeKind::MaxPool => "maxpool",
            NodeKind::AvgPool => "avgpool",
            NodeKind::Gap => "gap",
            NodeKind::BatchNorm => "batchnorm",
            NodeKind::Relu => "relu",
            NodeKind::Dense { .. } => "dense",
            NodeKind::Softmax => "softmax",
            NodeKind::Add => "add",
            NodeKind::Mean => "mean",
            NodeKind::Concat => "concat",
            NodeKind::Slice { .. } => "slice",
        }
    }

    fn is_variadic(&self) -> bool {
        matches!(self, NodeKind::Add | NodeKind::Mean | NodeKind::Concat)
    }

    /// Learnable parameter count given the input feature shape.
    pub fn param_count(&self, input: FeatureShape) -> usize {
        match *self {
            NodeKind::Conv {
                out, kernel, bias, ..
            } => kernel * kernel * input.c * out + if bias { out } else { 0 },
            NodeKind::BatchNorm => 2 * input.c,
            NodeKind::Dense { out, bias } => input.len() * out + if bias { out } else { 0 },
            _ => 0,
        }
    }
}

/// Per-sample activation shape. Flat vectors are `c×1×1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl FeatureShape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        FeatureShape { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_batch(&self, n: usize) -> Vec<usize> {
        vec![n, self.c, self.h, self.w]
    }
}

impl From<Shape4> for FeatureShape {
    fn from(s: Shape4) -> Self {
        FeatureShape::new(s.c, s.h, s.w)
    }
}

impl fmt::Display for FeatureShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_shape: Shape4,
    pub classes: usize,
    pub nodes: Vec<NodeSpec>,
    /// Id of the node whose value is the network output.
    pub output: String,
}

impl ArchitectureSpec {
    pub fn new(name: impl Into<String>, input_shape: Shape4, classes: usize) -> Self {
        ArchitectureSpec {
            name: name.into(),
            input_shape,
            classes,
            nodes: Vec::new(),
            output: INPUT_ID.to_string(),
        }
    }

    /// Appends a node and makes it the output. Returns its id.
    pub fn push(&mut self, id: impl Into<String>, kind: NodeKind, inputs: &[&str]) -> String {
        let id = id.into();
        self.nodes.push(NodeSpec {
            id: id.clone(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        });
        self.output = id.clone();
        id
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Value slot of `id`: 0 for the input, `i + 1` for node `i`.
    pub fn slot_of(&self, id: &str) -> Option<usize> {
        if id == INPUT_ID {
            Some(0)
        } else {
            self.node_index(id).map(|i| i + 1)
        }
    }

    /// Input slots of every node, checking ids, ordering and arity.
    pub fn resolve(&self) -> Result<Vec<Vec<usize>>> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        seen.insert(INPUT_ID, 0);
        let mut out = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let fail = |msg: String| Error::at_node(&node.id, Error::InvalidConfig(msg));
            if node.id.is_empty() || node.id.contains(|c: char| c.is_whitespace() || c == ',' || c == '=') {
                return Err(fail(format!("invalid node id `{}`", node.id)));
            }
            if seen.contains_key(node.id.as_str()) {
                return Err(fail("duplicate node id".into()));
            }
            if node.inputs.is_empty() {
                return Err(fail("node has no inputs".into()));
            }
            if !node.kind.is_variadic() && node.inputs.len() != 1 {
                return Err(fail(format!(
                    "{} takes exactly one input, got {}",
                    node.kind.name(),
                    node.inputs.len()
                )));
            }
            let mut slots = Vec::with_capacity(node.inputs.len());
            for inp in &node.inputs {
                match seen.get(inp.as_str()) {
                    Some(&s) => slots.push(s),
                    None => return Err(fail(format!("input `{inp}` is not defined before this node"))),
                }
            }
            seen.insert(node.id.as_str(), i + 1);
            out.push(slots);
        }
        if !seen.contains_key(self.output.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "output node `{}` is not defined",
                self.output
            )));
        }
        Ok(out)
    }

    /// Output shape of every node, in node order.
    pub fn infer_shapes(&self) -> Result<Vec<FeatureShape>> {
        let slots = self.resolve()?;
        let mut values: Vec<FeatureShape> = vec![self.input_shape.into()];
        for (node, ins) in self.nodes.iter().zip(&slots) {
            let shapes: Vec<FeatureShape> = ins.iter().map(|&s| values[s]).collect();
            let shape = infer_node(&node.kind, &shapes).map_err(|e| Error::at_node(&node.id, e))?;
            values.push(shape);
        }
        values.remove(0);
        Ok(values)
    }

    /// Full model check: shapes infer and the output is a K-way vector.
    pub fn validate(&self) -> Result<Vec<FeatureShape>> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "class count must be at least 2, got {}",
                self.classes
            )));
        }
        let shapes = self.infer_shapes()?;
        let out = match self.slot_of(&self.output) {
            Some(0) | None => FeatureShape::from(self.input_shape),
            Some(s) => shapes[s - 1],
        };
        if out != FeatureShape::new(self.classes, 1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "network output is {out}, expected {}x1x1",
                self.classes
            )));
        }
        Ok(shapes)
    }

    pub fn to_text(&self) -> String {
        let s = self.input_shape;
        let mut out = String::new();
        let _ = writeln!(out, "name {}", self.name);
        let _ = writeln!(out, "input {}x{}x{}x{}", s.n, s.c, s.h, s.w);
        let _ = writeln!(out, "classes {}", self.classes);
        let _ = writeln!(out, "output {}", self.output);
        for node in &self.nodes {
            let _ = write!(out, "{} {}", node.id, node.kind.name());
            match node.kind {
                NodeKind::Conv {
                    out: o,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => {
                    let _ = write!(out, " out={o} k={kernel} s={stride} p={padding} bias={}", bias as u8);
                }
                NodeKind::Dense { out: o, bias } => {
                    let _ = write!(out, " out={o} bias={}", bias as u8);
                }
                NodeKind::Slice { start, len } => {
                    let _ = write!(out, " start={start} len={len}");
                }
                _ => {}
            }
            let _ = writeln!(out, " inputs={}", node.inputs.join(","));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut input = None;
        let mut classes = None;
        let mut output = None;
        let mut nodes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let perr = |msg: String| Error::Parse { line, msg };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut words = content.split_whitespace();
            let head = words.next().unwrap_or_default();
            let rest: Vec<&str> = words.collect();
            match head {
                "name" | "input" | "classes" | "output" if nodes.is_empty() => {
                    let [value] = rest[..] else {
                        return Err(perr(format!("`{head}` takes exactly one value")));
                    };
                    match head {
                        "name" => name = Some(value.to_string()),
                        "input" => input = Some(parse_shape(value).map_err(perr)?),
                        "classes" => classes = Some(parse_num(value, "classes").map_err(perr)?),
                        _ => output = Some(value.to_string()),
                    }
                }
                id => nodes.push(parse_node(id, &rest).map_err(perr)?),
            }
        }
        let missing = |what: &str| Error::Parse {
            line: 0,
            msg: format!("missing `{what}` header"),
        };
        let mut spec = ArchitectureSpec::new(
            name.ok_or_else(|| missing("name"))?,
            input.ok_or_else(|| missing("input"))?,
            classes.ok_or_else(|| missing("classes"))?,
        );
        spec.output = output
            .or_else(|| nodes.last().map(|n: &NodeSpec| n.id.clone()))
            .unwrap_or_else(|| INPUT_ID.to_string());
        spec.nodes = nodes;
        spec.resolve()?;
        Ok(spec)
    }

    /// Learnable parameter count of the whole graph.
    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.infer_shapes()?;
        let slots = self.resolve()?;
        let input: FeatureShape = self.input_shape.into();
        Ok(self
            .nodes
            .iter()
            .zip(&slots)
            .map(|(node, ins)| {
                let s = if ins[0] == 0 { input } else { shapes[ins[0] - 1] };
                node.kind.param_count(s)
            })
            .sum())
    }
}

fn parse_num(s: &str, what: &str) -> std::result::Result<usize, String> {
    s.parse::<usize>()
        .map_err(|_| format!("`{what}` expects a non-negative integer, got `{s}`"))
}

fn parse_shape(s: &str) -> std::result::Result<Shape4, String> {
    let parts: Vec<&str> = s.split('x').collect();
    let [n, c, h, w] = parts[..] else {
        return Err(format!("input shape must be NxCxHxW, got `{s}`"));
    };
    Shape4::new(
        parse_num(n, "input")?,
        parse_num(c, "input")?,
        parse_num(h, "input")?,
        parse_num(w, "input")?,
    )
    .map_err(|e| e.to_string())
}

fn parse_node(id: &str, words: &[&str]) -> std::result::Result<NodeSpec, String> {
    let (kind_name, attrs) = words
        .split_first()
        .ok_or_else(|| format!("node `{id}` has no kind"))?;
    let mut kv: HashMap<&str, &str> = HashMap::new();
    for w in attrs {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{w}`"))?;
        if kv.insert(k, v).is_some() {
            return Err(format!("duplicate key `{k}`"));
        }
    }
    let inputs: Vec<String> = kv
        .remove("inputs")
        .ok_or_else(|| format!("node `{id}` has no inputs="))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut take = |key: &str| -> std::result::Result<usize, String> {
        let v = kv
            .remove(key)
            .ok_or_else(|| format!("{kind_name} node `{id}` needs `{key}=`"))?;
        parse_num(v, key)
    };
    let kind = match *kind_name {
        "conv" => NodeKind::Conv {
            out: take("out")?,
            kernel: take("k")?,
            stride: take("s")?,
            padding: take("p")?,
            bias: take("bias")? != 0,
        },
        "dense" => NodeKind::Dense {
            out: take("out")?,
            bias: take("bias")? != 0,
        },
        "slice" => NodeKind::Slice {
            start: take("start")?,
            len: take("len")?,
        },
        "maxpool" => NodeKind::MaxPool,
        "avgpool" => NodeKind::AvgPool,
        "gap" => NodeKind::Gap,
        "batchnorm" => NodeKind::BatchNorm,
        "relu" => NodeKind::Relu,
        "softmax" => NodeKind::Softmax,
        "add" => NodeKind::Add,
        "mean" => NodeKind::Mean,
        "concat" => NodeKind::Concat,
        other => return Err(format!("unknown node kind `{other}`")),
    };
    if let Some(extra) = kv.keys().next() {
        return Err(format!("unexpected key `{extra}` for {kind_name}"));
    }
    Ok(NodeSpec {
        id: id.to_string(),
        kind,
        inputs,
    })
}

fn infer_node(kind: &NodeKind, ins: &[FeatureShape]) -> Result<FeatureShape> {
    let x = ins[0];
    let same_all = |what: &str| -> Result<()> {
        match ins.iter().find(|s| **s != x) {
            Some(bad) => Err(Error::ShapeMismatch(format!("{what} inputs differ: {x} vs {bad}"))),
            None => Ok(()),
        }
    };
    let halve = |what: &str| -> Result<FeatureShape> {
        if x.h % 2 != 0 || x.w % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{what} needs even spatial extents, got {}x{}",
                x.h, x.w
            )));
        }
        Ok(FeatureShape::new(x.c, x.h / 2, x.w / 2))
    };
    match *kind {
        NodeKind::Conv {
            out,
            kernel,
            stride,
            padding,
            ..
        } => {
            if out == 0 || kernel == 0 || stride == 0 {
                return Err(Error::InvalidConfig("conv needs positive out, k and s".into()));
            }
            Ok(FeatureShape::new(
                out,
                output_dim(x.h, kernel, stride, padding)?,
                output_dim(x.w, kernel, stride, padding)?,
            ))
        }
        NodeKind::MaxPool => halve("maxpool"),
        NodeKind::AvgPool => halve("avgpool"),
        NodeKind::Gap => Ok(FeatureShape::new(x.c, 1, 1)),
        NodeKind::BatchNorm | NodeKind::Relu => Ok(x),
        NodeKind::Dense { out, .. } => {
            if out == 0 {
                return Err(Error::InvalidConfig("dense needs positive out".into()));
            }
            Ok(FeatureShape::new(out, 1, 1))
        }
        NodeKind::Softmax => {
            if x.h != 1 || x.w != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "softmax needs a flat input, got {x}"
                )));
            }
            Ok(x)
        }
        NodeKind::Add => {
            same_all("add")?;
            Ok(x)
        }
        NodeKind::Mean => {
            same_all("mean")?;
            Ok(x)
        }
        NodeKind::Concat => {
            if let Some(bad) = ins.iter().find(|s| s.h != x.h || s.w != x.w) {
                return Err(Error::ShapeMismatch(format!(
                    "concat spatial extents differ: {x} vs {bad}"
                )));
            }
            Ok(FeatureShape::new(ins.iter().map(|s| s.c).sum(), x.h, x.w))
        }
        NodeKind::Slice { start, len } => {
            if len == 0 || start + len > x.c {
                return Err(Error::ShapeMismatch(format!(
                    "channel slice {start}..{} out of range for {} channels",
                    start + len,
                    x.c
                )));
            }
            Ok(FeatureShape::new(len, x.h, x.w))
        }
    }
}

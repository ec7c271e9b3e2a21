use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid axis {axis} for tensor of rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("tape mismatch: {0}")]
    TapeMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("kernel {kernel} larger than padded input extent {padded}")]
    KernelTooLarge { kernel: usize, padded: usize },

    #[error("extent {span} (padded input minus kernel) not divisible by stride {stride}")]
    Indivisible { span: usize, stride: usize },

    #[error("invalid width scale {0}; expected a value in (0, 1]")]
    InvalidScale(f64),

    #[error("invalid fractal depth {0}; expected 1..=4")]
    InvalidDepth(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("node `{node}`: {source}")]
    AtNode {
        node: String,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite gradient at node `{node}`")]
    NonFiniteGradient { node: String },

    #[error("missing class directory: {0}")]
    MissingClassDir(String),

    #[error("unreadable image {path}: {msg}")]
    UnreadableImage { path: PathBuf, msg: String },

    #[error("class {class} needs {needed} samples but only {available} are available")]
    InsufficientSamples {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("dataset load error: {0}")]
    DatasetLoad(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_node(node: impl Into<String>, err: Error) -> Self {
        Error::AtNode {
            node: node.into(),
            source: Box::new(err),
        }
    }

    /// Innermost error, looking through node annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtNode { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerics (as opposed to bad input or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self.root(),
            Error::NonFinite(_) | Error::NonFiniteGradient { .. }
        )
    }
}

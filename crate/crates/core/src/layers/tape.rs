use crate::layers::batchnorm::BnCache;
use crate::tensor::Tensor;

/// Extra per-node state a backward pass needs beyond the node's inputs and output.
#[derive(Debug, Clone)]
pub enum LayerCache {
    None,
    MaxPool { argmax: Vec<usize> },
    BatchNorm(BnCache),
}

#[derive(Debug, Clone)]
pub struct TapeEntry {
    pub node: usize,
    pub cache: LayerCache,
}

/// Record of one train-mode forward pass.
///
/// `values[0]` is the network input and `values[i + 1]` the output of node `i`.
/// Entries are stored in execution order; backward walks them in reverse.
#[derive(Debug, Clone, Default)]
pub struct GradientTape {
    owner: u64,
    values: Vec<Tensor>,
    entries: Vec<TapeEntry>,
}

impl GradientTape {
    pub fn new(owner: u64, input: Tensor) -> Self {
        GradientTape {
            owner,
            values: vec![input],
            entries: Vec::new(),
        }
    }

    /// Tape returned by eval-mode passes: records nothing.
    pub fn empty(owner: u64) -> Self {
        GradientTape {
            owner,
            ..Default::default()
        }
    }

    pub fn owner(&self) -> u64 {
        self.owner
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn record(&mut self, node: usize, cache: LayerCache, output: Tensor) {
        debug_assert_eq!(self.values.len(), node + 1, "nodes must be recorded in order");
        self.entries.push(TapeEntry { node, cache });
        self.values.push(output);
    }

    pub fn input(&self) -> Option<&Tensor> {
        self.values.first()
    }

    /// Value stored in `slot` (0 = network input, `i + 1` = node `i`).
    pub fn value(&self, slot: usize) -> &Tensor {
        &self.values[slot]
    }

    pub fn entries(&self) -> &[TapeEntry] {
        &self.entries
    }

    pub fn last_output(&self) -> Option<&Tensor> {
        if self.entries.is_empty() {
            None
        } else {
            self.values.last()
        }
    }
}

//! Datasets of 32×32 images: directory loading, stratified splits,
//! synthetic glyphs and a compact binary cache.

pub mod cache;
pub mod loader;
pub mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cache::{read_cache, write_cache};
pub use loader::{load_image_dir, rescale, rescale_to_32, LoadOptions};
pub use synth::{synth_glyphs, SynthOptions};

pub const IMAGE_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Validation,
    Test,
}

/// Images `N×C×32×32` in `[0, 1]` with labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    tag: SplitTag,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, tag: SplitTag) -> Result<Self> {
        let s = images.shape4()?;
        if (s.h, s.w) != (IMAGE_SIZE, IMAGE_SIZE) {
            return Err(Error::ShapeMismatch(format!("dataset images must be 32x32, got {}x{}", s.h, s.w)));
        }
        if labels.len() != s.n {
            return Err(Error::ShapeMismatch(format!("{} labels for {} images", labels.len(), s.n)));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("image values must lie in [0, 1]".into()));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            tag,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn tag(&self) -> SplitTag {
        self.tag
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn sample_len(&self) -> usize {
        self.channels() * IMAGE_SIZE * IMAGE_SIZE
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.images.data()[i * len..(i + 1) * len]
    }

    /// Images and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidConfig(format!("sample index {i} out of range for {} samples", self.len())));
            }
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let images = Tensor::new(vec![indices.len(), self.channels(), IMAGE_SIZE, IMAGE_SIZE], data)?;
        Ok((images, labels))
    }

    /// A dataset holding only `indices`. Empty subsets are allowed.
    pub fn subset(&self, indices: &[usize], tag: SplitTag) -> Result<Dataset> {
        let (images, labels) = self.batch(indices)?;
        Ok(Dataset {
            images,
            labels,
            classes: self.classes,
            tag,
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }

    /// Sample count plus a SHA-256 over the class count, labels and pixel values.
    pub fn fingerprint(&self) -> DatasetFingerprint {
        let mut h = Sha256::new();
        h.update((self.classes as u64).to_le_bytes());
        h.update((self.channels() as u64).to_le_bytes());
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        for v in self.images.data() {
            h.update(v.to_le_bytes());
        }
        DatasetFingerprint {
            count: self.len(),
            sha256: h.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub count: usize,
    pub sha256: String,
}

/// How many samples go to each partition. Totals are spread evenly over the
/// classes; the first `total % K` classes take one extra sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Training samples before the validation carve-out.
    pub train_count: usize,
    /// Fraction of each class's training samples held out for validation.
    pub validation_fraction: f64,
    /// Test samples; `None` takes everything not selected for training.
    pub test_count: Option<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_count: usize, test_count: Option<usize>, seed: u64) -> Self {
        SplitSpec {
            train_count,
            validation_fraction: 0.1,
            test_count,
            seed,
        }
    }
}

pub fn per_class(total: usize, classes: usize, class: usize) -> usize {
    total / classes + usize::from(class < total % classes)
}

/// Stratified split into (train, validation, test). Each class's samples are
/// shuffled with a seed derived from `spec.seed` and the class; the first
/// ones go to training (the validation carve-out taken from their front),
/// the next ones to test. Each partition keeps dataset order.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    if !(0.0..1.0).contains(&spec.validation_fraction) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction must be in [0, 1), got {}",
            spec.validation_fraction
        )));
    }
    let k = data.classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in data.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (class, mut idx) in by_class.into_iter().enumerate() {
        let n_train = per_class(spec.train_count, k, class);
        let n_test = match spec.test_count {
            Some(t) => per_class(t, k, class),
            None => idx.len().saturating_sub(n_train),
        };
        if n_train + n_test > idx.len() {
            return Err(Error::InsufficientSamples {
                class,
                needed: n_train + n_test,
                available: idx.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::train::derive_seed(spec.seed, "split", class as u64));
        idx.shuffle(&mut rng);
        let n_val = (n_train as f64 * spec.validation_fraction).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..n_train]);
        test.extend_from_slice(&idx[n_train..n_train + n_test]);
    }
    for v in [&mut train, &mut val, &mut test] {
        v.sort_unstable();
    }
    Ok((
        data.subset(&train, SplitTag::Train)?,
        data.subset(&val, SplitTag::Validation)?,
        data.subset(&test, SplitTag::Test)?,
    ))
}

/// Where a dataset comes from: a class-per-directory tree, a CHDS cache
/// file, or `synth:k=K,n=N,seed=S[,noise=σ]` (N samples in total).
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Dir(PathBuf),
    Cache(PathBuf),
    Synth { classes: usize, count: usize, seed: u64, noise: f64 },
}

pub const DEFAULT_SYNTH_NOISE: f64 = 0.05;
pub const DEFAULT_SYNTH_PER_CLASS: usize = 60;

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix("synth:").or_else(|| (s == "synth").then_some("")) else {
            let path = PathBuf::from(s);
            return Ok(if path.extension().is_some_and(|e| e == "chds") {
                DataSource::Cache(path)
            } else {
                DataSource::Dir(path)
            });
        };
        let (mut classes, mut count, mut seed, mut noise) = (10, None, 0, DEFAULT_SYNTH_NOISE);
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            let bad = || Error::InvalidConfig(format!("bad synthetic data option `{part}`"));
            let (key, value) = part.split_once('=').ok_or_else(bad)?;
            match key {
                "k" => classes = value.parse().map_err(|_| bad())?,
                "n" => count = Some(value.parse().map_err(|_| bad())?),
                "seed" => seed = value.parse().map_err(|_| bad())?,
                "noise" => noise = value.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        Ok(DataSource::Synth {
            classes,
            count: count.unwrap_or(classes * DEFAULT_SYNTH_PER_CLASS),
            seed,
            noise,
        })
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Dir(p) | DataSource::Cache(p) => write!(f, "{}", p.display()),
            DataSource::Synth {
                classes,
                count,
                seed,
                noise,
            } => write!(f, "synth:k={classes},n={count},seed={seed},noise={noise}"),
        }
    }
}

impl DataSource {
    /// Loads or generates the full dataset. `classes` is required for
    /// directory trees and checked against caches.
    pub fn load(&self, classes: Option<usize>, channels: usize) -> Result<Dataset> {
        let data = match self {
            DataSource::Dir(root) => {
                let k = classes.ok_or_else(|| {
                    Error::DatasetLoad(format!("class count needed to load {}", root.display()))
                })?;
                load_image_dir(root, k, &LoadOptions { channels, permissive: false })
            }
            DataSource::Cache(path) => read_cache(path),
            DataSource::Synth {
                classes: k,
                count,
                seed,
                noise,
            } => synth::generate(&SynthOptions {
                classes: *k,
                count: *count,
                seed: *seed,
                noise: *noise,
                jitter: 1.0,
                channels,
            }),
        }
        .map_err(|e| match e {
            e @ (Error::MissingClassDir(_) | Error::UnreadableImage { .. } | Error::DatasetLoad(_)) => e,
            e => Error::DatasetLoad(format!("{self}: {e}")),
        })?;
        if let Some(k) = classes {
            if data.classes() != k {
                return Err(Error::DatasetLoad(format!("{self} has {} classes, expected {k}", data.classes())));
            }
        }
        Ok(data)
    }
}

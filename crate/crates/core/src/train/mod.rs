//! SGD training, evaluation and experiment orchestration.

pub mod manifest;
pub mod metrics;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{build_named, save_checkpoint, ArchitectureSpec, Gradients, Model, OutputGrad};
use crate::data::{split, DataSource, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::layers::{softmax_cross_entropy, Mode};
use crate::tensor::{first_argmax, Tensor};

pub use manifest::RunManifest;
pub use metrics::{EpochRow, MetricsLog};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "run.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Independent sub-seed for `purpose` (and an index such as the epoch).
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest is 32 bytes"))
}

/// Step decay: the rate is multiplied by `factor` at each milestone epoch (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub factor: f64,
    pub milestones: Vec<usize>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            factor: 0.1,
            milestones: vec![150, 200],
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        base * self.factor.powi(passed as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Builder name (see [`crate::arch::ARCHITECTURES`]); ignored when `spec` is set.
    pub architecture: String,
    /// Spec file to train instead of a named builder.
    pub spec: Option<PathBuf>,
    /// Use the narrow toy configuration of the named builder.
    pub toy: bool,
    /// Directory, `.chds` cache, or `synth:k=..,n=..,seed=..`.
    pub data: String,
    /// Class count; required for directory data.
    pub classes: Option<usize>,
    pub channels: usize,
    /// Training samples before the validation carve-out; default ¾ of the data.
    pub train_count: Option<usize>,
    /// Test samples; default all samples not used for training.
    pub test_count: Option<usize>,
    pub validation_fraction: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            architecture: "allconv".into(),
            spec: None,
            toy: false,
            data: "synth:k=10".into(),
            classes: None,
            channels: 3,
            train_count: None,
            test_count: None,
            validation_fraction: 0.1,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 250,
            lr_decay: LrSchedule::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.lr_decay.factor > 0.0 && self.lr_decay.factor.is_finite()) {
            return fail(format!("decay factor must be positive, got {}", self.lr_decay.factor));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_decay.rate(self.learning_rate, epoch)
    }
}

/// Momentum buffers, one per learnable tensor.
#[derive(Debug, Clone)]
pub struct Sgd {
    velocity: Vec<Vec<Tensor>>,
}

impl Sgd {
    pub fn new(model: &Model) -> Self {
        Sgd {
            velocity: model
                .params()
                .iter()
                .map(|p| p.learnables().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect())
                .collect(),
        }
    }

    pub fn velocity(&self) -> &[Vec<Tensor>] {
        &self.velocity
    }
}

/// `v ← momentum·v − lr·g; p ← p + v`, elementwise.
pub fn momentum_update(param: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    for ((p, v), g) in param.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

/// One momentum-SGD update with the learning rate scheduled for `epoch`.
pub fn sgd_step(model: &mut Model, opt: &mut Sgd, grads: &Gradients, config: &TrainConfig, epoch: usize) -> Result<()> {
    let lr = config.lr_at(epoch);
    if grads.nodes.len() != opt.velocity.len() {
        return Err(Error::TapeMismatch("gradients do not match the optimizer state".into()));
    }
    for (i, g) in grads.nodes.iter().enumerate() {
        if !g.iter().all(Tensor::is_finite) {
            return Err(Error::NonFiniteGradient {
                node: model.spec().nodes[i].id.clone(),
            });
        }
    }
    for ((params, vel), g) in model.params_mut().iter_mut().zip(&mut opt.velocity).zip(&grads.nodes) {
        let params = params.learnables_mut();
        if params.len() != g.len() || vel.len() != g.len() {
            return Err(Error::TapeMismatch("gradients do not match the model parameters".into()));
        }
        for ((p, v), g) in params.into_iter().zip(vel.iter_mut()).zip(g) {
            if p.shape() != g.shape() {
                return Err(Error::TapeMismatch(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            momentum_update(p.data_mut(), v.data_mut(), g.data(), lr, config.momentum);
        }
    }
    Ok(())
}

/// Mean loss and gradients of one train-mode pass over a batch.
pub fn loss_and_gradients(model: &mut Model, images: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
    let (_, tape) = model.forward(images, Mode::Train)?;
    let logits = model.logits(&tape)?;
    let n = labels.len();
    let logits = logits.clone().reshape(&[n, model.classes()])?;
    let out = softmax_cross_entropy(&logits, labels)?;
    let grads = model.backward(&tape, OutputGrad::Logits(&out.grad_logits))?;
    Ok((out.loss, grads))
}

/// One pass over `data` in an order shuffled by the epoch's derived seed.
/// Returns the sample-weighted mean training loss.
pub fn train_epoch(model: &mut Model, opt: &mut Sgd, data: &Dataset, config: &TrainConfig, epoch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "shuffle", epoch as u64));
    order.shuffle(&mut rng);
    let mut total = 0.0;
    for chunk in order.chunks(config.batch_size) {
        let (images, labels) = data.batch(chunk)?;
        let (loss, grads) = loss_and_gradients(model, &images, &labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        sgd_step(model, opt, &grads, config, epoch)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

const EVAL_BATCH: usize = 64;

/// Eval-mode class probabilities for every sample, `N×K`.
pub fn predict(model: &Model, data: &Dataset) -> Result<Tensor> {
    let k = model.classes();
    let mut out = Vec::with_capacity(data.len() * k);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (images, _) = data.batch(chunk)?;
        out.extend_from_slice(model.predict(&images)?.data());
    }
    Tensor::new(vec![data.len(), k], out)
}

/// Argmax class (first index on ties) of each sample.
pub fn predict_labels(model: &Model, data: &Dataset) -> Result<Vec<usize>> {
    let k = model.classes();
    Ok(predict(model, data)?.data().chunks(k).map(first_argmax).collect())
}

/// Fraction of samples whose predicted class equals the label.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&label) = data.labels().iter().find(|&&l| l >= model.classes()) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: model.classes(),
        });
    }
    let predicted = predict_labels(model, data)?;
    let correct = predicted.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub metrics: MetricsLog,
    pub model: Model,
    pub manifest: RunManifest,
    /// Directory the artifacts were written to, if any.
    pub out_dir: Option<PathBuf>,
}

/// Spec for a config: the spec file if given, otherwise the named builder.
pub fn resolve_spec(config: &TrainConfig, classes: usize) -> Result<(ArchitectureSpec, String)> {
    let spec = match &config.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            ArchitectureSpec::parse(&text)?
        }
        None => build_named(&config.architecture, classes, config.toy)?,
    };
    if spec.classes != classes {
        return Err(Error::InvalidConfig(format!(
            "spec `{}` has {} classes but the data has {classes}",
            spec.name, spec.classes
        )));
    }
    let text = spec.to_text();
    Ok((spec, text))
}

/// Loads and splits the configured data into (train, validation, test).
pub fn prepare_data(config: &TrainConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let source: DataSource = config.data.parse()?;
    let full = source.load(config.classes, config.channels)?;
    let spec = SplitSpec {
        train_count: config.train_count.unwrap_or(full.len() * 3 / 4),
        validation_fraction: config.validation_fraction,
        test_count: config.test_count,
        seed: derive_seed(config.seed, "split", 0),
    };
    let parts = split(&full, &spec)?;
    if parts.0.is_empty() || parts.2.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "split leaves {} training and {} test samples; both must be non-empty",
            parts.0.len(),
            parts.2.len()
        )));
    }
    Ok(parts)
}

/// Full protocol: build, train `epochs` epochs (validation accuracy after
/// each), then test. With `out_root`, writes metrics, manifest and a
/// checkpoint into `out_root/<run id>`. `on_epoch` sees each row as it lands.
pub fn run_experiment(
    config: &TrainConfig,
    out_root: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochRow),
) -> Result<TrainReport> {
    config.validate()?;
    let (train, val, test) = prepare_data(config)?;
    let (spec, spec_text) = resolve_spec(config, train.classes())?;
    let mut model = Model::init(spec, derive_seed(config.seed, "init", 0))?;
    let mut opt = Sgd::new(&model);
    let mut rows = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let train_loss = train_epoch(&mut model, &mut opt, &train, config, epoch)?;
        let val_acc = if val.is_empty() { None } else { Some(evaluate(&model, &val)?) };
        let row = EpochRow {
            epoch: epoch + 1,
            train_loss,
            val_acc,
            epoch_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        rows.push(row);
    }
    let metrics = MetricsLog {
        rows,
        test_acc: evaluate(&model, &test)?,
        total_params: model.param_count(),
    };
    let manifest = RunManifest::new("train", config, &spec_text, &train, &val, &test)?;
    let out_dir = match out_root {
        Some(root) => {
            let dir = root.join(&manifest.run_id);
            fs::create_dir_all(&dir)?;
            fs::write(dir.join(METRICS_FILE), metrics.to_csv())?;
            fs::write(dir.join(MANIFEST_FILE), manifest.to_json()?)?;
            save_checkpoint(&model, &dir.join(CHECKPOINT_DIR))?;
            Some(dir)
        }
        None => None,
    };
    Ok(TrainReport {
        metrics,
        model,
        manifest,
        out_dir,
    })
}

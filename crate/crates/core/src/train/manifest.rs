//! Run manifest: the resolved config, spec and dataset hashes, seed and
//! tool version of one run. Contains no timestamps, so identical runs
//! produce identical manifests.

use serde::{Deserialize, Serialize};

use crate::arch::checkpoint::sha256_hex;
use crate::data::{Dataset, DatasetFingerprint};
use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub run_id: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub spec_sha256: String,
    pub train_data: DatasetFingerprint,
    pub validation_data: DatasetFingerprint,
    pub test_data: DatasetFingerprint,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &TrainConfig,
        spec_text: &str,
        train: &Dataset,
        val: &Dataset,
        test: &Dataset,
    ) -> Result<Self> {
        Ok(RunManifest {
            command: command.into(),
            run_id: run_id(config)?,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
            spec_sha256: sha256_hex(spec_text.as_bytes()),
            train_data: train.fingerprint(),
            validation_data: val.fingerprint(),
            test_data: test.fingerprint(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("run manifest: {e}")))
    }

    /// Recomputes the spec and dataset hashes and compares them with the recorded ones.
    pub fn verify(&self, spec_text: &str, train: &Dataset, val: &Dataset, test: &Dataset) -> Result<()> {
        let checks = [
            ("spec", self.spec_sha256 == sha256_hex(spec_text.as_bytes())),
            ("training data", self.train_data == train.fingerprint()),
            ("validation data", self.validation_data == val.fingerprint()),
            ("test data", self.test_data == test.fingerprint()),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((what, _)) => Err(Error::InvalidConfig(format!("{what} hash does not match run manifest"))),
            None => Ok(()),
        }
    }
}

/// `<arch>-s<seed>-<8 hex digits of the config hash>`.
pub fn run_id(config: &TrainConfig) -> Result<String> {
    let json = serde_json::to_string(config).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let name = match &config.spec {
        Some(p) => p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "spec".into()),
        None if config.toy => format!("{}-toy", config.architecture),
        None => config.architecture.clone(),
    };
    Ok(format!("{name}-s{}-{}", config.seed, &sha256_hex(json.as_bytes())[..8]))
}

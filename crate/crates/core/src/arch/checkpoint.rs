//! Model checkpoints: a directory holding the spec text, the weights as
//! little-endian `f64` tensors, and a JSON manifest with the weights' SHA-256.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::model::Model;
use crate::arch::spec::ArchitectureSpec;
use crate::error::{Error, Result};

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const SPEC_FILE: &str = "model.spec";
pub const MANIFEST_FILE: &str = "checkpoint.json";
const MAGIC: &[u8; 4] = b"GNW1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub architecture: String,
    pub fingerprint: String,
    pub weights_sha256: String,
    pub tensors: usize,
    pub params: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes every named state tensor: `name_len u32, name, rank u32, dims u64…, data f64…`.
pub fn encode_weights(model: &Model) -> Vec<u8> {
    let state = model.named_state();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(state.len() as u32).to_le_bytes());
    for (name, t) in state {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("weights file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }
}

/// Loads tensors produced by [`encode_weights`] into `model`, which must have
/// exactly the same named tensors and shapes.
pub fn decode_weights_into(model: &mut Model, bytes: &[u8]) -> Result<()> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a weights file (bad magic)".into()));
    }
    let count = r.u32()?;
    let mut state = model.named_state_mut();
    if count != state.len() {
        return Err(Error::Checkpoint(format!(
            "weights file has {count} tensors, model expects {}",
            state.len()
        )));
    }
    for (name, t) in state.iter_mut() {
        let len = r.u32()?;
        let got = String::from_utf8_lossy(r.take(len)?).into_owned();
        if &got != name {
            return Err(Error::Checkpoint(format!("expected tensor `{name}`, found `{got}`")));
        }
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if dims != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {dims:?}, model expects {:?}",
                t.shape()
            )));
        }
        let raw = r.take(t.len() * 8)?;
        for (v, c) in t.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let weights = encode_weights(model);
    let manifest = CheckpointManifest {
        architecture: model.spec().name.clone(),
        fingerprint: format!("{:016x}", model.fingerprint()),
        weights_sha256: sha256_hex(&weights),
        tensors: model.named_state().len(),
        params: model.param_count(),
    };
    fs::write(dir.join(SPEC_FILE), model.spec().to_text())?;
    fs::write(dir.join(WEIGHTS_FILE), &weights)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

/// Rebuilds the model from the stored spec and verifies the weights hash.
pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let read_text = |f: &str| {
        fs::read_to_string(dir.join(f)).map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(f).display())))
    };
    let manifest: CheckpointManifest =
        serde_json::from_str(&read_text(MANIFEST_FILE)?).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    let spec = ArchitectureSpec::parse(&read_text(SPEC_FILE)?)?;
    let weights = fs::read(dir.join(WEIGHTS_FILE))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(WEIGHTS_FILE).display())))?;
    let digest = sha256_hex(&weights);
    if digest != manifest.weights_sha256 {
        return Err(Error::Checkpoint(format!(
            "weights hash {digest} does not match manifest {}",
            manifest.weights_sha256
        )));
    }
    let mut model = Model::new(spec)?;
    if format!("{:016x}", model.fingerprint()) != manifest.fingerprint {
        return Err(Error::Checkpoint("spec does not match the manifest fingerprint".into()));
    }
    decode_weights_into(&mut model, &weights)?;
    Ok(model)
}

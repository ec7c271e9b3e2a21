//! CHDS dataset cache: `CHDS`, version `u16`, then `K, N, C` as `u32`,
//! `N` labels as `u16`, and the pixels as `f32`, all little-endian.
//! Pixels are stored in single precision, so a round trip is lossy.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, SplitTag, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CHDS";
pub const VERSION: u16 = 1;

pub fn encode(data: &Dataset) -> Result<Vec<u8>> {
    if data.classes() > u16::MAX as usize + 1 {
        return Err(Error::InvalidConfig("too many classes for a CHDS cache".into()));
    }
    let mut out = Vec::with_capacity(18 + 2 * data.len() + 4 * data.images().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [data.classes(), data.len(), data.channels()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &l in data.labels() {
        out.extend_from_slice(&(l as u16).to_le_bytes());
    }
    for &v in data.images().data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let bad = |msg: &str| Error::DatasetLoad(format!("CHDS cache: {msg}"));
    if bytes.len() < 18 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let (k, n, c) = (word(0), word(1), word(2));
    let pixels = n * c * IMAGE_SIZE * IMAGE_SIZE;
    let labels_at = 18;
    let data_at = labels_at + 2 * n;
    if bytes.len() != data_at + 4 * pixels {
        return Err(bad("length does not match header"));
    }
    let labels = bytes[labels_at..data_at]
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
        .collect();
    let data = bytes[data_at..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let images = Tensor::new(vec![n, c, IMAGE_SIZE, IMAGE_SIZE], data)?;
    Dataset::new(images, labels, k, SplitTag::Full)
}

pub fn write_cache(data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode(data)?)?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<Dataset> {
    decode(&fs::read(path)?)
}

//! Checkpoint directory layout and compatibility checks.

use glyphnet::arch::{build_named, load_checkpoint, save_checkpoint, Model, ARCHITECTURES};
use glyphnet::{Error, Tensor};

fn saved(name: &str) -> (Model, tempfile::TempDir) {
    let model = Model::init(build_named(name, 10, true).unwrap(), 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&model, dir.path()).unwrap();
    (model, dir)
}

#[test]
fn every_architecture_round_trips() {
    let x = Tensor::from_fn(&[2, 3, 32, 32], |i| ((i * 37) % 101) as f64 / 100.0);
    for name in ARCHITECTURES {
        let (model, dir) = saved(name);
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.params(), model.params(), "{name}");
        assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap(), "{name}");
    }
}

#[test]
fn weights_blob_layout() {
    let (model, dir) = saved("allconv");
    let bytes = std::fs::read(dir.path().join("weights.bin")).unwrap();
    assert_eq!(&bytes[..4], b"GNW1");
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    assert_eq!(count, model.named_learnables().len());
    let name_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    assert_eq!(&bytes[12..12 + name_len], b"c1.w");
    // Header per tensor plus 8 bytes per value.
    let values: usize = model.param_count() * 8;
    assert!(bytes.len() > values);
}

#[test]
fn manifest_records_counts() {
    let (model, dir) = saved("densenet");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(json["params"].as_u64().unwrap() as usize, model.param_count());
    assert_eq!(json["architecture"], "densenet");
    assert_eq!(json["fingerprint"], format!("{:016x}", model.fingerprint()));
}

#[test]
fn edited_spec_is_rejected() {
    let (_, dir) = saved("allconv");
    let path = dir.path().join("model.spec");
    let text = std::fs::read_to_string(&path).unwrap().replace("c6 conv out=32", "c6 conv out=40");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
}

#[test]
fn saving_is_deterministic() {
    let (_, a) = saved("resnet");
    let (_, b) = saved("resnet");
    for f in ["weights.bin", "model.spec", "checkpoint.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_directory() {
    assert!(matches!(load_checkpoint(std::path::Path::new("/nonexistent/ckpt")), Err(Error::Checkpoint(_))));
}

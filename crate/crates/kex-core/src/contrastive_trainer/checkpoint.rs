//! Self-describing model checkpoint: a JSON header (architecture descriptor,
//! training config, loss history, tensor index) followed by raw f64
//! little-endian parameter data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::nn::{ArchDescriptor, Net};
use super::{FeatureModel, TrainConfig};

const MAGIC: &[u8; 8] = b"KEXCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: ArchDescriptor,
    train_config: TrainConfig,
    history: Vec<f64>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

pub fn save(model: &FeatureModel, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    model.net.visit_params(|name, values| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            len: values.len(),
        });
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    });
    let header = Header {
        arch: model.net.arch.clone(),
        train_config: model.config.clone(),
        history: model.history.clone(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header_bytes.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<FeatureModel> {
    let bytes = fs::read(path)
        .map_err(|e| Error::init(format!("cannot read checkpoint {}: {e}", path.display())))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::init(format!(
            "{} is not a model checkpoint",
            path.display()
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::init("truncated checkpoint header"));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])?;
    let expected: usize = header.tensors.iter().map(|t| t.len * 8).sum();
    let payload = &bytes[12 + header_len..];
    if payload.len() != expected {
        return Err(Error::init(format!(
            "checkpoint payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }

    let mut net = Net::new(header.arch.clone(), 0);
    let names = net.tensor_names();
    let stored: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
    if names != stored {
        return Err(Error::init(format!(
            "checkpoint tensor layout mismatch: {stored:?}"
        )));
    }
    let mut offsets = std::collections::HashMap::new();
    let mut cursor = 0usize;
    for t in &header.tensors {
        offsets.insert(t.name.clone(), (cursor, t.len));
        cursor += t.len * 8;
    }
    let mut fill_err = None;
    net.visit_params_mut(|name, values| {
        let Some(&(offset, len)) = offsets.get(name) else {
            fill_err = Some(format!("missing tensor {name}"));
            return;
        };
        if len != values.len() {
            fill_err = Some(format!("tensor {name} has {len} values, expected {}", values.len()));
            return;
        }
        for (i, v) in values.iter_mut().enumerate() {
            let at = offset + i * 8;
            *v = f64::from_le_bytes(payload[at..at + 8].try_into().unwrap());
        }
    });
    if let Some(msg) = fill_err {
        return Err(Error::init(msg));
    }
    Ok(FeatureModel {
        net,
        config: header.train_config,
        history: header.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn checkpoint_round_trips_bit_identically() {
        let arch = ArchDescriptor::for_feature_dim(3, 16).unwrap();
        let model = FeatureModel {
            net: Net::new(arch, 13),
            config: TrainConfig::default(),
            history: vec![0.9, 0.5, 0.3],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&model, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.history, model.history);

        let img = Array3::from_shape_fn((16, 16, 3), |(y, x, c)| ((y + x + c) % 9) as f64 / 9.0);
        let batch = crate::transform_bank::ImageBatch::from_images(vec![img], vec!["a".into()]).unwrap();
        let f1 = model.extract_features(&batch).unwrap();
        let f2 = loaded.extract_features(&batch).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load(&path), Err(Error::Init(_))));
    }
}

//! Versioned, checksummed model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"DERMCKPT" | version: u32 | header_len: u32 | header (JSON) | f32 payload | sha256
//! ```
//!
//! The header records the backbone spec, head width, label space, trainable
//! groups and the name, group and shape of every tensor in payload order. The
//! trailing SHA-256 covers every preceding byte.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::{flat_values, ParamBuilder, ParamStore, Source};
use super::{build_head, AdaptedModel, BackboneSpec, Body, ParamGroup, ParamGroups};
use crate::error::{Error, Result};
use crate::labels::LabelSpace;

const MAGIC: &[u8; 8] = b"DERMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    backbone: BackboneSpec,
    head_classes: usize,
    label_space: Option<LabelSpace>,
    trainable: ParamGroups,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
}

pub fn save_checkpoint(m: &AdaptedModel, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> =
        Vec::with_capacity(4 * (m.body_params.num_values() + m.head_params.num_values()));
    for (group, store) in [
        (ParamGroup::Body, &m.body_params),
        (ParamGroup::Head, &m.head_params),
    ] {
        for (name, var, _) in store.iter() {
            entries.push(TensorEntry {
                name: name.to_string(),
                group,
                shape: var.dims().to_vec(),
            });
            for v in flat_values(var.as_tensor())? {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = serde_json::to_vec(&Header {
        backbone: m.spec,
        head_classes: m.head_classes(),
        label_space: m.label_space.clone(),
        trainable: m.trainable,
        tensors: entries,
    })?;

    let mut bytes = Vec::with_capacity(16 + header.len() + payload.len() + 32);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&payload);
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    Ok(())
}

/// Loads a checkpoint that must have been written for `spec.name`.
pub fn load_checkpoint(spec: &BackboneSpec, path: &Path) -> Result<AdaptedModel> {
    let m = open_checkpoint(path)?;
    if m.spec.name != spec.name {
        return Err(Error::Integrity(format!(
            "{} holds a {} model, expected {}",
            path.display(),
            m.spec.name,
            spec.name
        )));
    }
    Ok(m)
}

/// Loads a checkpoint for whatever backbone its header names.
pub fn open_checkpoint(path: &Path) -> Result<AdaptedModel> {
    let bytes = std::fs::read(path)?;
    let bad = |msg: &str| Error::Integrity(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (file is corrupt or truncated)"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!(
            "format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let header_len = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| bad("header length exceeds file size"))?;
    let header: Header =
        serde_json::from_slice(&body[16..header_end]).map_err(|e| bad(&format!("bad header: {e}")))?;

    let mut payload = &body[header_end..];
    let mut body_tensors = HashMap::new();
    let mut head_tensors = HashMap::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        if payload.len() < 4 * n {
            return Err(bad("payload shorter than the header describes"));
        }
        let values: Vec<f32> = payload[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        payload = &payload[4 * n..];
        let t = Tensor::from_vec(values, entry.shape.as_slice(), &Device::Cpu)?;
        match entry.group {
            ParamGroup::Body => body_tensors.insert(entry.name.clone(), t),
            ParamGroup::Head => head_tensors.insert(entry.name.clone(), t),
        };
    }
    if !payload.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }

    let pb = ParamBuilder::new(Source::Tensors(&body_tensors));
    let body_net = Body::build(header.backbone.name, &pb).map_err(|e| bad(&e.to_string()))?;
    let body_params: ParamStore = pb.finish();
    if body_params.len() != body_tensors.len() {
        return Err(bad("unexpected extra body tensors"));
    }
    let (head, head_params) = build_head(
        header.backbone.name.feature_dim(),
        header.head_classes,
        Source::Tensors(&head_tensors),
    )
    .map_err(|e| bad(&e.to_string()))?;
    let mut model = AdaptedModel {
        spec: header.backbone,
        body: body_net,
        body_params,
        head,
        head_params,
        trainable: header.trainable,
        label_space: None,
    };
    if let Some(ls) = header.label_space {
        model.set_label_space(ls).map_err(|e| bad(&e.to_string()))?;
    }
    Ok(model)
}

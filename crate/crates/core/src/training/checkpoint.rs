//! Checkpoint files.
//!
//! Layout: the 8-byte magic `XUMXCKPT`, a little-endian `u32` header length,
//! a JSON header, then every parameter tensor as little-endian `f32` in the
//! order the header lists them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::model::{InputNorm, Model, ModelParams, NetConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"XUMXCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model together with the settings needed to reuse it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub stft: StftConfig,
    pub sample_rate: u32,
    pub sources: Vec<String>,
    pub train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    net: NetConfig,
    stft: StftConfig,
    sample_rate: u32,
    sources: Vec<String>,
    train: TrainConfig,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    layers: Vec<LayerEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    name: String,
    shape: Vec<usize>,
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

pub fn encode_checkpoint(c: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        net: c.model.config,
        stft: c.stft,
        sample_rate: c.sample_rate,
        sources: c.sources.clone(),
        train: c.train.clone(),
        norm_mean: c.model.norm.mean.clone(),
        norm_std: c.model.norm.std.clone(),
        layers: c
            .model
            .params
            .layers()
            .iter()
            .map(|(name, t)| LayerEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| corrupt(format!("header encoding: {e}")))?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * c.model.params.tensors().map(Tensor::numel).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in c.model.params.tensors() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| corrupt(format!("header length {len} exceeds file size {}", bytes.len())))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(format!("corrupt header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "format version {} is not supported (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let layout = ModelParams::layout(&header.net);
    let matches = layout.len() == header.layers.len()
        && layout
            .iter()
            .zip(&header.layers)
            .all(|((n, s), l)| *n == l.name && *s == l.shape);
    if !matches {
        return Err(corrupt("layer list does not match the network configuration"));
    }
    let mut data = &bytes[12 + len..];
    let needed: usize = 4 * layout.iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>();
    if data.len() != needed {
        return Err(corrupt(format!(
            "expected {needed} bytes of parameters, found {}",
            data.len()
        )));
    }
    let mut layers = Vec::with_capacity(layout.len());
    for (name, shape) in layout {
        let n: usize = shape.iter().product();
        let (chunk, rest) = data.split_at(4 * n);
        data = rest;
        let values = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        layers.push((name, Tensor::new(shape, values)?));
    }
    let params = ModelParams::from_layers(layers);
    if !params.is_finite() {
        return Err(corrupt("non-finite parameter values"));
    }
    let norm = InputNorm {
        mean: header.norm_mean,
        std: header.norm_std,
    };
    if header.sources.len() != header.net.sources {
        return Err(corrupt("source names do not match the network configuration"));
    }
    Ok(Checkpoint {
        model: Model::new(header.net, params, norm).map_err(|e| corrupt(e.to_string()))?,
        stft: header.stft,
        sample_rate: header.sample_rate,
        sources: header.sources,
        train: header.train,
    })
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(c)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and rejects it unless its wiring matches `bridging`.
pub fn load_checkpoint_for(path: &Path, bridging: bool) -> Result<Checkpoint> {
    let c = load_checkpoint(path)?;
    if c.model.config.bridging != bridging {
        return Err(corrupt(format!(
            "checkpoint was trained with bridging={} but bridging={bridging} was requested",
            c.model.config.bridging
        )));
    }
    Ok(c)
}

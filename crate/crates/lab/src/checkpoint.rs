//! Checkpoint file: a magic line, the manifest length in bytes on the
//! second line, the JSON manifest, then every tensor as little-endian f32,
//! row-major, concatenated in manifest order. Tied projections store their
//! free `(a, b)` pairs, never the materialized weight.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crope_core::model::{build_model, Model, ModelConfig, QK_NORM_PLACEMENT};
use crope_core::{Scalar, Tensor};

use crate::config::mode_of;
use crate::error::{LabError, Result};

pub const MAGIC: &str = "CROPE-CKPT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rope_base: f64,
    pub mode: String,
    pub seed: u64,
    pub causal: bool,
}

impl From<&ModelConfig> for ModelDoc {
    fn from(c: &ModelConfig) -> Self {
        Self {
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_model: c.d_model,
            d_ff: c.d_ff,
            vocab_size: c.vocab_size,
            max_seq_len: c.max_seq_len,
            rope_base: c.rope_base,
            mode: c.mode.name().to_string(),
            seed: c.seed,
            causal: c.causal,
        }
    }
}

impl ModelDoc {
    pub fn to_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size: self.vocab_size,
            max_seq_len: self.max_seq_len,
            rope_base: self.rope_base,
            mode: mode_of(&self.mode)?,
            seed: self.seed,
            causal: self.causal,
        })
    }
}

/// Position of the data pipeline when the checkpoint was written.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
    pub tokens_seen: u64,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub precision: String,
    pub model: ModelDoc,
    pub qk_norm_placement: String,
    pub rng: RngState,
    pub tensors: Vec<TensorEntry>,
}

fn err(path: &Path, msg: impl Into<String>) -> LabError {
    LabError::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn encode<S: Scalar>(model: &Model<S>, rng: RngState) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for p in model.store.iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: payload.len() as u64,
        });
        for x in p.value.data() {
            payload.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        precision: "f32".into(),
        model: ModelDoc::from(&model.cfg),
        qk_norm_placement: QK_NORM_PLACEMENT.into(),
        rng,
        tensors,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let mut out = format!("{MAGIC}\n{}\n", json.len()).into_bytes();
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn save_checkpoint<S: Scalar>(model: &Model<S>, rng: RngState, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model, rng)).map_err(|e| LabError::io(path, e))
}

/// Decoded file contents, before any model is built.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn line<'a>(bytes: &'a [u8], at: &mut usize) -> Option<&'a str> {
    let rest = bytes.get(*at..)?;
    let end = rest.iter().position(|&b| b == b'\n')?;
    *at += end + 1;
    std::str::from_utf8(&rest[..end]).ok()
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut at = 0;
    if line(bytes, &mut at) != Some(MAGIC) {
        return Err(err(path, "not a checkpoint (bad magic line)"));
    }
    let len: usize = line(bytes, &mut at)
        .and_then(|l| l.parse().ok())
        .ok_or_else(|| err(path, "missing manifest length"))?;
    let json = bytes
        .get(at..at + len)
        .ok_or_else(|| err(path, "truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| err(path, format!("manifest: {e}")))?;
    if manifest.precision != "f32" {
        return Err(err(
            path,
            format!("unsupported precision {}", manifest.precision),
        ));
    }
    let payload = &bytes[at + len..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let n: usize = t.shape.iter().product();
        let start = t.offset as usize;
        let end = start + 4 * n;
        let raw = payload.get(start..end).ok_or_else(|| {
            err(
                path,
                format!(
                    "truncated payload: tensor {} needs bytes {start}..{end}, payload has {}",
                    t.name,
                    payload.len()
                ),
            )
        })?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(&t.shape, data)
            .map_err(|e| err(path, format!("tensor {}: {e}", t.name)))?;
        tensors.push((t.name.clone(), tensor));
    }
    Ok(Checkpoint { manifest, tensors })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode(&bytes, path)
}

impl Checkpoint {
    pub fn model_config(&self) -> Result<ModelConfig> {
        self.manifest.model.to_config()
    }

    /// Builds the stored model at precision `S`.
    pub fn into_model<S: Scalar>(self, path: &Path) -> Result<Model<S>> {
        let cfg = self.model_config()?;
        let mut model = build_model::<S>(&cfg)?;
        let values = self
            .tensors
            .into_iter()
            .map(|(n, t)| (n, t.cast()))
            .collect();
        model
            .load_values(values)
            .map_err(|e| err(path, e.to_string()))?;
        Ok(model)
    }
}

/// Loads a checkpoint for a model of configuration `want`; the mode is
/// compared first so a mode change reports as such rather than as a
/// shape error.
pub fn load_checkpoint_as<S: Scalar>(
    path: &Path,
    want: &ModelConfig,
) -> Result<(Model<S>, Manifest)> {
    let ck = read_checkpoint(path)?;
    let have = ck.model_config()?;
    if have.mode != want.mode {
        return Err(LabError::ModeMismatch {
            ckpt: have.mode.name().into(),
            want: want.mode.name().into(),
        });
    }
    let manifest = ck.manifest.clone();
    Ok((ck.into_model(path)?, manifest))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(Model<S>, Manifest)> {
    let ck = read_checkpoint(path)?;
    let manifest = ck.manifest.clone();
    Ok((ck.into_model(path)?, manifest))
}
